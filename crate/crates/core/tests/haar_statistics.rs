use rmps_core::haar::{sample_haar_unitary, unitarity_deviation, RngStream};
use rmps_core::tensor::C64;
use rmps_core::weingarten::{moment_operator, wg, PermutationS2};

/// Asymptotic Kolmogorov critical constant at level 0.01.
const KS_C_001: f64 = 1.6276;

fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut worst) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        worst = worst.max((i as f64 / na - j as f64 / nb).abs());
    }
    worst
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

#[test]
fn one_dimensional_haar_is_a_uniform_phase() {
    let mut rng = RngStream::new(101, 0).rng();
    let n = 10_000;
    let thetas: Vec<f64> = (0..n)
        .map(|_| {
            let u = sample_haar_unitary(1, &mut rng).unwrap();
            assert!((u[(0, 0)].norm() - 1.0).abs() < 1e-12);
            u[(0, 0)].arg().rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU
        })
        .collect();
    let stat = ks_uniform(thetas);
    assert!(stat < KS_C_001 / (n as f64).sqrt(), "KS statistic {stat}");
}

#[test]
fn left_multiplication_leaves_trace_statistics_unchanged() {
    let q: usize = 3;
    let mut vrng = RngStream::new(102, 99).rng();
    let v = sample_haar_unitary(q, &mut vrng).unwrap();
    let n = 10_000;
    let mut r1 = RngStream::new(102, 0).rng();
    let mut r2 = RngStream::new(102, 1).rng();
    let (mut plain_re, mut rotated_re, mut plain_abs, mut rotated_abs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let u1 = sample_haar_unitary(q, &mut r1).unwrap();
        let u2 = sample_haar_unitary(q, &mut r2).unwrap();
        let (t1, t2) = (u1.trace(), (&v * u2).trace());
        plain_re.push(t1.re);
        rotated_re.push(t2.re);
        plain_abs.push(t1.norm());
        rotated_abs.push(t2.norm());
    }
    let crit = KS_C_001 * (2.0 / n as f64).sqrt();
    assert!(ks_two_sample(plain_re, rotated_re) < crit);
    assert!(ks_two_sample(plain_abs, rotated_abs) < crit);
}

#[test]
fn every_sample_is_unitary() {
    let mut rng = RngStream::new(103, 0).rng();
    for q in 1..=12 {
        for _ in 0..20 {
            assert!(unitarity_deviation(&sample_haar_unitary(q, &mut rng).unwrap()) < 1e-12);
        }
    }
}

#[test]
fn second_absolute_moment_of_an_entry_is_one_over_q() {
    let mut rng = RngStream::new(104, 0).rng();
    let v: Vec<f64> = (0..100_000).map(|_| sample_haar_unitary(4, &mut rng).unwrap()[(0, 0)].norm_sqr()).collect();
    let (mean, se) = mean_and_stderr(&v);
    assert!((mean - 0.25).abs() <= 3.0 * se, "{mean} +- {se}");
}

#[test]
fn fourth_absolute_moment_of_an_entry() {
    for q in [2usize, 3, 4] {
        let mut rng = RngStream::new(105, q as u64).rng();
        let v: Vec<f64> = (0..100_000).map(|_| sample_haar_unitary(q, &mut rng).unwrap()[(0, 0)].norm_sqr().powi(2)).collect();
        let (mean, se) = mean_and_stderr(&v);
        let qf = q as f64;
        let want = 2.0 / (qf * (qf + 1.0));
        assert!((mean - want).abs() <= 3.0 * se, "q = {q}: {mean} +- {se} vs {want}");
        // The same value from the Weingarten sum.
        let m = moment_operator(q, 2).unwrap();
        assert!((m.entry(0, 0) - want).abs() < 1e-12);
    }
}

#[test]
fn first_moment_weingarten_matches_monte_carlo() {
    let q: usize = 3;
    let mut rng = RngStream::new(106, 0).rng();
    let samples = 100_000;
    // E U_ab conj(U_ce) = delta_ac delta_be Wg(1, q).
    let mut acc = vec![C64::new(0.0, 0.0); q.pow(4)];
    let mut diag = Vec::with_capacity(samples);
    for _ in 0..samples {
        let u = sample_haar_unitary(q, &mut rng).unwrap();
        for a in 0..q {
            for b in 0..q {
                for c in 0..q {
                    for e in 0..q {
                        acc[((a * q + b) * q + c) * q + e] += u[(a, b)] * u[(c, e)].conj();
                    }
                }
            }
        }
        diag.push(u[(1, 2)].norm_sqr());
    }
    let w = wg(PermutationS2::Identity, q, 1).unwrap();
    let (mean, se) = mean_and_stderr(&diag);
    assert!((mean - w).abs() <= 3.0 * se);
    let worst = (0..q.pow(4))
        .map(|i| {
            let (a, b, c, e) = (i / q.pow(3), i / q.pow(2) % q, i / q % q, i % q);
            let want = if a == c && b == e { w } else { 0.0 };
            (acc[i] / samples as f64 - C64::new(want, 0.0)).norm()
        })
        .fold(0.0, f64::max);
    assert!(worst < 5e-3, "max entry error {worst}");
}

#[test]
fn second_moment_operator_matches_monte_carlo() {
    let q: usize = 4;
    let dim = q.pow(4);
    let pairs = q * q;
    let samples = 100_000;
    let mut rng = RngStream::new(107, 0).rng();
    let mut acc = vec![C64::new(0.0, 0.0); dim * dim];
    let mut p = vec![C64::new(0.0, 0.0); pairs * pairs];
    for _ in 0..samples {
        let u = sample_haar_unitary(q, &mut rng).unwrap();
        // p[(a1 a2), (b1 b2)] = U_{a1 b1} U_{a2 b2}
        for a in 0..pairs {
            for b in 0..pairs {
                p[a * pairs + b] = u[(a / q, b / q)] * u[(a % q, b % q)];
            }
        }
        // Row (a1 a2 c1 c2), column (b1 b2 e1 e2).
        for a in 0..pairs {
            for c in 0..pairs {
                let row = (a * pairs + c) * dim;
                for b in 0..pairs {
                    let pab = p[a * pairs + b];
                    let out = &mut acc[row + b * pairs..row + b * pairs + pairs];
                    let pc = &p[c * pairs..c * pairs + pairs];
                    for (o, z) in out.iter_mut().zip(pc) {
                        *o += pab * z.conj();
                    }
                }
            }
        }
    }
    let m = moment_operator(q, 2).unwrap();
    let worst = (0..dim * dim)
        .map(|i| (acc[i] / samples as f64 - C64::new(m.as_slice()[i], 0.0)).norm())
        .fold(0.0, f64::max);
    assert!(worst < 5e-3, "max entry error {worst}");
}
