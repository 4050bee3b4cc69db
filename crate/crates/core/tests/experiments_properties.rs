use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Distribution;
use rmps_core::experiments::{
    pairwise_sum, run_experiment, sample_disordered_chain, sample_gue_hamiltonian, sample_gue_matrix, single_site_operator,
    time_fluctuation_exact, EstimatorSummary, ExperimentKind, ExperimentReport, ExperimentSpec, HamiltonianKind, SpectralHamiltonian,
};
use rmps_core::haar::{sample_haar_unitary, unitarity_deviation, RngStream, StandardComplexNormal};
use rmps_core::mps::{sample_rmps, RmpsEnsembleConfig};
use rmps_core::statmech::Observable;
use rmps_core::tensor::{purity_of, C64};

fn random_unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<C64> {
    let v: Vec<C64> = (0..dim).map(|_| StandardComplexNormal.sample(rng)).collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / norm).collect()
}

#[test]
fn gue_draws_satisfy_the_gap_condition_first_time() {
    // Near-coincident gaps below 1e-9 of the range occur in about 0.2% of draws.
    let mut rng = RngStream::new(200, 0).rng();
    let mut first_try = 0;
    for _ in 0..100 {
        let h = SpectralHamiltonian::from_matrix_unchecked(&sample_gue_matrix(64, &mut rng)).unwrap();
        first_try += usize::from(h.gaps_verified());
        assert!(unitarity_deviation(h.eigenvectors()) < 1e-10);
        assert!(sample_gue_hamiltonian(64, &mut rng).unwrap().gaps_verified());
    }
    assert!(first_try >= 98, "{first_try} of 100 draws passed first time");
}

#[test]
fn spectrum_is_unitarily_invariant() {
    let mut rng = RngStream::new(201, 0).rng();
    let h = sample_gue_matrix(32, &mut rng);
    let v = sample_haar_unitary(32, &mut rng).unwrap();
    let a = SpectralHamiltonian::new(&h).unwrap();
    let b = SpectralHamiltonian::new(&(v.adjoint() * &h * &v)).unwrap();
    for (x, y) in a.eigenvalues().iter().zip(b.eigenvalues()) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn fluctuation_formula_matches_time_average() {
    let dim = 16;
    let mut rng = RngStream::new(202, 0).rng();
    let h = sample_gue_hamiltonian(dim, &mut rng).unwrap();
    let psi = random_unit_vector(dim, &mut rng);
    let g: DMatrix<C64> = DMatrix::from_fn(dim, dim, |_, _| StandardComplexNormal.sample(&mut rng));
    let a = (&g + g.adjoint()) * C64::new(0.5, 0.0);
    let exact = time_fluctuation_exact(&psi, &h, &a).unwrap();

    let e = h.eigenvalues();
    let min_gap = e.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let window = 1e3 / min_gap;
    let c = h.coefficients(&psi).unwrap();
    let ae = h.to_eigenbasis(&a).unwrap();
    let a_inf: f64 = (0..dim).map(|j| c[j].norm_sqr() * ae[(j, j)].re).sum();
    let times = 100_000;
    let mut acc = 0.0;
    for _ in 0..times {
        let t = rng.random_range(0.0..window);
        let phases: Vec<C64> = (0..dim).map(|j| c[j] * C64::from_polar(1.0, -e[j] * t)).collect();
        let mut val = C64::new(0.0, 0.0);
        for j in 0..dim {
            for k in 0..dim {
                val += phases[j].conj() * ae[(j, k)] * phases[k];
            }
        }
        acc += (val.re - a_inf).powi(2);
    }
    let averaged = acc / times as f64;
    assert!((averaged - exact).abs() <= 0.05 * exact, "time average {averaged} vs formula {exact}");
}

#[test]
fn fluctuation_vanishes_for_functions_of_h() {
    let dim = 16;
    let mut rng = RngStream::new(203, 0).rng();
    let h = sample_gue_hamiltonian(dim, &mut rng).unwrap();
    let v = h.eigenvectors();
    let f = v * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(dim, h.eigenvalues().iter().map(|x| C64::new(x.powi(2), 0.0)))) * v.adjoint();
    let psi = random_unit_vector(dim, &mut rng);
    assert!(time_fluctuation_exact(&psi, &h, &f).unwrap() < 1e-10);
}

#[test]
fn disordered_chain_passes_gap_check() {
    let mut rng = RngStream::new(204, 0).rng();
    for n in 3..=6 {
        let h = sample_disordered_chain(n, &mut rng).unwrap();
        assert!(h.gaps_verified());
        assert_eq!(h.dim(), 1 << n);
    }
}

#[test]
fn disordered_equilibration_satisfies_fluctuation_cap() {
    let mut spec = ExperimentSpec::new(ExperimentKind::Equilibration, 2, 5, 2, 200, 9);
    spec.hamiltonian = HamiltonianKind::DisorderedIsing;
    let report = run_experiment(&spec).unwrap();
    assert_eq!(report.record("fluctuation_bound_satisfied").unwrap().mean, 1.0);
}

fn strip_clock(mut r: ExperimentReport) -> ExperimentReport {
    r.wall_clock_seconds = 0.0;
    r
}

#[test]
fn reports_are_deterministic() {
    let mut spec = ExperimentSpec::new(ExperimentKind::Extensivity, 2, 4, 2, 500, 21);
    spec.k = Some(2);
    spec.sweep_n = vec![6];
    let a = strip_clock(run_experiment(&spec).unwrap());
    let b = strip_clock(run_experiment(&spec).unwrap());
    assert_eq!(a.records, b.records);
    assert_eq!(a.samples, b.samples);
}

#[test]
fn parallel_estimate_equals_sequential_loop() {
    let mut spec = ExperimentSpec::new(ExperimentKind::MaxEntropy, 2, 5, 3, 1000, 22);
    spec.l = Some(2);
    let report = run_experiment(&spec).unwrap();
    let cfg = RmpsEnsembleConfig::periodic(2, 5, 3).unwrap();
    let raw: Vec<f64> = (0..1000u64)
        .map(|i| purity_of(&sample_rmps(&cfg, RngStream::new(22, i)).unwrap().reduced_density(&[0, 1]).unwrap()))
        .collect();
    let seq = EstimatorSummary::from_values(&raw).unwrap();
    let rec = report.record("purity_raw").unwrap();
    assert_eq!(rec.mean.to_bits(), seq.mean.to_bits());
    assert_eq!(rec.stderr.to_bits(), seq.stderr.to_bits());
    assert_eq!(pairwise_sum(&raw) / 1000.0, seq.mean);
}

#[test]
fn raw_and_normalized_purity_close_at_ten_sites() {
    let mut spec = ExperimentSpec::new(ExperimentKind::MaxEntropy, 2, 10, 2, 10_000, 23);
    spec.l = Some(5);
    let report = run_experiment(&spec).unwrap();
    let raw = report.record("purity_raw").unwrap().mean;
    let normalized = report.record("purity_normalized").unwrap().mean;
    assert!((raw - normalized).abs() < 0.01 * raw, "raw {raw} vs normalized {normalized}");
}

#[test]
fn report_json_round_trips_bit_exactly() {
    let mut spec = ExperimentSpec::new(ExperimentKind::LocalObs, 2, 3, 2, 300, 24);
    spec.observable = Observable::pauli_z();
    let report = run_experiment(&spec).unwrap();
    let back: ExperimentReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back.records, report.records);
    assert_eq!(back.config, report.config);
    for (x, y) in back.records.iter().zip(&report.records) {
        assert_eq!(x.mean.to_bits(), y.mean.to_bits());
    }
}

#[test]
fn csv_has_documented_columns() {
    let mut spec = ExperimentSpec::new(ExperimentKind::NormConcentration, 2, 3, 2, 10, 25);
    spec.epsilon = Some(0.2);
    let report = run_experiment(&spec).unwrap();
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "sample_index,seed_index,quantity,raw_value,normalized_value");
    assert_eq!(lines.count(), 10);
}

#[test]
fn caps_are_checked_before_sampling() {
    let spec = ExperimentSpec::new(ExperimentKind::Equilibration, 2, 13, 2, 10, 0);
    assert!(matches!(run_experiment(&spec), Err(rmps_core::LabError::CapExceeded { .. })));
}

#[test]
fn single_site_operator_has_unit_norm_for_pauli_z() {
    let a = single_site_operator(&Observable::pauli_z(), 2, 4).unwrap();
    assert_eq!(a.nrows(), 16);
    assert!((a.iter().map(|z| z.norm_sqr()).sum::<f64>() - 16.0).abs() < 1e-12);
}
