//! Exact Haar moments for `t <= 2` and a brute-force evaluator of
//! second-moment RMPS functionals.
//!
//! The oracle here never uses the two-state spin-chain reduction: it builds
//! the dense moment operator `E U (x) U (x) conj(U) (x) conj(U)`, slices it
//! into per-site bond transfer tensors and contracts the ring. That keeps it
//! independent of [`crate::statmech`], which it is used to check.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::DMatrix;

use crate::error::{LabError, Result};
use crate::mps::checked_pow;
use crate::statmech::{SiteTag, SpinChainPattern};
use crate::tensor::C64;

/// Largest moment-operator side length `q^{2t}` that will be materialized.
pub const MOMENT_CAP: usize = 4096;

/// Largest `d^{2n}` for which the ensemble moment `E (|psi><psi|)^{(x)2}` is built.
pub const ENSEMBLE_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PermutationS2 {
    Identity,
    Swap,
}

impl PermutationS2 {
    pub const ALL: [PermutationS2; 2] = [PermutationS2::Identity, PermutationS2::Swap];

    pub fn compose(self, other: PermutationS2) -> PermutationS2 {
        if self == other {
            PermutationS2::Identity
        } else {
            PermutationS2::Swap
        }
    }

    pub fn inverse(self) -> PermutationS2 {
        self
    }

    pub fn cycles(self) -> u32 {
        match self {
            PermutationS2::Identity => 2,
            PermutationS2::Swap => 1,
        }
    }

    pub fn apply(self, slot: usize) -> usize {
        match self {
            PermutationS2::Identity => slot,
            PermutationS2::Swap => 1 - slot,
        }
    }
}

/// The unitary Weingarten function `Wg(sigma, q)` on `S_t`, `t in {1, 2}`.
pub fn wg(sigma: PermutationS2, q: usize, t: usize) -> Result<f64> {
    let qf = q as f64;
    match (t, sigma) {
        (1, PermutationS2::Identity) if q >= 1 => Ok(1.0 / qf),
        (1, PermutationS2::Swap) => Err(LabError::invalid("S_1 has no swap element")),
        (2, _) if q < 2 => Err(LabError::Singular("Wg on S_2 with q = 1 (q^2 - 1 = 0)".into())),
        (2, PermutationS2::Identity) => Ok(1.0 / (qf * qf - 1.0)),
        (2, PermutationS2::Swap) => Ok(-1.0 / (qf * (qf * qf - 1.0))),
        _ => Err(LabError::invalid(format!("moment order t = {t} unsupported (q = {q})"))),
    }
}

/// `|sigma> = (1 (x) r(sigma)) |Omega>` on `(C^q)^{(x)2t}`, real 0/1 entries.
///
/// Index layout for `t = 2` is `(a1, a2, c1, c2)` with `c_i = a_{sigma(i)}`.
pub fn permutation_state(sigma: PermutationS2, q: usize, t: usize) -> Result<Vec<f64>> {
    match t {
        1 => {
            if sigma != PermutationS2::Identity {
                return Err(LabError::invalid("S_1 has no swap element"));
            }
            let mut v = vec![0.0; q * q];
            for a in 0..q {
                v[a * q + a] = 1.0;
            }
            Ok(v)
        }
        2 => {
            let mut v = vec![0.0; q.pow(4)];
            for a1 in 0..q {
                for a2 in 0..q {
                    let a = [a1, a2];
                    let (c1, c2) = (a[sigma.apply(0)], a[sigma.apply(1)]);
                    v[((a1 * q + a2) * q + c1) * q + c2] = 1.0;
                }
            }
            Ok(v)
        }
        _ => Err(LabError::invalid(format!("moment order t = {t} unsupported"))),
    }
}

/// `E U^{(x)t} (x) conj(U)^{(x)t}` as a dense real `q^{2t} x q^{2t}` matrix.
///
/// Row index `(a_1..a_t, c_1..c_t)` and column index `(b_1..b_t, e_1..e_t)`
/// address `E prod U_{a_i b_i} prod conj(U_{c_i e_i})`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentOperator {
    q: usize,
    t: usize,
    dim: usize,
    matrix: Vec<f64>,
}

impl MomentOperator {
    fn build(q: usize, t: usize) -> Result<Self> {
        let dim = checked_pow(q, 2 * t).filter(|&x| x <= MOMENT_CAP).ok_or(LabError::CapExceeded {
            what: "moment operator side length q^(2t)",
            requested: checked_pow(q, 2 * t).unwrap_or(usize::MAX),
            cap: MOMENT_CAP,
        })?;
        let perms: &[PermutationS2] = if t == 1 { &PermutationS2::ALL[..1] } else { &PermutationS2::ALL };
        // Validates (q, t) before any allocation of the dense matrix.
        wg(PermutationS2::Identity, q, t)?;
        let states: Vec<Vec<f64>> = perms
            .iter()
            .map(|&s| permutation_state(s, q, t))
            .collect::<Result<_>>()?;
        let supports: Vec<Vec<usize>> = states
            .iter()
            .map(|v| v.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(i, _)| i).collect())
            .collect();
        let mut matrix = vec![0.0; dim * dim];
        for (i, &sigma) in perms.iter().enumerate() {
            for (j, &pi) in perms.iter().enumerate() {
                let w = wg(sigma.inverse().compose(pi), q, t)?;
                for &r in &supports[i] {
                    for &c in &supports[j] {
                        matrix[r * dim + c] += w;
                    }
                }
            }
        }
        Ok(MomentOperator { q, t, dim, matrix })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.dim + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.matrix
    }

    /// `max |M M - M|`. As a channel `X -> E U^{(x)t} X U^{dag (x)t}` acting on
    /// row-major `vec(X)`, the moment operator is exactly this matrix, so
    /// idempotence of the channel is idempotence of the matrix.
    pub fn idempotence_deviation(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for r in 0..n {
            let row = &self.matrix[r * n..(r + 1) * n];
            let mut acc = vec![0.0; n];
            for (k, &v) in row.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                for (a, &m) in acc.iter_mut().zip(&self.matrix[k * n..(k + 1) * n]) {
                    *a += v * m;
                }
            }
            for (a, &m) in acc.iter().zip(row) {
                worst = worst.max((a - m).abs());
            }
        }
        worst
    }
}

type MomentMemo = RwLock<HashMap<(usize, usize), Arc<MomentOperator>>>;

fn memo() -> &'static MomentMemo {
    static MEMO: OnceLock<MomentMemo> = OnceLock::new();
    MEMO.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Memoized moment operator for `(q, t)`.
pub fn moment_operator(q: usize, t: usize) -> Result<Arc<MomentOperator>> {
    if let Some(op) = memo().read().expect("moment memo poisoned").get(&(q, t)) {
        return Ok(Arc::clone(op));
    }
    let built = Arc::new(MomentOperator::build(q, t)?);
    let mut table = memo().write().expect("moment memo poisoned");
    Ok(Arc::clone(table.entry((q, t)).or_insert(built)))
}

/// Per-site physical weight `X[(t1 t2), (s1 s2)]` multiplying
/// `conj(psi_t1) conj(psi_t2) psi_s1 psi_s2`.
fn site_weight(tag: &SiteTag, d: usize) -> Result<DMatrix<C64>> {
    let dd = d * d;
    Ok(match tag {
        SiteTag::Blue => DMatrix::identity(dd, dd),
        SiteTag::Green => DMatrix::from_fn(dd, dd, |r, c| {
            let (t1, t2, s1, s2) = (r / d, r % d, c / d, c % d);
            if t1 == s2 && t2 == s1 {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }),
        SiteTag::Obs(o) => {
            let m = o.matrix();
            if m.nrows() != d {
                return Err(LabError::invalid(format!("observable is {}x{} but d = {d}", m.nrows(), m.ncols())));
            }
            m.kronecker(m)
        }
    })
}

fn check_oracle_dims(d: usize, bond: usize) -> Result<usize> {
    let q = d * bond;
    if d < 2 || bond < 1 {
        return Err(LabError::invalid("oracle needs d >= 2 and D >= 1"));
    }
    if q.pow(4) > MOMENT_CAP * MOMENT_CAP || q > 8 {
        return Err(LabError::CapExceeded { what: "oracle unitary dimension dD", requested: q, cap: 8 });
    }
    Ok(q)
}

/// `D^4 x D^4` bond transfer matrix of one site with physical weight `x`.
///
/// Bond index order is `(ket1, ket2, bra1, bra2)`.
fn site_bond_transfer(m: &MomentOperator, x: &DMatrix<C64>, d: usize, bond: usize) -> DMatrix<C64> {
    let q = d * bond;
    let b4 = bond.pow(4);
    let mut out = DMatrix::<C64>::zeros(b4, b4);
    let split = |i: usize| [i / bond.pow(3), (i / bond.pow(2)) % bond, (i / bond) % bond, i % bond];
    for li in 0..b4 {
        let l = split(li);
        for ri in 0..b4 {
            let r = split(ri);
            // Column physical index is fixed to |0>, so the column is just the bond part.
            let col = ((r[0] * q + r[1]) * q + r[2]) * q + r[3];
            let mut acc = C64::new(0.0, 0.0);
            for s1 in 0..d {
                for s2 in 0..d {
                    for t1 in 0..d {
                        for t2 in 0..d {
                            let w = x[(t1 * d + t2, s1 * d + s2)];
                            if w == C64::new(0.0, 0.0) {
                                continue;
                            }
                            let row = (((s1 * bond + l[0]) * q + s2 * bond + l[1]) * q + t1 * bond + l[2]) * q
                                + t2 * bond
                                + l[3];
                            let e = m.entry(row, col);
                            if e != 0.0 {
                                acc += w * e;
                            }
                        }
                    }
                }
            }
            out[(li, ri)] = acc;
        }
    }
    out
}

fn ring_trace(d: usize, bond: usize, weights: &[DMatrix<C64>]) -> Result<C64> {
    let q = check_oracle_dims(d, bond)?;
    let m = moment_operator(q, 2)?;
    let b4 = bond.pow(4);
    let mut acc = DMatrix::<C64>::identity(b4, b4);
    for x in weights {
        acc *= site_bond_transfer(&m, x, d, bond);
    }
    Ok(acc.trace())
}

/// Exact expectation of the second-moment functional encoded by `pattern`
/// over the periodic RMPS ensemble, by direct contraction with the dense
/// moment operator at every site.
///
/// Blue sites pair ket and bra copies directly, Green sites cross them and
/// `Obs(O)` sites insert `O (x) O`, so that the all-Blue ring is
/// `E <psi|psi>^2`, a Green block `A` gives `E tr[rho_A^2]` and one Obs site
/// gives `E <psi|O (x) 1|psi>^2`.
pub fn oracle_second_moment(pattern: &SpinChainPattern, d: usize, bond: usize) -> Result<f64> {
    let weights = pattern
        .sites()
        .iter()
        .map(|tag| site_weight(tag, d))
        .collect::<Result<Vec<_>>>()?;
    let value = ring_trace(d, bond, &weights)?;
    Ok(value.re)
}

/// `E |<psi|phi>|^4` for a product vector `phi = phi_1 (x) ... (x) phi_n`.
pub fn oracle_product_overlap_fourth_moment(phi_sites: &[Vec<C64>], d: usize, bond: usize) -> Result<f64> {
    if phi_sites.is_empty() {
        return Err(LabError::invalid("product vector needs at least one site"));
    }
    let weights = phi_sites
        .iter()
        .map(|phi| {
            if phi.len() != d {
                return Err(LabError::invalid("product factor length differs from d"));
            }
            let proj = DMatrix::from_fn(d, d, |r, c| phi[r] * phi[c].conj());
            Ok(proj.kronecker(&proj))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ring_trace(d, bond, &weights)?.re)
}

/// `E (|psi><psi|)^{(x)2}` over the periodic RMPS ensemble as a dense real
/// `d^{2n} x d^{2n}` matrix with entries `E psi_a psi_b conj(psi_c) conj(psi_e)`
/// at row `(a, b)`, column `(c, e)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleMoment {
    hilbert_dim: usize,
    data: Vec<f64>,
}

impl EnsembleMoment {
    pub fn hilbert_dim(&self) -> usize {
        self.hilbert_dim
    }

    pub fn side(&self) -> usize {
        self.hilbert_dim * self.hilbert_dim
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.side() + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// The Haar moment `2 P_sym / (N (N + 1))` on `N = hilbert_dim`.
    pub fn haar(hilbert_dim: usize) -> Result<Self> {
        let side = hilbert_dim.checked_mul(hilbert_dim).filter(|&s| s <= ENSEMBLE_CAP).ok_or(
            LabError::CapExceeded { what: "ensemble moment side d^(2n)", requested: hilbert_dim.saturating_mul(hilbert_dim), cap: ENSEMBLE_CAP },
        )?;
        let n = hilbert_dim;
        let scale = 1.0 / (n as f64 * (n as f64 + 1.0));
        let mut data = vec![0.0; side * side];
        for a in 0..n {
            for b in 0..n {
                let row = a * n + b;
                data[row * side + row] += scale;
                data[row * side + b * n + a] += scale;
            }
        }
        Ok(EnsembleMoment { hilbert_dim, data })
    }

    /// `tr[M^2] = sum M_xy^2` (M is real symmetric). For the RMPS ensemble this
    /// is the frame potential `E_{psi,phi} |<psi|phi>|^4` over independent pairs.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// `<phi phi| M |phi phi>`, i.e. `E |<psi|phi>|^4`.
    pub fn overlap_fourth_moment(&self, phi: &[C64]) -> Result<f64> {
        let n = self.hilbert_dim;
        if phi.len() != n {
            return Err(LabError::invalid(format!("phi has length {} but d^n = {n}", phi.len())));
        }
        let side = self.side();
        let pp: Vec<C64> = (0..side).map(|i| phi[i / n] * phi[i % n]).collect();
        let mut acc = C64::new(0.0, 0.0);
        for (r, x) in pp.iter().enumerate() {
            let row = &self.data[r * side..(r + 1) * side];
            let inner: C64 = row.iter().zip(&pp).filter(|(m, _)| **m != 0.0).map(|(m, y)| y * *m).sum();
            acc += x.conj() * inner;
        }
        Ok(acc.re)
    }

    /// `tr[M P_sym] = E <psi|psi>^2`.
    pub fn symmetric_trace(&self) -> f64 {
        let n = self.hilbert_dim;
        let side = self.side();
        let mut acc = 0.0;
        for a in 0..n {
            for b in 0..n {
                let row = a * n + b;
                acc += 0.5 * (self.data[row * side + row] + self.data[row * side + b * n + a]);
            }
        }
        acc
    }
}

/// Builds `E (|psi><psi|)^{(x)2}` for the periodic ensemble `(d, n, D)`.
pub fn ensemble_second_moment(d: usize, n: usize, bond: usize) -> Result<EnsembleMoment> {
    let q = check_oracle_dims(d, bond)?;
    if n == 0 {
        return Err(LabError::invalid("n must be >= 1"));
    }
    let hilbert_dim = checked_pow(d, n).ok_or(LabError::CapExceeded {
        what: "ensemble moment side d^(2n)",
        requested: usize::MAX,
        cap: ENSEMBLE_CAP,
    })?;
    let side = hilbert_dim.checked_mul(hilbert_dim).filter(|&s| s <= ENSEMBLE_CAP).ok_or(LabError::CapExceeded {
        what: "ensemble moment side d^(2n)",
        requested: hilbert_dim.saturating_mul(hilbert_dim),
        cap: ENSEMBLE_CAP,
    })?;
    let m = moment_operator(q, 2)?;
    let b4 = bond.pow(4);

    // Real D^4 x D^4 bond slice for each physical tuple (s1, s2, t1, t2); `None` when zero.
    let mut slices: Vec<(usize, [usize; 4], DMatrix<f64>)> = Vec::new();
    for tuple in 0..d.pow(4) {
        let p = [tuple / d.pow(3), (tuple / d.pow(2)) % d, (tuple / d) % d, tuple % d];
        let mut slice = DMatrix::<f64>::zeros(b4, b4);
        let mut nonzero = false;
        for li in 0..b4 {
            let l = [li / bond.pow(3), (li / bond.pow(2)) % bond, (li / bond) % bond, li % bond];
            let row = (((p[0] * bond + l[0]) * q + p[1] * bond + l[1]) * q + p[2] * bond + l[2]) * q + p[3] * bond + l[3];
            for ri in 0..b4 {
                let r = [ri / bond.pow(3), (ri / bond.pow(2)) % bond, (ri / bond) % bond, ri % bond];
                let col = ((r[0] * q + r[1]) * q + r[2]) * q + r[3];
                let v = m.entry(row, col);
                if v != 0.0 {
                    slice[(li, ri)] = v;
                    nonzero = true;
                }
            }
        }
        if nonzero {
            slices.push((tuple, p, slice));
        }
    }

    let mut data = vec![0.0; side * side];
    let mut digits = vec![[0usize; 4]; n];
    fn walk(
        site: usize,
        prefix: &DMatrix<f64>,
        digits: &mut [[usize; 4]],
        slices: &[(usize, [usize; 4], DMatrix<f64>)],
        data: &mut [f64],
        d: usize,
        hilbert_dim: usize,
    ) {
        let n = digits.len();
        for (_, p, slice) in slices {
            digits[site] = *p;
            if site + 1 == n {
                // tr[prefix * slice]
                let tr: f64 = prefix.iter().zip(slice.transpose().iter()).map(|(a, b)| a * b).sum();
                if tr == 0.0 {
                    continue;
                }
                let mut idx = [0usize; 4];
                for dg in digits.iter() {
                    for k in 0..4 {
                        idx[k] = idx[k] * d + dg[k];
                    }
                }
                let side = hilbert_dim * hilbert_dim;
                let row = idx[0] * hilbert_dim + idx[1];
                let col = idx[2] * hilbert_dim + idx[3];
                data[row * side + col] = tr;
            } else {
                let next = prefix * slice;
                if next.iter().all(|v| *v == 0.0) {
                    continue;
                }
                walk(site + 1, &next, digits, slices, data, d, hilbert_dim);
            }
        }
    }
    walk(0, &DMatrix::identity(b4, b4), &mut digits, &slices, &mut data, d, hilbert_dim);
    Ok(EnsembleMoment { hilbert_dim, data })
}

/// `E |<psi|phi>|^4` for an arbitrary vector `phi` of length `d^n`.
pub fn oracle_overlap_fourth_moment(phi: &[C64], d: usize, n: usize, bond: usize) -> Result<f64> {
    ensemble_second_moment(d, n, bond)?.overlap_fourth_moment(phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weingarten_values() {
        assert!((wg(PermutationS2::Identity, 4, 2).unwrap() - 1.0 / 15.0).abs() < 1e-15);
        assert!((wg(PermutationS2::Swap, 4, 2).unwrap() + 1.0 / 60.0).abs() < 1e-15);
        assert!((wg(PermutationS2::Identity, 3, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(wg(PermutationS2::Identity, 1, 2), Err(LabError::Singular(_))));
        assert!(wg(PermutationS2::Swap, 3, 1).is_err());
        assert!(wg(PermutationS2::Identity, 3, 3).is_err());
    }

    #[test]
    fn s2_group_table() {
        use PermutationS2::*;
        assert_eq!(Swap.compose(Swap), Identity);
        assert_eq!(Identity.compose(Swap), Swap);
        assert_eq!(Swap.inverse(), Swap);
    }

    #[test]
    fn permutation_state_overlaps() {
        for q in [2usize, 3, 5] {
            let id = permutation_state(PermutationS2::Identity, q, 2).unwrap();
            let sw = permutation_state(PermutationS2::Swap, q, 2).unwrap();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let qf = q as f64;
            assert_eq!(dot(&id, &id), qf * qf);
            assert_eq!(dot(&sw, &sw), qf * qf);
            assert_eq!(dot(&id, &sw), qf);
        }
    }

    #[test]
    fn first_moment_is_omega_projector() {
        let m = moment_operator(2, 1).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let omega = |i: usize| if i / 2 == i % 2 { 1.0 } else { 0.0 };
                assert!((m.entry(r, c) - omega(r) * omega(c) / 2.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn corner_entry_is_fourth_moment_of_one_entry() {
        for q in [2usize, 3, 4] {
            let m = moment_operator(q, 2).unwrap();
            let want = 2.0 / (q as f64 * (q as f64 + 1.0));
            assert!((m.entry(0, 0) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn idempotent_channel() {
        assert!(moment_operator(4, 2).unwrap().idempotence_deviation() < 1e-10);
        assert!(moment_operator(3, 1).unwrap().idempotence_deviation() < 1e-12);
    }

    #[test]
    fn cap_enforced() {
        assert!(matches!(moment_operator(9, 2), Err(LabError::CapExceeded { .. })));
    }

    #[test]
    fn memo_returns_same_operator() {
        let a = moment_operator(3, 2).unwrap();
        let b = moment_operator(3, 2).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn haar_moment_has_unit_symmetric_trace() {
        let h = EnsembleMoment::haar(4).unwrap();
        assert!((h.symmetric_trace() - 1.0).abs() < 1e-14);
        assert!((h.frobenius_sq() - 2.0 / 20.0).abs() < 1e-14);
    }
}
