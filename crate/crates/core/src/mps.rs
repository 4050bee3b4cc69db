//! Random matrix product states built from site unitaries.
//!
//! A site unitary `U` on `C^d (x) C^D` becomes the core
//! `A_s = (<s| (x) 1_D) U (|0> (x) 1_D)`, i.e. `A_s[l, r] = U[s*D + l, r]`.
//! States are kept unnormalized; callers normalize explicitly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::haar::{sample_haar_unitary, RngStream};
use crate::tensor::{reduce_pure, DenseTensor, DensityMatrix, C64};

/// Default cap on the number of amplitudes (or work-tensor entries) that may
/// be held in memory at once.
pub const MATERIALIZE_CAP: usize = 1 << 24;

/// Tolerance used when checking that a site unitary is unitary.
pub const UNITARITY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    /// Bond vectors contracted at the two ends as `<left| A ... A |right>`.
    Open { left: Vec<C64>, right: Vec<C64> },
}

impl Boundary {
    /// Open boundary with both bond vectors equal to `|0>`.
    pub fn open_basis(bond_dim: usize) -> Self {
        let mut e0 = vec![C64::new(0.0, 0.0); bond_dim];
        e0[0] = C64::new(1.0, 0.0);
        Boundary::Open { left: e0.clone(), right: e0 }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, Boundary::Periodic)
    }
}

/// Parameters `(d, n, D, boundary)` of the RMPS ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmpsEnsembleConfig {
    pub d: usize,
    pub n: usize,
    pub bond_dim: usize,
    pub boundary: Boundary,
}

impl RmpsEnsembleConfig {
    pub fn periodic(d: usize, n: usize, bond_dim: usize) -> Result<Self> {
        let cfg = RmpsEnsembleConfig { d, n, bond_dim, boundary: Boundary::Periodic };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(LabError::invalid(format!("local dimension d = {} must be >= 2", self.d)));
        }
        if self.n < 1 {
            return Err(LabError::invalid("number of sites n must be >= 1"));
        }
        if self.bond_dim < 1 {
            return Err(LabError::invalid("bond dimension D must be >= 1"));
        }
        if let Boundary::Open { left, right } = &self.boundary {
            if left.len() != self.bond_dim || right.len() != self.bond_dim {
                return Err(LabError::invalid(format!(
                    "open boundary vectors have lengths {} and {}, expected D = {}",
                    left.len(),
                    right.len(),
                    self.bond_dim
                )));
            }
        }
        Ok(())
    }

    /// Dimension `dD` of each site unitary.
    pub fn unitary_dim(&self) -> usize {
        self.d * self.bond_dim
    }

    /// `d^n`, or `None` on overflow.
    pub fn hilbert_dim(&self) -> Option<usize> {
        checked_pow(self.d, self.n)
    }
}

pub(crate) fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    u32::try_from(exp).ok().and_then(|e| base.checked_pow(e))
}

/// One site tensor, stored as its `d` bond matrices `A_s` (each `D x D`).
#[derive(Clone, Debug, PartialEq)]
pub struct SiteCore {
    slices: Vec<DMatrix<C64>>,
}

impl SiteCore {
    pub fn from_slices(slices: Vec<DMatrix<C64>>) -> Result<Self> {
        let bond = slices.first().map(|m| m.nrows()).unwrap_or(0);
        if bond == 0 || slices.iter().any(|m| m.nrows() != bond || m.ncols() != bond) {
            return Err(LabError::invalid("core slices must be non-empty square matrices of equal size"));
        }
        Ok(SiteCore { slices })
    }

    pub fn physical_dim(&self) -> usize {
        self.slices.len()
    }

    pub fn bond_dim(&self) -> usize {
        self.slices[0].nrows()
    }

    pub fn slice(&self, s: usize) -> &DMatrix<C64> {
        &self.slices[s]
    }

    /// The core as a `(D, d, D)` tensor: (left bond, physical, right bond).
    pub fn tensor(&self) -> DenseTensor {
        let bond = self.bond_dim();
        DenseTensor::from_fn(vec![bond, self.physical_dim(), bond], |i| self.slices[i[1]][(i[0], i[2])])
    }

    /// `max |sum_s A_s^dag A_s - 1|`.
    pub fn isometry_deviation(&self) -> f64 {
        let bond = self.bond_dim();
        let mut acc = DMatrix::<C64>::zeros(bond, bond);
        for a in &self.slices {
            acc += a.adjoint() * a;
        }
        let mut worst = 0.0f64;
        for i in 0..bond {
            for j in 0..bond {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc[(i, j)] - C64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// `sum_s conj(B_s) (x) A_s` for `self = A`, `other = B`.
    fn mixed_transfer(&self, other: &SiteCore) -> DMatrix<C64> {
        let mut acc = other.slices[0].conjugate().kronecker(&self.slices[0]);
        for s in 1..self.physical_dim() {
            acc += other.slices[s].conjugate().kronecker(&self.slices[s]);
        }
        acc
    }
}

/// Slices the core `A_s[l, r] = U[s*D + l, r]` out of a `(dD) x (dD)` unitary.
pub fn core_from_unitary(u: &DMatrix<C64>, d: usize, bond_dim: usize) -> Result<SiteCore> {
    let q = d * bond_dim;
    if u.nrows() != q || u.ncols() != q {
        return Err(LabError::invalid(format!(
            "unitary is {}x{} but d*D = {q}",
            u.nrows(),
            u.ncols()
        )));
    }
    let dev = crate::haar::unitarity_deviation(u);
    if dev > UNITARITY_TOL {
        return Err(LabError::invalid(format!("matrix is not unitary (deviation {dev:e})")));
    }
    let slices = (0..d)
        .map(|s| u.view((s * bond_dim, 0), (bond_dim, bond_dim)).into_owned())
        .collect();
    SiteCore::from_slices(slices)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpsState {
    d: usize,
    bond_dim: usize,
    cores: Vec<SiteCore>,
    boundary: Boundary,
}

impl MpsState {
    pub fn new(cores: Vec<SiteCore>, boundary: Boundary) -> Result<Self> {
        let first = cores.first().ok_or_else(|| LabError::invalid("an MPS needs at least one site"))?;
        let (d, bond_dim) = (first.physical_dim(), first.bond_dim());
        if cores.iter().any(|c| c.physical_dim() != d || c.bond_dim() != bond_dim) {
            return Err(LabError::invalid("all cores must share d and D"));
        }
        let cfg = RmpsEnsembleConfig { d, n: cores.len(), bond_dim, boundary };
        cfg.validate()?;
        Ok(MpsState { d, bond_dim, cores, boundary: cfg.boundary })
    }

    /// Builds the state from one site unitary per site.
    pub fn from_unitaries(unitaries: &[DMatrix<C64>], d: usize, bond_dim: usize, boundary: Boundary) -> Result<Self> {
        let cores = unitaries
            .iter()
            .map(|u| core_from_unitary(u, d, bond_dim))
            .collect::<Result<Vec<_>>>()?;
        MpsState::new(cores, boundary)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.cores.len()
    }

    pub fn bond_dim(&self) -> usize {
        self.bond_dim
    }

    pub fn cores(&self) -> &[SiteCore] {
        &self.cores
    }

    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }

    fn left_start(&self) -> DMatrix<C64> {
        match &self.boundary {
            Boundary::Periodic => DMatrix::identity(self.bond_dim, self.bond_dim),
            Boundary::Open { left, .. } => DMatrix::from_fn(1, self.bond_dim, |_, j| left[j].conj()),
        }
    }

    fn close(&self, m: &DMatrix<C64>) -> C64 {
        match &self.boundary {
            Boundary::Periodic => m.trace(),
            Boundary::Open { right, .. } => (0..self.bond_dim).map(|j| m[(0, j)] * right[j]).sum(),
        }
    }

    /// Full amplitude vector, site 0 most significant. Fails above `cap` amplitudes.
    pub fn materialize_with_cap(&self, cap: usize) -> Result<Vec<C64>> {
        let total = checked_pow(self.d, self.n()).filter(|&t| t <= cap).ok_or(LabError::CapExceeded {
            what: "materializing the state vector",
            requested: checked_pow(self.d, self.n()).unwrap_or(usize::MAX),
            cap,
        })?;
        let mut out = Vec::with_capacity(total);
        let start = self.left_start();
        if self.n() == 0 {
            out.push(self.close(&start));
            return Ok(out);
        }
        // One prefix buffer per depth so the sweep allocates nothing per amplitude.
        let mut prefixes: Vec<DMatrix<C64>> = std::iter::once(start.clone())
            .chain((1..self.n()).map(|_| DMatrix::zeros(start.nrows(), self.bond_dim)))
            .collect();
        self.materialize_rec(0, &mut prefixes, &mut out);
        Ok(out)
    }

    pub fn materialize(&self) -> Result<Vec<C64>> {
        self.materialize_with_cap(MATERIALIZE_CAP)
    }

    /// The state as a rank-`n` tensor of shape `(d, ..., d)`.
    pub fn materialize_tensor(&self) -> Result<DenseTensor> {
        DenseTensor::new(vec![self.d; self.n()], self.materialize()?)
    }

    fn materialize_rec(&self, site: usize, prefixes: &mut [DMatrix<C64>], out: &mut Vec<C64>) {
        let last = self.n() - 1;
        if site == last {
            let prefix = &prefixes[site];
            for a in &self.cores[site].slices {
                out.push(self.close_product(prefix, a));
            }
            return;
        }
        for a in &self.cores[site].slices {
            let (head, tail) = prefixes.split_at_mut(site + 1);
            head[site].mul_to(a, &mut tail[0]);
            self.materialize_rec(site + 1, prefixes, out);
        }
    }

    /// `close(prefix * a)` without forming the product.
    fn close_product(&self, prefix: &DMatrix<C64>, a: &DMatrix<C64>) -> C64 {
        let bond = self.bond_dim;
        match &self.boundary {
            Boundary::Periodic => {
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..bond {
                    for j in 0..bond {
                        acc += prefix[(i, j)] * a[(j, i)];
                    }
                }
                acc
            }
            Boundary::Open { right, .. } => {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..bond {
                    let mut col = C64::new(0.0, 0.0);
                    for r in 0..bond {
                        col += a[(j, r)] * right[r];
                    }
                    acc += prefix[(0, j)] * col;
                }
                acc
            }
        }
    }

    /// `<other|self>` via mixed transfer matrices. Both states must share
    /// `d`, `n`, `D` and boundary kind.
    pub fn overlap(&self, other: &MpsState) -> Result<C64> {
        if self.d != other.d || self.n() != other.n() || self.bond_dim != other.bond_dim {
            return Err(LabError::invalid("overlap needs states of equal d, n and D"));
        }
        let dd = self.bond_dim * self.bond_dim;
        let mut acc = match (&other.boundary, &self.boundary) {
            (Boundary::Periodic, Boundary::Periodic) => DMatrix::<C64>::identity(dd, dd),
            (Boundary::Open { left: lp, .. }, Boundary::Open { left: lq, .. }) => {
                let bond = self.bond_dim;
                DMatrix::from_fn(1, dd, |_, j| lp[j / bond] * lq[j % bond].conj())
            }
            _ => return Err(LabError::invalid("overlap between periodic and open states")),
        };
        for (mine, theirs) in self.cores.iter().zip(&other.cores) {
            acc *= mine.mixed_transfer(theirs);
        }
        Ok(match (&other.boundary, &self.boundary) {
            (Boundary::Open { right: rp, .. }, Boundary::Open { right: rq, .. }) => {
                let bond = self.bond_dim;
                (0..dd).map(|j| acc[(0, j)] * rp[j / bond].conj() * rq[j % bond]).sum()
            }
            _ => acc.trace(),
        })
    }

    /// `<psi|psi>` through the transfer operator `sum_s conj(A_s) (x) A_s`,
    /// without materializing the state.
    pub fn norm_squared_tm(&self) -> f64 {
        self.overlap(self).expect("a state always matches itself").re
    }

    /// `<psi|psi>` by whichever of the transfer sweep or materialization is cheaper.
    pub fn norm_squared(&self) -> f64 {
        let bond = self.bond_dim as f64;
        let transfer_cost = self.n() as f64 * bond.powi(6);
        let materialize_cost = checked_pow(self.d, self.n())
            .filter(|&a| a <= MATERIALIZE_CAP)
            .map(|a| 2.0 * a as f64 * bond.powi(3));
        match materialize_cost {
            Some(mc) if mc < transfer_cost => self
                .materialize()
                .expect("size checked against the cap")
                .iter()
                .map(|c| c.norm_sqr())
                .sum(),
            _ => self.norm_squared_tm(),
        }
    }

    /// Unnormalized reduced density matrix on `subset` (sites in ascending
    /// order in the output).
    pub fn reduced_density(&self, subset: &[usize]) -> Result<DensityMatrix> {
        self.reduced_density_with_cap(subset, MATERIALIZE_CAP)
    }

    pub fn reduced_density_with_cap(&self, subset: &[usize], cap: usize) -> Result<DensityMatrix> {
        let n = self.n();
        let mut kept = vec![false; n];
        for &s in subset {
            if s >= n {
                return Err(LabError::AxisOutOfRange { axis: s, rank: n });
            }
            kept[s] = true;
        }
        let k = kept.iter().filter(|&&b| b).count();
        let out_dim = checked_pow(self.d, k).filter(|&x| x <= cap).ok_or(LabError::CapExceeded {
            what: "reduced density matrix dimension",
            requested: checked_pow(self.d, k).unwrap_or(usize::MAX),
            cap,
        })?;
        // Rough multiply-add counts of the two paths; the cheaper admissible one runs.
        let bond = self.bond_dim as f64;
        let transfer_cost = n as f64 * (self.d as f64).powi(2 * k as i32) * bond.powi(6);
        let amplitudes = checked_pow(self.d, n).filter(|&x| x <= cap);
        let materialize_cost = amplitudes.map(|a| 2.0 * a as f64 * bond.powi(3));
        let transfer_ok = checked_pow(self.d, 2 * k)
            .and_then(|x| x.checked_mul(self.bond_dim.pow(4)))
            .is_some_and(|work| work <= cap);
        match materialize_cost {
            Some(mc) if !transfer_ok || mc <= transfer_cost => {
                let psi = self.materialize_with_cap(cap)?;
                let keep: Vec<usize> = (0..n).filter(|&i| kept[i]).collect();
                reduce_pure(&psi, &vec![self.d; n], &keep)
            }
            _ if transfer_ok => Ok(self.reduced_density_transfer(&kept, out_dim)),
            _ => Err(LabError::CapExceeded {
                what: "reduced density matrix (transfer work and materialization)",
                requested: checked_pow(self.d, n).unwrap_or(usize::MAX),
                cap,
            }),
        }
    }

    /// Same as [`MpsState::reduced_density`] but always uses the transfer
    /// sweep, never materializing the state.
    pub fn reduced_density_transfer_path(&self, subset: &[usize]) -> Result<DensityMatrix> {
        let n = self.n();
        let mut kept = vec![false; n];
        for &s in subset {
            if s >= n {
                return Err(LabError::AxisOutOfRange { axis: s, rank: n });
            }
            kept[s] = true;
        }
        let k = kept.iter().filter(|&&b| b).count();
        let out_dim = checked_pow(self.d, k).filter(|&x| x <= MATERIALIZE_CAP).ok_or(LabError::CapExceeded {
            what: "reduced density matrix dimension",
            requested: checked_pow(self.d, k).unwrap_or(usize::MAX),
            cap: MATERIALIZE_CAP,
        })?;
        Ok(self.reduced_density_transfer(&kept, out_dim))
    }

    /// Sweeps the ring keeping one `D^2 x D^2` environment per pair of kept
    /// physical multi-indices.
    fn reduced_density_transfer(&self, kept: &[bool], out_dim: usize) -> DensityMatrix {
        let d = self.d;
        let bond = self.bond_dim;
        let dd = bond * bond;
        let mut envs: Vec<DMatrix<C64>> = vec![match &self.boundary {
            Boundary::Periodic => DMatrix::identity(dd, dd),
            Boundary::Open { left, .. } => DMatrix::from_fn(1, dd, |_, j| left[j / bond].conj() * left[j % bond]),
        }];
        for (site, core) in self.cores.iter().enumerate() {
            if kept[site] {
                let blocks: Vec<DMatrix<C64>> = (0..d * d)
                    .map(|ss| core.slices[ss / d].kronecker(&core.slices[ss % d].conjugate()))
                    .collect();
                envs = envs
                    .iter()
                    .flat_map(|env| blocks.iter().map(move |b| env * b))
                    .collect();
            } else {
                let mut e = core.slices[0].kronecker(&core.slices[0].conjugate());
                for s in 1..d {
                    e += core.slices[s].kronecker(&core.slices[s].conjugate());
                }
                for env in envs.iter_mut() {
                    *env = &*env * &e;
                }
            }
        }
        let close = |m: &DMatrix<C64>| -> C64 {
            match &self.boundary {
                Boundary::Periodic => m.trace(),
                Boundary::Open { right, .. } => (0..dd).map(|j| m[(0, j)] * right[j / bond] * right[j % bond].conj()).sum(),
            }
        };
        let k = kept.iter().filter(|&&b| b).count();
        let mut rho = vec![C64::new(0.0, 0.0); out_dim * out_dim];
        for (p, env) in envs.iter().enumerate() {
            // p holds the digits (s_1 s'_1 s_2 s'_2 ...) in base d, first kept site most significant.
            let (mut row, mut col) = (0usize, 0usize);
            let mut rem = p;
            let mut place = 1usize;
            for _ in 0..k {
                let pair = rem % (d * d);
                rem /= d * d;
                row += (pair / d) * place;
                col += (pair % d) * place;
                place *= d;
            }
            rho[row * out_dim + col] = close(env);
        }
        DensityMatrix::from_raw(out_dim, rho)
    }
}

/// Draws `n` i.i.d. Haar unitaries (site `j` from `stream.site_rng(j)`) and
/// assembles the state.
pub fn sample_rmps(cfg: &RmpsEnsembleConfig, stream: RngStream) -> Result<MpsState> {
    cfg.validate()?;
    let q = cfg.unitary_dim();
    let cores = (0..cfg.n)
        .map(|site| {
            let u = sample_haar_unitary(q, &mut stream.site_rng(site as u64))?;
            let slices = (0..cfg.d)
                .map(|s| u.view((s * cfg.bond_dim, 0), (cfg.bond_dim, cfg.bond_dim)).into_owned())
                .collect();
            SiteCore::from_slices(slices)
        })
        .collect::<Result<Vec<_>>>()?;
    MpsState::new(cores, cfg.boundary.clone())
}

/// The two deterministic constructions used to show the purity is not
/// Lipschitz-small.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    /// `U = 1_d (x) 1_D` on every site.
    AllIdentity,
    /// Identity everywhere except `U = 1_d (x) diag(e^{2 pi i j / D})` at `site`.
    TracelessPhase { site: usize },
}

pub fn fixture_state(kind: FixtureKind, cfg: &RmpsEnsembleConfig) -> Result<MpsState> {
    cfg.validate()?;
    let (d, bond) = (cfg.d, cfg.bond_dim);
    let q = d * bond;
    let identity = DMatrix::<C64>::identity(q, q);
    let mut unitaries = vec![identity; cfg.n];
    if let FixtureKind::TracelessPhase { site } = kind {
        if bond < 2 {
            return Err(LabError::invalid("the traceless phase fixture needs D >= 2 (a 1x1 phase cannot be traceless)"));
        }
        if site >= cfg.n {
            return Err(LabError::AxisOutOfRange { axis: site, rank: cfg.n });
        }
        let v: Vec<C64> = (0..bond)
            .map(|j| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / bond as f64))
            .collect();
        unitaries[site] = DMatrix::from_fn(q, q, |r, c| if r == c { v[r % bond] } else { C64::new(0.0, 0.0) });
    }
    MpsState::from_unitaries(&unitaries, d, bond, cfg.boundary.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::partial_trace;

    fn random_state(d: usize, n: usize, bond: usize, index: u64) -> MpsState {
        sample_rmps(&RmpsEnsembleConfig::periodic(d, n, bond).unwrap(), RngStream::new(11, index)).unwrap()
    }

    #[test]
    fn identity_unitary_slices() {
        let (d, bond) = (3, 2);
        let core = core_from_unitary(&DMatrix::identity(d * bond, d * bond), d, bond).unwrap();
        assert_eq!(core.slice(0), &DMatrix::<C64>::identity(bond, bond));
        for s in 1..d {
            assert!(core.slice(s).iter().all(|v| v.norm() == 0.0));
        }
    }

    #[test]
    fn core_entries_follow_index_bookkeeping() {
        let (d, bond) = (2, 3);
        let u = sample_haar_unitary(d * bond, &mut RngStream::new(5, 0).rng()).unwrap();
        let t = core_from_unitary(&u, d, bond).unwrap().tensor();
        assert_eq!(t.shape(), &[bond, d, bond]);
        for l in 0..bond {
            for s in 0..d {
                for r in 0..bond {
                    assert_eq!(t.get(&[l, s, r]), u[(s * bond + l, r)]);
                }
            }
        }
    }

    #[test]
    fn cores_are_left_isometries() {
        let mut rng = RngStream::new(2, 2).rng();
        for (d, bond) in [(2, 1), (2, 2), (3, 2), (2, 5)] {
            let u = sample_haar_unitary(d * bond, &mut rng).unwrap();
            assert!(core_from_unitary(&u, d, bond).unwrap().isometry_deviation() < 1e-12);
        }
    }

    #[test]
    fn non_unitary_or_misshaped_input_rejected() {
        assert!(core_from_unitary(&DMatrix::identity(5, 5), 2, 2).is_err());
        let mut m = DMatrix::<C64>::identity(4, 4);
        m[(0, 1)] = C64::new(0.5, 0.0);
        assert!(core_from_unitary(&m, 2, 2).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = random_state(2, 5, 3, 17);
        let b = random_state(2, 5, 3, 17);
        assert_eq!(a, b);
        for core in a.cores() {
            assert!(core.isometry_deviation() < 1e-10);
        }
    }

    #[test]
    fn single_site_amplitudes_are_traces() {
        let s = random_state(3, 1, 2, 4);
        let psi = s.materialize().unwrap();
        for (i, amp) in psi.iter().enumerate() {
            assert!((amp - s.cores()[0].slice(i).trace()).norm() < 1e-14);
        }
    }

    #[test]
    fn materialized_amplitudes_match_explicit_products() {
        let s = random_state(2, 3, 2, 8);
        let psi = s.materialize().unwrap();
        for (idx, amp) in psi.iter().enumerate() {
            let digits = [idx / 4, (idx / 2) % 2, idx % 2];
            let m = s.cores()[0].slice(digits[0]) * s.cores()[1].slice(digits[1]) * s.cores()[2].slice(digits[2]);
            assert!((amp - m.trace()).norm() < 1e-13);
        }
    }

    #[test]
    fn transfer_norm_matches_materialized_norm() {
        let s = random_state(2, 4, 3, 1);
        let psi = s.materialize().unwrap();
        let direct: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
        assert!((direct - s.norm_squared_tm()).abs() < 1e-10);
    }

    #[test]
    fn open_boundary_paths_agree() {
        let cfg = RmpsEnsembleConfig { d: 2, n: 4, bond_dim: 3, boundary: Boundary::open_basis(3) };
        let s = sample_rmps(&cfg, RngStream::new(3, 3)).unwrap();
        let psi = s.materialize().unwrap();
        let direct: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
        assert!((direct - s.norm_squared_tm()).abs() < 1e-10);
        let full = DensityMatrix::from_pure(&psi);
        let want = partial_trace(&full, &[2; 4], &[1, 2]).unwrap();
        let got = s.reduced_density(&[1, 2]).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-10);
        assert!(s.reduced_density_transfer_path(&[1, 2]).unwrap().max_abs_diff(&want) < 1e-10);
    }

    #[test]
    fn overlap_matches_materialized_inner_product() {
        let a = random_state(2, 4, 2, 30);
        let b = random_state(2, 4, 2, 31);
        let (pa, pb) = (a.materialize().unwrap(), b.materialize().unwrap());
        let direct: C64 = pa.iter().zip(&pb).map(|(x, y)| y.conj() * x).sum();
        assert!((a.overlap(&b).unwrap() - direct).norm() < 1e-12);
    }

    #[test]
    fn reduced_density_matches_partial_trace() {
        let s = random_state(2, 5, 2, 9);
        let full = DensityMatrix::from_pure(&s.materialize().unwrap());
        for subset in [vec![0], vec![2], vec![0, 2], vec![1, 3, 4], vec![0, 1, 2, 3, 4]] {
            let want = partial_trace(&full, &[2; 5], &subset).unwrap();
            let got = s.reduced_density(&subset).unwrap();
            assert!(got.max_abs_diff(&want) < 1e-10, "subset {subset:?}");
            assert!(got.hermiticity_deviation() < 1e-10);
            let swept = s.reduced_density_transfer_path(&subset).unwrap();
            assert!(swept.max_abs_diff(&want) < 1e-10, "transfer path, subset {subset:?}");
        }
        let all = s.reduced_density(&[0, 1, 2, 3, 4]).unwrap();
        assert!((all.trace() - s.norm_squared_tm()).abs() < 1e-10);
    }

    #[test]
    fn reduced_density_of_product_chain() {
        // D = 1: the state is a product of the first columns of each unitary.
        let s = random_state(2, 3, 1, 12);
        let rho = s.reduced_density(&[1]).unwrap();
        let col: Vec<C64> = (0..2).map(|i| s.cores()[1].slice(i)[(0, 0)]).collect();
        let want = DensityMatrix::from_pure(&col);
        assert!(rho.max_abs_diff(&want) < 1e-12);
        // The other sites are normalized columns, so tracing them out has weight one each.
        assert!((rho.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_identity_fixture() {
        let cfg = RmpsEnsembleConfig::periodic(2, 3, 3).unwrap();
        let s = fixture_state(FixtureKind::AllIdentity, &cfg).unwrap();
        let psi = s.materialize().unwrap();
        assert!((psi[0] - C64::new(3.0, 0.0)).norm() < 1e-14);
        assert!(psi[1..].iter().all(|a| a.norm() < 1e-14));
        assert!((s.norm_squared_tm() - 9.0).abs() < 1e-12);
        let rho = s.reduced_density(&[0, 2]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == 0 && j == 0 { 9.0 } else { 0.0 };
                assert!((rho.get(i, j) - C64::new(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn traceless_phase_fixture_vanishes() {
        let cfg = RmpsEnsembleConfig::periodic(2, 4, 3).unwrap();
        let s = fixture_state(FixtureKind::TracelessPhase { site: 2 }, &cfg).unwrap();
        assert!(s.materialize().unwrap().iter().all(|a| a.norm() < 1e-14));
        assert!(s.norm_squared_tm().abs() < 1e-14);
        for subset in [vec![2], vec![1, 2], vec![0, 2, 3]] {
            let rho = s.reduced_density(&subset).unwrap();
            assert!(rho.data().iter().all(|v| v.norm() < 1e-14));
            let swept = s.reduced_density_transfer_path(&subset).unwrap();
            assert!(swept.data().iter().all(|v| v.norm() < 1e-14));
        }
    }

    #[test]
    fn traceless_phase_needs_bond_two() {
        let cfg = RmpsEnsembleConfig::periodic(2, 3, 1).unwrap();
        assert!(fixture_state(FixtureKind::TracelessPhase { site: 0 }, &cfg).is_err());
    }

    #[test]
    fn materialization_cap_enforced() {
        let s = random_state(2, 6, 2, 0);
        assert!(matches!(s.materialize_with_cap(32), Err(LabError::CapExceeded { .. })));
        assert!(s.materialize_with_cap(64).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(RmpsEnsembleConfig::periodic(1, 3, 2).is_err());
        assert!(RmpsEnsembleConfig::periodic(2, 0, 2).is_err());
        assert!(RmpsEnsembleConfig::periodic(2, 3, 0).is_err());
        let bad = RmpsEnsembleConfig { d: 2, n: 2, bond_dim: 3, boundary: Boundary::open_basis(2) };
        assert!(bad.validate().is_err());
    }
}
