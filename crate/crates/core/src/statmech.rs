//! Second moments of the periodic RMPS ensemble as classical spin chains over
//! `S_2 = {1, F}`, and the closed-form bounds built on them.
//!
//! Transfer matrices are indexed `(left spin, right spin)` with basis order
//! `(1, F)`, and a ring of sites evaluates to `tr[T_0 T_1 ... T_{n-1}]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::tensor::{C64, HERMITIAN_TOL};
use crate::weingarten::{ensemble_second_moment, wg, EnsembleMoment, PermutationS2};

/// `eta(x, y) = (x y^2 - x) / (x^2 y^2 - 1)`.
pub fn eta(x: f64, y: f64) -> Result<f64> {
    let den = x * x * y * y - 1.0;
    if (x * y).is_nan() || x * y <= 1.0 || den == 0.0 {
        return Err(LabError::Singular(format!("eta({x}, {y}) needs x*y > 1")));
    }
    Ok((x * y * y - x) / den)
}

fn eta_dd(d: usize, bond: usize) -> Result<(f64, f64)> {
    let (d, b) = (d as f64, bond as f64);
    Ok((eta(d, b)?, eta(b, d)?))
}

/// Decay rate `log((d - 1/(d D^2)) / ((1 + 1/D)(1 + 1/(d D))))`.
pub fn alpha(d: usize, bond: usize) -> f64 {
    let (d, b) = (d as f64, bond as f64);
    ((d - 1.0 / (d * b * b)) / ((1.0 + 1.0 / b) * (1.0 + 1.0 / (d * b)))).ln()
}

/// A Hermitian single-site observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    matrix: DMatrix<C64>,
}

impl Observable {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(LabError::invalid(format!(
                "observable must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let deviation = (&matrix - matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if deviation > HERMITIAN_TOL {
            return Err(LabError::NotHermitian { deviation });
        }
        Ok(Observable { matrix })
    }

    /// Builds `re + i im` from row-major rows; `im` defaults to zero.
    pub fn from_rows(re: &[Vec<f64>], im: Option<&[Vec<f64>]>) -> Result<Self> {
        let d = re.len();
        let ragged = |rows: &[Vec<f64>]| rows.len() != d || rows.iter().any(|r| r.len() != d);
        if d == 0 || ragged(re) || im.is_some_and(ragged) {
            return Err(LabError::invalid("observable rows must form a square d x d matrix"));
        }
        Self::new(DMatrix::from_fn(d, d, |r, c| C64::new(re[r][c], im.map_or(0.0, |m| m[r][c]))))
    }

    /// Real and imaginary parts as row-major rows.
    pub fn to_rows(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let d = self.dim();
        let part = |f: fn(&C64) -> f64| (0..d).map(|r| (0..d).map(|c| f(&self.matrix[(r, c)])).collect()).collect();
        (part(|z| z.re), part(|z| z.im))
    }

    pub fn pauli_z() -> Self {
        Self::traceless_z(2)
    }

    /// `diag(1, -1, 0, ..., 0)` on `C^d`; Pauli-Z for `d = 2`.
    pub fn traceless_z(d: usize) -> Self {
        let mut m = DMatrix::zeros(d.max(2), d.max(2));
        m[(0, 0)] = C64::new(1.0, 0.0);
        m[(1, 1)] = C64::new(-1.0, 0.0);
        Observable { matrix: m }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    /// `tr[O^2]`.
    pub fn trace_sq(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Operator norm `max |lambda|`.
    pub fn operator_norm(&self) -> f64 {
        self.matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SiteTag {
    Blue,
    Green,
    Obs(Observable),
}

/// Per-site coloring of a periodic second-moment chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinChainPattern {
    sites: Vec<SiteTag>,
}

impl SpinChainPattern {
    pub fn new(sites: Vec<SiteTag>) -> Result<Self> {
        if sites.is_empty() {
            return Err(LabError::invalid("a spin chain needs at least one site"));
        }
        Ok(SpinChainPattern { sites })
    }

    /// `E <psi|psi>^2`.
    pub fn all_blue(n: usize) -> Result<Self> {
        Self::new(vec![SiteTag::Blue; n])
    }

    /// `E tr[rho_A^2]` for an arbitrary subset `A` of sites.
    pub fn green_subset(n: usize, subset: &[usize]) -> Result<Self> {
        let mut sites = vec![SiteTag::Blue; n];
        for &s in subset {
            if s >= n {
                return Err(LabError::invalid(format!("site {s} out of range for n = {n}")));
            }
            sites[s] = SiteTag::Green;
        }
        Self::new(sites)
    }

    /// `A = {0, ..., l-1}`.
    pub fn green_block(n: usize, l: usize) -> Result<Self> {
        if l > n {
            return Err(LabError::invalid(format!("block length {l} exceeds n = {n}")));
        }
        Self::green_subset(n, &(0..l).collect::<Vec<_>>())
    }

    /// Green at sites `k-1, 2k-1, ...`: `n/k` isolated sites separated by
    /// `k-1` Blue sites.
    pub fn every_kth_green(n: usize, k: usize) -> Result<Self> {
        if k == 0 || !n.is_multiple_of(k) {
            return Err(LabError::invalid(format!("k = {k} must divide n = {n}")));
        }
        Self::green_subset(n, &(0..n / k).map(|j| j * k + k - 1).collect::<Vec<_>>())
    }

    /// `E <psi|O (x) 1|psi>^2` with `O` on site 0.
    pub fn single_obs(n: usize, observable: Observable) -> Result<Self> {
        let mut sites = vec![SiteTag::Blue; n];
        if let Some(first) = sites.first_mut() {
            *first = SiteTag::Obs(observable);
        }
        Self::new(sites)
    }

    pub fn sites(&self) -> &[SiteTag] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

/// 2x2 transfer matrix, `entries[left][right]`, basis `(1, F)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix2 {
    pub entries: [[f64; 2]; 2],
}

impl TransferMatrix2 {
    pub const IDENTITY: TransferMatrix2 = TransferMatrix2 { entries: [[1.0, 0.0], [0.0, 1.0]] };

    pub fn mul(&self, rhs: &TransferMatrix2) -> TransferMatrix2 {
        let (a, b) = (&self.entries, &rhs.entries);
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        TransferMatrix2 { entries: out }
    }

    pub fn pow(&self, mut e: usize) -> TransferMatrix2 {
        let mut base = *self;
        let mut acc = Self::IDENTITY;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }

    pub fn trace(&self) -> f64 {
        self.entries[0][0] + self.entries[1][1]
    }

    /// Eigenvalues of a matrix with real spectrum, ascending.
    pub fn real_eigenvalues(&self) -> Option<[f64; 2]> {
        let tr = self.trace();
        let det = self.entries[0][0] * self.entries[1][1] - self.entries[0][1] * self.entries[1][0];
        let disc = tr * tr - 4.0 * det;
        (disc >= 0.0).then(|| {
            let s = disc.sqrt();
            [(tr - s) / 2.0, (tr + s) / 2.0]
        })
    }

    pub fn max_abs_diff(&self, other: &TransferMatrix2) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((self.entries[i][j] - other.entries[i][j]).abs());
            }
        }
        worst
    }
}

/// Plaquette for a generic physical insertion with loop weights
/// `p_id = sum X delta_1` and `p_swap = sum X delta_F`.
fn plaquette(p_id: f64, p_swap: f64, d: usize, bond: usize) -> Result<TransferMatrix2> {
    let q = d * bond;
    let w0 = wg(PermutationS2::Identity, q, 2)?;
    let w1 = wg(PermutationS2::Swap, q, 2)?;
    let b = bond as f64;
    Ok(TransferMatrix2 {
        entries: [
            [b * p_id * w1 + b * b * p_swap * w0, b * b * p_id * w1 + b * p_swap * w0],
            [b * p_id * w0 + b * b * p_swap * w1, b * b * p_id * w0 + b * p_swap * w1],
        ],
    })
}

pub fn site_transfer_matrix(tag: &SiteTag, d: usize, bond: usize) -> Result<TransferMatrix2> {
    let (e, e_rev) = eta_dd(d, bond)?;
    match tag {
        SiteTag::Blue => Ok(TransferMatrix2 { entries: [[e, 0.0], [e_rev, 1.0]] }),
        SiteTag::Green => Ok(TransferMatrix2 { entries: [[1.0, e_rev], [0.0, e]] }),
        SiteTag::Obs(o) => {
            if o.dim() != d {
                return Err(LabError::invalid(format!("observable acts on C^{} but d = {d}", o.dim())));
            }
            let tr = o.trace();
            plaquette(tr * tr, o.trace_sq(), d, bond)
        }
    }
}

/// `tr[prod_i T_i]` in site order.
pub fn exact_chain_value(pattern: &SpinChainPattern, d: usize, bond: usize) -> Result<f64> {
    let mut acc = TransferMatrix2::IDENTITY;
    for tag in pattern.sites() {
        acc = acc.mul(&site_transfer_matrix(tag, d, bond)?);
    }
    Ok(acc.trace())
}

/// `E <psi|psi>^2 = 1 + eta(d, D)^n`.
pub fn norm_second_moment(d: usize, n: usize, bond: usize) -> Result<f64> {
    let (e, _) = eta_dd(d, bond)?;
    Ok(1.0 + e.powi(n as i32))
}

/// `E tr[rho_A^2]` for a contiguous block of `l` sites in a ring of `n`.
pub fn connected_purity_expectation(d: usize, n: usize, bond: usize, l: usize) -> Result<f64> {
    if l == 0 || l >= n {
        return Err(LabError::invalid(format!("block length l = {l} must satisfy 1 <= l <= n - 1 = {}", n.saturating_sub(1))));
    }
    exact_chain_value(&SpinChainPattern::green_block(n, l)?, d, bond)
}

/// Four-term closed form of [`connected_purity_expectation`].
pub fn connected_purity_closed_form(d: usize, n: usize, bond: usize, l: usize) -> Result<f64> {
    if l == 0 || l >= n {
        return Err(LabError::invalid(format!("block length l = {l} must satisfy 1 <= l <= n - 1")));
    }
    let (e, e_rev) = eta_dd(d, bond)?;
    let (a, b) = (e.powi(l as i32), e.powi((n - l) as i32));
    Ok(a + b + e_rev * e_rev * (1.0 - a) * (1.0 - b) / ((1.0 - e) * (1.0 - e)))
}

/// `d^-l + d^-(n-l) + 4 / D^2`.
pub fn connected_purity_bound(d: usize, n: usize, bond: usize, l: usize) -> f64 {
    let df = d as f64;
    df.powi(-(l as i32)) + df.powi(-((n - l) as i32)) + 4.0 / (bond as f64).powi(2)
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k < 2 || !n.is_multiple_of(k) {
        return Err(LabError::invalid(format!("k = {k} must be >= 2 and divide n = {n}")));
    }
    Ok(())
}

/// One Green site followed by `k - 1` Blue sites, `G B^{k-1}`.
pub fn block_transfer_matrix(d: usize, bond: usize, k: usize) -> Result<TransferMatrix2> {
    if k < 1 {
        return Err(LabError::invalid("block length k must be >= 1"));
    }
    let g = site_transfer_matrix(&SiteTag::Green, d, bond)?;
    let b = site_transfer_matrix(&SiteTag::Blue, d, bond)?;
    Ok(g.mul(&b.pow(k - 1)))
}

/// Closed-form entries of [`block_transfer_matrix`].
pub fn block_transfer_closed_form(d: usize, bond: usize, k: usize) -> Result<TransferMatrix2> {
    if k < 1 {
        return Err(LabError::invalid("block length k must be >= 1"));
    }
    let (e, e_rev) = eta_dd(d, bond)?;
    let ek = e.powi(k as i32 - 1);
    let geo = (1.0 - ek) / (1.0 - e);
    Ok(TransferMatrix2 { entries: [[ek + e_rev * e_rev * geo, e_rev], [e * e_rev * geo, e]] })
}

/// `E tr[rho_A^2]` with `A` every `k`-th site, `tr[(G B^{k-1})^{n/k}]`.
pub fn disconnected_purity_expectation(d: usize, n: usize, bond: usize, k: usize) -> Result<f64> {
    check_k(n, k)?;
    Ok(block_transfer_matrix(d, bond, k)?.pow(n / k).trace())
}

/// `(eta(d,D)^{k-1} + eta(D,d) + eta(d,D))^{n/k}`.
pub fn extensivity_purity_bound(d: usize, n: usize, bond: usize, k: usize) -> Result<f64> {
    check_k(n, k)?;
    let (e, e_rev) = eta_dd(d, bond)?;
    Ok((e.powi(k as i32 - 1) + e_rev + e).powi((n / k) as i32))
}

/// Upper bound on `E |<psi|phi>|^4` for any normalized `phi`:
/// `2 [(1 + 1/D)(1 + 1/(dD)) / (d^2 - 1/D^2)]^n`.
pub fn overlap_fourth_moment_bound(d: usize, n: usize, bond: usize) -> f64 {
    let (df, b) = (d as f64, bond as f64);
    2.0 * ((1.0 + 1.0 / b) * (1.0 + 1.0 / (df * b)) / (df * df - 1.0 / (b * b))).powi(n as i32)
}

/// `E (1/D_eff) <= d^n * overlap bound = 2 e^{-alpha n}`.
pub fn inverse_effective_dimension_bound(d: usize, n: usize, bond: usize) -> f64 {
    2.0 * (-alpha(d, bond) * n as f64).exp()
}

/// `Pr(|<psi|psi> - 1| >= eps) <= eps^-2 d^-n`.
pub fn norm_tail_bound(d: usize, n: usize, epsilon: f64) -> f64 {
    (d as f64).powi(-(n as i32)) / (epsilon * epsilon)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalObservableMoment {
    pub exact: f64,
    pub bound: f64,
}

/// `E <psi|O (x) 1|psi>^2` for traceless `O` and the bound `2 tr[O^2] / D^2`.
pub fn local_observable_second_moment(d: usize, n: usize, bond: usize, observable: &Observable) -> Result<LocalObservableMoment> {
    if n < 2 {
        return Err(LabError::invalid("local observable chain needs n >= 2"));
    }
    if observable.trace().abs() > HERMITIAN_TOL {
        return Err(LabError::invalid(format!(
            "observable has trace {}; subtract tr[O]/d times the identity first (the identity part only shifts <O> by a known constant)",
            observable.trace()
        )));
    }
    let exact = exact_chain_value(&SpinChainPattern::single_obs(n, observable.clone())?, d, bond)?;
    let bound = 2.0 * observable.trace_sq() / (bond as f64).powi(2);
    Ok(LocalObservableMoment { exact, bound })
}

/// Markov's inequality `Pr(X >= t) <= min(1, E X / t)`.
pub fn markov_tail(expectation_upper_bound: f64, threshold: f64) -> Result<f64> {
    if !(expectation_upper_bound > 0.0 && threshold > 0.0) {
        return Err(LabError::invalid("markov_tail needs positive arguments"));
    }
    Ok((expectation_upper_bound / threshold).min(1.0))
}

/// Four-state transfer matrix over `(pi_psi, pi_phi)` whose `n`-th power
/// traces to `E_{psi,phi} |<psi|phi>|^4` for two independent RMPS.
pub fn frame_potential_transfer(d: usize, bond: usize) -> Result<[[f64; 4]; 4]> {
    let q = d * bond;
    let perms = PermutationS2::ALL;
    let cyc = |base: usize, a: PermutationS2, b: PermutationS2| (base as f64).powi(a.compose(b).cycles() as i32);
    let mut t = [[0.0; 4]; 4];
    for (ai, &a) in perms.iter().enumerate() {
        for (api, &ap) in perms.iter().enumerate() {
            for (bi, &b) in perms.iter().enumerate() {
                for (bpi, &bp) in perms.iter().enumerate() {
                    let mut acc = 0.0;
                    for &s in &perms {
                        for &sp in &perms {
                            acc += cyc(bond, a, s)
                                * cyc(bond, ap, sp)
                                * cyc(d, s, sp)
                                * wg(s.compose(b), q, 2)?
                                * wg(sp.compose(bp), q, 2)?;
                        }
                    }
                    t[ai * 2 + api][bi * 2 + bpi] = acc;
                }
            }
        }
    }
    Ok(t)
}

/// Exact frame potential `F_2 = E_{psi,phi} |<psi|phi>|^4` of the raw ensemble.
pub fn frame_potential_2(d: usize, n: usize, bond: usize) -> Result<f64> {
    if n == 0 {
        return Err(LabError::invalid("n must be >= 1"));
    }
    let tm = frame_potential_transfer(d, bond)?;
    let t = DMatrix::from_fn(4, 4, |i, j| tm[i][j]);
    let mut acc = DMatrix::<f64>::identity(4, 4);
    for _ in 0..n {
        acc *= &t;
    }
    Ok(acc.trace())
}

/// Haar floor `2 / (N (N + 1))` with `N = d^n`.
pub fn haar_frame_potential(d: usize, n: usize) -> f64 {
    let big_n = (d as f64).powi(n as i32);
    2.0 / (big_n * (big_n + 1.0))
}

/// `||M - 2 P_sym / (N (N + 1))||_F^2` by direct entrywise subtraction.
pub fn design_distance_sq_of(moment: &EnsembleMoment) -> Result<f64> {
    let haar = EnsembleMoment::haar(moment.hilbert_dim())?;
    Ok(moment.as_slice().iter().zip(haar.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum())
}

pub fn design_distance_sq(d: usize, n: usize, bond: usize) -> Result<f64> {
    design_distance_sq_of(&ensemble_second_moment(d, n, bond)?)
}

/// Frobenius expansion of the distance for an ensemble that is not
/// normalized: `F_2 - c (2 E<psi|psi>^2 - 1)` with `c = 2/(N(N+1))`.
pub fn design_distance_sq_expansion(d: usize, n: usize, bond: usize) -> Result<f64> {
    let c = haar_frame_potential(d, n);
    Ok(frame_potential_2(d, n, bond)? - c * (2.0 * norm_second_moment(d, n, bond)? - 1.0))
}

/// Schmidt-rank floor `D^-cuts` on the normalized purity.
pub fn purity_floor(bond: usize, cuts: u32) -> f64 {
    (bond as f64).powi(-(cuts as i32))
}
