//! Dense complex tensors and density matrices.
//!
//! Everything is stored row-major. Contractions take explicit axis pairs;
//! there is no broadcasting and no implicit index matching.

use num_complex::Complex64;

use crate::error::{LabError, Result};

pub type C64 = Complex64;

/// Absolute tolerance for Hermiticity and real-trace checks.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Tolerance on `tr rho = 1` for entropy functionals.
pub const NORMALIZATION_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for axis in (0..shape.len().saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * shape[axis + 1];
    }
    strides
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.contains(&0) {
            return Err(LabError::ShapeMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        DenseTensor {
            shape,
            data: vec![C64::new(0.0, 0.0); len],
        }
    }

    pub fn scalar(value: C64) -> Self {
        DenseTensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = DenseTensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = C64::new(1.0, 0.0);
        }
        t
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> C64) -> Self {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut index = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&index));
            for axis in (0..shape.len()).rev() {
                index[axis] += 1;
                if index[axis] < shape[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        DenseTensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(row_major_strides(&self.shape))
            .map(|(i, s)| i * s)
            .sum()
    }

    pub fn get(&self, index: &[usize]) -> C64 {
        self.data[self.offset(index)]
    }

    /// The single entry of a rank-0 tensor.
    pub fn scalar_value(&self) -> Option<C64> {
        (self.shape.is_empty()).then(|| self.data[0])
    }

    pub fn scale(&self, alpha: C64) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        DenseTensor::new(shape, self.data.clone())
    }

    /// Reorders axes so that output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        if axes.len() != rank {
            return Err(LabError::invalid(format!(
                "permutation of length {} for rank-{rank} tensor",
                axes.len()
            )));
        }
        let mut seen = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return Err(LabError::AxisOutOfRange { axis: a, rank });
            }
            if seen[a] {
                return Err(LabError::DuplicateAxis { axis: a });
            }
            seen[a] = true;
        }
        let in_strides = row_major_strides(&self.shape);
        let new_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let out = DenseTensor::from_fn(new_shape, |idx| {
            let off: usize = idx.iter().zip(&gather).map(|(i, s)| i * s).sum();
            self.data[off]
        });
        Ok(out)
    }
}

/// Contracts `a` and `b` over the listed `(axis of a, axis of b)` pairs.
///
/// The result carries the free axes of `a` (in order) followed by the free
/// axes of `b`.
pub fn contract(a: &DenseTensor, b: &DenseTensor, pairs: &[(usize, usize)]) -> Result<DenseTensor> {
    let mut used_a = vec![false; a.rank()];
    let mut used_b = vec![false; b.rank()];
    for &(ia, ib) in pairs {
        if ia >= a.rank() {
            return Err(LabError::AxisOutOfRange { axis: ia, rank: a.rank() });
        }
        if ib >= b.rank() {
            return Err(LabError::AxisOutOfRange { axis: ib, rank: b.rank() });
        }
        if used_a[ia] {
            return Err(LabError::DuplicateAxis { axis: ia });
        }
        if used_b[ib] {
            return Err(LabError::DuplicateAxis { axis: ib });
        }
        if a.shape[ia] != b.shape[ib] {
            return Err(LabError::AxisDimMismatch {
                axis_a: ia,
                dim_a: a.shape[ia],
                axis_b: ib,
                dim_b: b.shape[ib],
            });
        }
        used_a[ia] = true;
        used_b[ib] = true;
    }

    let free_a: Vec<usize> = (0..a.rank()).filter(|&i| !used_a[i]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&i| !used_b[i]).collect();

    let mut perm_a = free_a.clone();
    perm_a.extend(pairs.iter().map(|p| p.0));
    let mut perm_b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    perm_b.extend(free_b.iter().copied());

    let a_mat = a.permute(&perm_a)?;
    let b_mat = b.permute(&perm_b)?;

    let rows: usize = free_a.iter().map(|&i| a.shape[i]).product();
    let inner: usize = pairs.iter().map(|p| a.shape[p.0]).product();
    let cols: usize = free_b.iter().map(|&i| b.shape[i]).product();

    let mut out = vec![C64::new(0.0, 0.0); rows * cols];
    for r in 0..rows {
        let a_row = &a_mat.data[r * inner..(r + 1) * inner];
        let out_row = &mut out[r * cols..(r + 1) * cols];
        for (k, &av) in a_row.iter().enumerate() {
            if av == C64::new(0.0, 0.0) {
                continue;
            }
            let b_row = &b_mat.data[k * cols..(k + 1) * cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }

    let mut shape: Vec<usize> = free_a.iter().map(|&i| a.shape[i]).collect();
    shape.extend(free_b.iter().map(|&i| b.shape[i]));
    Ok(DenseTensor { shape, data: out })
}

/// A (possibly unnormalized) density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl DensityMatrix {
    /// Validates Hermiticity and a real trace, both to [`HERMITIAN_TOL`].
    pub fn new(dim: usize, data: Vec<C64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(LabError::ShapeMismatch {
                shape: vec![dim, dim],
                expected: dim * dim,
                actual: data.len(),
            });
        }
        let rho = DensityMatrix { dim, data };
        let deviation = rho.hermiticity_deviation();
        if deviation > HERMITIAN_TOL {
            return Err(LabError::NotHermitian { deviation });
        }
        let tr = rho.trace_complex();
        if tr.im.abs() > HERMITIAN_TOL {
            return Err(LabError::ComplexTrace { imag: tr.im });
        }
        Ok(rho)
    }

    /// `|psi><psi|` for an arbitrary (unnormalized) vector.
    pub fn from_pure(psi: &[C64]) -> Self {
        let dim = psi.len();
        let mut data = Vec::with_capacity(dim * dim);
        for a in psi {
            for b in psi {
                data.push(a * b.conj());
            }
        }
        DensityMatrix { dim, data }
    }

    pub(crate) fn from_raw(dim: usize, data: Vec<C64>) -> Self {
        debug_assert_eq!(data.len(), dim * dim);
        DensityMatrix { dim, data }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = C64::new(1.0 / dim as f64, 0.0);
        }
        DensityMatrix { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.dim + col]
    }

    fn trace_complex(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn trace(&self) -> f64 {
        self.trace_complex().re
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let d = (self.data[i * n + j] - self.data[j * n + i].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// `rho / tr rho`. Fails on a (numerically) traceless matrix.
    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace();
        if tr.abs() < f64::MIN_POSITIVE.sqrt() {
            return Err(LabError::Singular("normalizing a traceless density matrix".into()));
        }
        Ok(DensityMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v / tr).collect(),
        })
    }

    pub fn as_tensor(&self) -> DenseTensor {
        DenseTensor {
            shape: vec![self.dim, self.dim],
            data: self.data.clone(),
        }
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Flat offsets of every kept-site multi-index and every traced-site
/// multi-index, both in row-major order.
fn split_offsets(local_dims: &[usize], keep: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = local_dims.len();
    let mut kept = vec![false; n];
    for &k in keep {
        if k >= n {
            return Err(LabError::AxisOutOfRange { axis: k, rank: n });
        }
        kept[k] = true;
    }
    let strides = row_major_strides(local_dims);
    let offsets = |want: bool| -> Vec<usize> {
        let sites: Vec<usize> = (0..n).filter(|&i| kept[i] == want).collect();
        let dims: Vec<usize> = sites.iter().map(|&i| local_dims[i]).collect();
        let count: usize = dims.iter().product();
        let mut out = Vec::with_capacity(count);
        let mut idx = vec![0usize; sites.len()];
        for _ in 0..count {
            out.push(sites.iter().zip(&idx).map(|(&s, &i)| i * strides[s]).sum());
            for ax in (0..sites.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < dims[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        out
    };
    Ok((offsets(true), offsets(false)))
}

/// Traces out every site not listed in `keep`.
///
/// `local_dims[i]` is the dimension of site `i`; the kept sites appear in the
/// output in ascending site order.
pub fn partial_trace(rho: &DensityMatrix, local_dims: &[usize], keep: &[usize]) -> Result<DensityMatrix> {
    let total: usize = local_dims.iter().product();
    if total != rho.dim {
        return Err(LabError::invalid(format!(
            "local dimensions multiply to {total} but the matrix has dimension {}",
            rho.dim
        )));
    }
    let (keep_off, trace_off) = split_offsets(local_dims, keep)?;
    let dim_keep = keep_off.len();
    let mut out = vec![C64::new(0.0, 0.0); dim_keep * dim_keep];
    for (a, &ka) in keep_off.iter().enumerate() {
        for (b, &kb) in keep_off.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for &t in &trace_off {
                acc += rho.data[(ka + t) * rho.dim + kb + t];
            }
            out[a * dim_keep + b] = acc;
        }
    }
    Ok(DensityMatrix::from_raw(dim_keep, out))
}

/// Reduced density matrix of the pure state `|psi><psi|` without forming the
/// full projector; same conventions as [`partial_trace`].
pub fn reduce_pure(psi: &[C64], local_dims: &[usize], keep: &[usize]) -> Result<DensityMatrix> {
    let total: usize = local_dims.iter().product();
    if total != psi.len() {
        return Err(LabError::invalid(format!(
            "local dimensions multiply to {total} but the state has length {}",
            psi.len()
        )));
    }
    let (keep_off, trace_off) = split_offsets(local_dims, keep)?;
    let dim_keep = keep_off.len();
    // Psi[a, t] as a dense matrix, then rho = Psi Psi^dag.
    let m = nalgebra::DMatrix::from_fn(dim_keep, trace_off.len(), |a, t| psi[keep_off[a] + trace_off[t]]);
    let rho = &m * m.adjoint();
    Ok(DensityMatrix::from_raw(dim_keep, (0..dim_keep * dim_keep).map(|i| rho[(i / dim_keep, i % dim_keep)]).collect()))
}

/// `tr[rho^2]`, evaluated as the sum of `|rho_ij|^2`.
pub fn purity_of(rho: &DensityMatrix) -> f64 {
    rho.data.iter().map(|v| v.norm_sqr()).sum()
}

/// Renyi-2 entropy `-ln tr[rho^2]` in nats. Requires `tr rho = 1`.
pub fn renyi2(rho: &DensityMatrix) -> Result<f64> {
    let tr = rho.trace();
    if (tr - 1.0).abs() > NORMALIZATION_TOL {
        return Err(LabError::NotNormalized { trace: tr });
    }
    Ok(-purity_of(rho).ln())
}
