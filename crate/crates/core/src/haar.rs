//! Haar-random unitaries and reproducible random streams.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::tensor::C64;

/// Each site gets a disjoint window of 2^40 words inside its sample's stream.
const SITE_WINDOW_SHIFT: u32 = 40;

/// A counter-based random stream identified by `(seed, index)`.
///
/// Streams with different indices never overlap, and `site_rng(j)` hands out
/// disjoint sub-windows, so a draw depends only on `(seed, index, site)` and
/// not on which worker produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub index: u64,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        RngStream { seed, index }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index);
        rng
    }

    pub fn site_rng(&self, site: u64) -> ChaCha20Rng {
        let mut rng = self.rng();
        rng.set_word_pos(u128::from(site) << SITE_WINDOW_SHIFT);
        rng
    }
}

/// Complex standard normal with `E|z|^2 = 1`.
#[derive(Clone, Copy, Debug, Default)]
pub struct StandardComplexNormal;

impl Distribution<C64> for StandardComplexNormal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> C64 {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }
}

/// Draws a `q x q` unitary from the Haar measure.
///
/// A complex Ginibre matrix is QR-factorized and each column of Q is rotated
/// by the phase of the matching diagonal entry of R, which makes the
/// factorization unique and the output exactly Haar distributed.
pub fn sample_haar_unitary<R: Rng + ?Sized>(q: usize, rng: &mut R) -> Result<DMatrix<C64>> {
    if q == 0 {
        return Err(LabError::invalid("unitary dimension must be at least 1"));
    }
    let ginibre = DMatrix::from_fn(q, q, |_, _| StandardComplexNormal.sample(rng));
    let qr = ginibre.qr();
    let r = qr.r();
    let mut u = qr.q();
    for j in 0..q {
        let rjj = r[(j, j)];
        let norm = rjj.norm();
        if norm > 0.0 {
            let phase = rjj / norm;
            u.column_mut(j).iter_mut().for_each(|x| *x *= phase);
        }
    }
    Ok(u)
}

/// `max |U^dag U - 1|` over all entries.
pub fn unitarity_deviation(u: &DMatrix<C64>) -> f64 {
    let prod = u.adjoint() * u;
    let n = prod.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dimension_rejected() {
        let mut rng = RngStream::new(1, 0).rng();
        assert!(sample_haar_unitary(0, &mut rng).is_err());
    }

    #[test]
    fn samples_are_unitary() {
        let mut rng = RngStream::new(42, 3).rng();
        for q in 1..=12 {
            let u = sample_haar_unitary(q, &mut rng).unwrap();
            assert!(unitarity_deviation(&u) < 1e-12, "q = {q}");
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = sample_haar_unitary(4, &mut RngStream::new(9, 5).site_rng(2)).unwrap();
        let b = sample_haar_unitary(4, &mut RngStream::new(9, 5).site_rng(2)).unwrap();
        let c = sample_haar_unitary(4, &mut RngStream::new(9, 6).site_rng(2)).unwrap();
        let e = sample_haar_unitary(4, &mut RngStream::new(9, 5).site_rng(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, e);
    }
}
