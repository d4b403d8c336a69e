use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg_err, Result};
use crate::netcore::Matrix;

/// Weak view `ω`: Gaussian jitter. Strong view `Ω`: larger jitter followed by
/// independent coordinate dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationSpec {
    pub weak_jitter_sigma: f64,
    pub strong_jitter_sigma: f64,
    pub strong_mask_prob: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            weak_jitter_sigma: 0.05,
            strong_jitter_sigma: 0.25,
            strong_mask_prob: 0.2,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.weak_jitter_sigma) || !ok(self.strong_jitter_sigma) {
            return arg_err("jitter sigmas must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.strong_mask_prob) {
            return arg_err("strong_mask_prob must lie in [0, 1]");
        }
        if self.strong_jitter_sigma < self.weak_jitter_sigma {
            return arg_err("strong jitter must be at least the weak jitter");
        }
        Ok(())
    }

    /// The same spec with `Ω := ω` (pseudo-label baseline).
    pub fn weak_as_strong(&self) -> Self {
        Self {
            weak_jitter_sigma: self.weak_jitter_sigma,
            strong_jitter_sigma: self.weak_jitter_sigma,
            strong_mask_prob: 0.0,
        }
    }
}

fn jitter<R: Rng + ?Sized>(x: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated finite, >= 0");
    for v in x {
        *v += normal.sample(rng);
    }
}

fn mask<R: Rng + ?Sized>(x: &mut [f64], prob: f64, rng: &mut R) {
    if prob == 0.0 {
        return;
    }
    for v in x {
        if rng.random::<f64>() < prob {
            *v = 0.0;
        }
    }
}

pub fn weak_augment<R: Rng + ?Sized>(x: &[f64], spec: &AugmentationSpec, rng: &mut R) -> Vec<f64> {
    let mut out = x.to_vec();
    jitter(&mut out, spec.weak_jitter_sigma, rng);
    out
}

pub fn strong_augment<R: Rng + ?Sized>(
    x: &[f64],
    spec: &AugmentationSpec,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = x.to_vec();
    jitter(&mut out, spec.strong_jitter_sigma, rng);
    mask(&mut out, spec.strong_mask_prob, rng);
    out
}

/// Row-wise [`weak_augment`].
pub fn weak_augment_batch<R: Rng + ?Sized>(
    x: &Matrix,
    spec: &AugmentationSpec,
    rng: &mut R,
) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        jitter(out.row_mut(r), spec.weak_jitter_sigma, rng);
    }
    out
}

/// Row-wise [`strong_augment`].
pub fn strong_augment_batch<R: Rng + ?Sized>(
    x: &Matrix,
    spec: &AugmentationSpec,
    rng: &mut R,
) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        jitter(row, spec.strong_jitter_sigma, rng);
        mask(row, spec.strong_mask_prob, rng);
    }
    out
}
