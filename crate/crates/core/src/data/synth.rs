use std::f64::consts::PI;
use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{load_idx, Example};
use crate::error::{arg_err, Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// Two interleaving half circles in 2-D (exactly two classes).
    TwoMoons,
    /// Isotropic Gaussian clusters with centers evenly spaced on a radius-3 circle.
    GaussianBlobs,
    /// Concentric circles of radius `(c + 1) / num_classes`.
    Circles,
    IdxFile { images: PathBuf, labels: PathBuf },
}

impl Generator {
    /// Parses the synthetic generator tags. `idx_file` needs paths, so it is
    /// built with [`Generator::IdxFile`] directly.
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "two_moons" => Ok(Generator::TwoMoons),
            "gaussian_blobs" => Ok(Generator::GaussianBlobs),
            "circles" => Ok(Generator::Circles),
            "idx_file" => arg_err("idx_file generator requires image and label paths"),
            other => arg_err(format!("unknown generator `{other}`")),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Generator::TwoMoons => "two_moons",
            Generator::GaussianBlobs => "gaussian_blobs",
            Generator::Circles => "circles",
            Generator::IdxFile { .. } => "idx_file",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub n_samples: usize,
    pub noise_sigma: f64,
    pub num_classes: usize,
    pub seed: u64,
    pub labels_per_class: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return arg_err("num_classes must be at least 2");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return arg_err("noise_sigma must be finite and >= 0");
        }
        if self.labels_per_class * self.num_classes > self.n_samples {
            return arg_err(format!(
                "labels_per_class {} x {} classes exceeds n_samples {}",
                self.labels_per_class, self.num_classes, self.n_samples
            ));
        }
        if self.generator == Generator::TwoMoons && self.num_classes != 2 {
            return arg_err("two_moons has exactly 2 classes");
        }
        Ok(())
    }
}

/// `(cos t, sin t)` as two separate libm calls. Without the barrier the
/// optimiser may fuse them into `sincos`, which can round differently by an
/// ulp, and whether it does depends on the build profile. Datasets must not.
fn cos_sin(t: f64) -> (f64, f64) {
    (std::hint::black_box(t).cos(), std::hint::black_box(t).sin())
}

/// Class sizes for a balanced dataset: they differ by at most one.
fn class_sizes(n: usize, classes: usize) -> Vec<usize> {
    (0..classes)
        .map(|c| n / classes + usize::from(c < n % classes))
        .collect()
}

/// Deterministic dataset for `(spec, seed)`; synthetic generators are class-balanced.
pub fn generate(spec: &DatasetSpec) -> Result<Vec<Example>> {
    spec.validate()?;
    if let Generator::IdxFile { images, labels } = &spec.generator {
        let mut all = load_idx(images, labels)?;
        if spec.n_samples > 0 && spec.n_samples < all.len() {
            all.truncate(spec.n_samples);
        }
        if let Some(e) = all.iter().find(|e| e.true_label >= spec.num_classes) {
            return Err(Error::Format(format!(
                "label {} exceeds num_classes {}",
                e.true_label, spec.num_classes
            )));
        }
        return Ok(all);
    }

    let mut rng = stream_rng(spec.seed, Stream::Generate);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let sizes = class_sizes(spec.n_samples, spec.num_classes);
    let k = spec.num_classes as f64;
    let mut out = Vec::with_capacity(spec.n_samples);
    for (class, &count) in sizes.iter().enumerate() {
        for _ in 0..count {
            let clean = match spec.generator {
                Generator::TwoMoons => {
                    let (c, s) = cos_sin(rng.random_range(0.0..=PI));
                    if class == 0 {
                        [c, s]
                    } else {
                        [1.0 - c, 0.5 - s]
                    }
                }
                Generator::GaussianBlobs => {
                    let (c, s) = cos_sin(2.0 * PI * class as f64 / k);
                    [3.0 * c, 3.0 * s]
                }
                Generator::Circles => {
                    let (c, s) = cos_sin(rng.random_range(0.0..2.0 * PI));
                    let r = (class + 1) as f64 / k;
                    [r * c, r * s]
                }
                Generator::IdxFile { .. } => unreachable!("handled above"),
            };
            let features = if spec.noise_sigma > 0.0 {
                clean.iter().map(|v| v + noise.sample(&mut rng)).collect()
            } else {
                clean.to_vec()
            };
            out.push(Example::labeled(features, class));
        }
    }
    Ok(out)
}
