//! Grad-ReLU: per-layer routing of unsupervised gradients.

use crate::error::{arg_err, shape_err, Result};
use crate::netcore::{Affine, GradientSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_u: f64,
    pub w_ac: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_u: 1.0, w_ac: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_u", self.w_u), ("w_ac", self.w_ac)] {
            if !(v.is_finite() && v >= 0.0) {
                return arg_err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

fn add_scaled(dst: &mut [Affine], alpha: f64, src: &[Affine]) -> Result<()> {
    if alpha == 0.0 {
        return Ok(());
    }
    for (d, s) in dst.iter_mut().zip(src) {
        d.axpy(alpha, s)?;
    }
    Ok(())
}

fn check_theta(grads_s: &GradientSet, theta: &[Affine]) -> Result<()> {
    if grads_s.features.len() != theta.len()
        || grads_s
            .features
            .iter()
            .zip(theta)
            .any(|(a, b)| !a.same_shape(b))
    {
        return shape_err("Avg-Clustering feature gradients do not match the extractor");
    }
    Ok(())
}

/// Feature-extractor gradients take every loss,
/// `g_s + w_u·g_u + w_ac·g_ac`, while the classifier receives `g_s` alone.
/// The unsupervised classifier terms are dropped, not scaled, so the output
/// classifier gradient is a bit-exact copy of `grads_s.classifier`.
///
/// Zero weights skip their term entirely.
pub fn grad_relu_route(
    grads_s: &GradientSet,
    grads_u: &GradientSet,
    grads_ac_theta: &[Affine],
    weights: LossWeights,
) -> Result<GradientSet> {
    grads_s.check_compatible(grads_u)?;
    check_theta(grads_s, grads_ac_theta)?;
    let mut features = grads_s.features.clone();
    add_scaled(&mut features, weights.w_u, &grads_u.features)?;
    add_scaled(&mut features, weights.w_ac, grads_ac_theta)?;
    Ok(GradientSet {
        features,
        classifier: grads_s.classifier.clone(),
    })
}

/// Plain sum `∇L_s + w_u ∇L_u + w_ac ∇L_ac` without routing (used by the
/// baselines and the "Grad-ReLU off" ablation). `L_ac` has no `β` path, so
/// only its extractor gradient enters.
pub fn combine_unrouted(
    grads_s: &GradientSet,
    grads_u: &GradientSet,
    grads_ac_theta: &[Affine],
    weights: LossWeights,
) -> Result<GradientSet> {
    grads_s.check_compatible(grads_u)?;
    check_theta(grads_s, grads_ac_theta)?;
    let mut out = grads_s.clone();
    add_scaled(&mut out.features, weights.w_u, &grads_u.features)?;
    add_scaled(&mut out.features, weights.w_ac, grads_ac_theta)?;
    if weights.w_u != 0.0 {
        out.classifier.axpy(weights.w_u, &grads_u.classifier)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Activation, Network};
    use crate::rng::{stream_rng, Stream};

    fn random_grads(seed: u64) -> GradientSet {
        let mut rng = stream_rng(seed, Stream::Init);
        let n = Network::xavier(&[2, 3, 4], Activation::Tanh, 3, &mut rng).unwrap();
        GradientSet {
            features: n.extractor.layers().iter().map(|l| l.affine.clone()).collect(),
            classifier: n.classifier.clone(),
        }
    }

    #[test]
    fn zero_supervised_gives_exact_zero_classifier() {
        let mut s = random_grads(1);
        s.axpy(-1.0, &s.clone()).unwrap();
        let u = random_grads(2);
        let out = grad_relu_route(&s, &u, &u.features, LossWeights::default()).unwrap();
        assert!(out.classifier.is_zero());
    }

    #[test]
    fn zero_weights_pass_supervised_through() {
        let s = random_grads(1);
        let u = random_grads(2);
        let w = LossWeights { w_u: 0.0, w_ac: 0.0 };
        assert_eq!(grad_relu_route(&s, &u, &u.features, w).unwrap(), s);
        assert_eq!(combine_unrouted(&s, &u, &u.features, w).unwrap(), s);
    }

    #[test]
    fn unsupervised_features_contribute() {
        let s = random_grads(1);
        let u = random_grads(2);
        let zeros: Vec<_> = u.features.iter().map(Affine::zeros_like).collect();
        let w = LossWeights { w_u: 1.0, w_ac: 0.0 };
        let out = grad_relu_route(&s, &u, &zeros, w).unwrap();
        assert_ne!(out.features, s.features);
        assert_eq!(out.classifier, s.classifier);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = random_grads(1);
        let mut u = random_grads(2);
        u.classifier = Affine::zeros(2, 2);
        assert!(grad_relu_route(&s, &u, &s.features, LossWeights::default()).is_err());
        assert!(grad_relu_route(&s, &s, &s.features[..1], LossWeights::default()).is_err());
    }

    #[test]
    fn unrouted_classifier_takes_unsupervised_term() {
        let s = random_grads(1);
        let u = random_grads(2);
        let out = combine_unrouted(&s, &u, &u.features, LossWeights::default()).unwrap();
        let mut expected = s.classifier.clone();
        expected.axpy(1.0, &u.classifier).unwrap();
        assert_eq!(out.classifier, expected);
    }
}
