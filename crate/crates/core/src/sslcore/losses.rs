//! Cross-entropy losses `L_s`, `L_u` and `L_ac` with their analytic gradients.

use rand::Rng;

use super::PseudoBatch;
use crate::data::{strong_augment_batch, weak_augment_batch, AugmentationSpec, LabeledBatch};
use crate::error::{arg_err, shape_err, Result};
use crate::netcore::{Affine, Classifier, GradientSet, Matrix, Network};

/// Lower clamp applied to probabilities inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean cross-entropy of `probs` against class indices, and its gradient with
/// respect to the logits that produced `probs` through a softmax.
///
/// Rows whose target probability sits below [`PROB_FLOOR`] contribute a
/// constant `-ln(1e-12)` and therefore a zero gradient.
pub fn cross_entropy(probs: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    if probs.rows() != targets.len() {
        return shape_err(format!(
            "{} probability rows but {} targets",
            probs.rows(),
            targets.len()
        ));
    }
    let n = targets.len();
    let mut grad = Matrix::zeros(n, probs.cols());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= probs.cols() {
            return arg_err(format!("target class {t} out of range"));
        }
        let p = probs.row(r);
        let pt = p[t];
        total -= pt.clamp(PROB_FLOOR, 1.0).ln();
        if pt >= PROB_FLOOR {
            let g = grad.row_mut(r);
            for (j, (gj, &pj)) in g.iter_mut().zip(p).enumerate() {
                *gj = (pj - if j == t { 1.0 } else { 0.0 }) * inv_n;
            }
        }
    }
    Ok((total * inv_n, grad))
}

/// Cross-entropy of `net`'s extractor composed with `head` on fixed inputs.
/// The returned `classifier` gradient is with respect to `head`.
pub fn head_loss(
    net: &Network,
    head: &Classifier,
    inputs: &Matrix,
    targets: &[usize],
) -> Result<(f64, GradientSet)> {
    let pass = net.forward_with_head(head, inputs)?;
    let (loss, grad_logits) = cross_entropy(&pass.probs, targets)?;
    let grads = net.backward_with_head(head, &pass, &grad_logits)?;
    Ok((loss, grads))
}

/// `L_s`: mean cross-entropy on weak views of the labeled batch.
pub fn supervised_loss<R: Rng + ?Sized>(
    net: &Network,
    batch: &LabeledBatch,
    aug: &AugmentationSpec,
    rng: &mut R,
) -> Result<(f64, GradientSet)> {
    if batch.labels.is_empty() {
        return arg_err("labeled batch must not be empty");
    }
    let weak = weak_augment_batch(&batch.inputs, aug, rng);
    head_loss(net, &net.classifier, &weak, &batch.labels)
}

/// `L_u` on already-augmented inputs (one row per pseudo-label).
pub fn unsupervised_loss_on(
    net: &Network,
    strong_inputs: &Matrix,
    pseudo: &PseudoBatch,
) -> Result<(f64, GradientSet)> {
    if pseudo.is_empty() {
        return Ok((0.0, GradientSet::zeros_like(net)));
    }
    head_loss(net, &net.classifier, strong_inputs, &pseudo.pseudo_labels)
}

/// `L_u`: cross-entropy between predictions on strong views and the stored
/// pseudo-labels, averaged over `|D_τ|`. Zero with zero gradients when `D_τ`
/// is empty.
pub fn unsupervised_loss<R: Rng + ?Sized>(
    net: &Network,
    pseudo: &PseudoBatch,
    aug: &AugmentationSpec,
    rng: &mut R,
) -> Result<(f64, GradientSet)> {
    let strong = strong_augment_batch(&pseudo.inputs, aug, rng);
    unsupervised_loss_on(net, &strong, pseudo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvgClusteringLoss {
    pub value: f64,
    /// Gradient with respect to the feature extractor `Θ`.
    pub theta: Vec<Affine>,
    /// Gradient with respect to the averaged head `β̄`.
    pub beta_bar: Affine,
}

pub fn avg_clustering_loss_on(
    net: &Network,
    beta_bar: &Classifier,
    strong_inputs: &Matrix,
    pseudo: &PseudoBatch,
) -> Result<AvgClusteringLoss> {
    if !beta_bar.same_shape(&net.classifier) {
        return shape_err("averaged head does not match the live classifier");
    }
    if pseudo.is_empty() {
        return Ok(AvgClusteringLoss {
            value: 0.0,
            theta: net.extractor.zero_grads(),
            beta_bar: beta_bar.zeros_like(),
        });
    }
    let (value, g) = head_loss(net, beta_bar, strong_inputs, &pseudo.pseudo_labels)?;
    Ok(AvgClusteringLoss {
        value,
        theta: g.features,
        beta_bar: g.classifier,
    })
}

/// `L_ac`: the `L_u` functional form evaluated through `β̄` instead of `β`.
pub fn avg_clustering_loss<R: Rng + ?Sized>(
    net: &Network,
    beta_bar: &Classifier,
    pseudo: &PseudoBatch,
    aug: &AugmentationSpec,
    rng: &mut R,
) -> Result<AvgClusteringLoss> {
    let strong = strong_augment_batch(&pseudo.inputs, aug, rng);
    avg_clustering_loss_on(net, beta_bar, &strong, pseudo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::HiddenLabels;
    use crate::netcore::Activation;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let probs = Matrix::row_vector(&[1.0 - 1e-12, 1e-12]);
        let (l, _) = cross_entropy(&probs, &[0]).unwrap();
        assert!(l < 1e-11);
    }

    #[test]
    fn uniform_prediction_costs_ln2() {
        let probs = Matrix::filled(3, 2, 0.5);
        let (l, g) = cross_entropy(&probs, &[0, 1, 1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g[(0, 0)] + 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn clamped_rows_have_no_gradient() {
        let probs = Matrix::row_vector(&[1.0, 0.0]);
        let (l, g) = cross_entropy(&probs, &[1]).unwrap();
        assert!((l - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    fn net() -> Network {
        let mut rng = stream_rng(5, Stream::Init);
        Network::xavier(&[2, 4, 3], Activation::Tanh, 2, &mut rng).unwrap()
    }

    #[test]
    fn empty_labeled_batch_is_error() {
        let b = LabeledBatch {
            inputs: Matrix::zeros(0, 2),
            labels: vec![],
        };
        let mut rng = stream_rng(0, Stream::LabeledAug);
        assert!(supervised_loss(&net(), &b, &AugmentationSpec::default(), &mut rng).is_err());
    }

    #[test]
    fn empty_pseudo_batch_gives_zeros() {
        let n = net();
        let p = PseudoBatch::empty(2, 2);
        let mut rng = stream_rng(0, Stream::UnsupervisedAug);
        let aug = AugmentationSpec::default();
        let (l, g) = unsupervised_loss(&n, &p, &aug, &mut rng).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, GradientSet::zeros_like(&n));
        let ac = avg_clustering_loss(&n, &n.classifier, &p, &aug, &mut rng).unwrap();
        assert_eq!(ac.value, 0.0);
        assert!(ac.theta.iter().all(Affine::is_zero) && ac.beta_bar.is_zero());
    }

    #[test]
    fn confident_pseudo_label_gives_near_zero_unsupervised_loss() {
        // Head that is extremely confident in class 1 everywhere.
        let mut n = net();
        n.classifier.weight.fill(0.0);
        n.classifier.bias = Matrix::column_vector(&[-40.0, 40.0]);
        let p = PseudoBatch::new(
            Matrix::row_vector(&[0.3, 0.1]),
            vec![1],
            vec![1.0],
            HiddenLabels::new(vec![1]),
            2,
        )
        .unwrap();
        let mut rng = stream_rng(0, Stream::UnsupervisedAug);
        let (l, _) = unsupervised_loss(&n, &p, &AugmentationSpec::default(), &mut rng).unwrap();
        assert!(l < 1e-30);
    }

    #[test]
    fn avg_clustering_equals_unsupervised_when_heads_match() {
        let n = net();
        let p = PseudoBatch::new(
            Matrix::new(3, 2, vec![0.1, 0.5, -0.3, 0.2, 0.9, -1.0]).unwrap(),
            vec![0, 1, 1],
            vec![0.99; 3],
            HiddenLabels::new(vec![0, 1, 0]),
            2,
        )
        .unwrap();
        let aug = AugmentationSpec::default();
        let (lu, gu) = unsupervised_loss(&n, &p, &aug, &mut stream_rng(3, Stream::Probe)).unwrap();
        let ac = avg_clustering_loss(&n, &n.classifier, &p, &aug, &mut stream_rng(3, Stream::Probe))
            .unwrap();
        assert_eq!(lu, ac.value);
        assert_eq!(gu.features, ac.theta);
        assert_eq!(gu.classifier, ac.beta_bar);
    }
}
