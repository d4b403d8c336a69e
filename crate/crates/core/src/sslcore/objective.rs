//! One step of the full objective `L = L_s + w_u·L_u + w_ac·L_ac` with routing.

use super::{
    avg_clustering_loss_on, combine_unrouted, grad_relu_route, select_pseudo_labels,
    supervised_loss, unsupervised_loss_on, AvgClusteringState, LossWeights, PseudoBatch,
    Selection, ThresholdPolicy,
};
use crate::data::{strong_augment_batch, AugmentationSpec, LabeledBatch, UnlabeledBatch};
use crate::error::{Error, Result};
use crate::netcore::{GradientSet, Network};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    /// Drop unsupervised gradients on the classifier.
    pub grad_relu: bool,
    /// Include `L_ac` and advance `β̄`.
    pub avg_clustering: bool,
    /// Send `∇_Θ L_ac` to the optimizer. When off, `L_ac` still drives `β̄`.
    pub ac_theta_coupling: bool,
    /// Let `L_u` and `L_ac` see the same strong view instead of independent draws.
    pub share_strong_aug: bool,
}

impl ObjectiveConfig {
    pub fn layermatch(weights: LossWeights) -> Self {
        Self {
            weights,
            grad_relu: true,
            avg_clustering: true,
            ac_theta_coupling: true,
            share_strong_aug: false,
        }
    }

    /// `L_s + w_u·L_u` with no routing and no averaged head.
    pub fn consistency_only(w_u: f64) -> Self {
        Self {
            weights: LossWeights { w_u, w_ac: 0.0 },
            grad_relu: false,
            avg_clustering: false,
            ac_theta_coupling: false,
            share_strong_aug: false,
        }
    }
}

/// Deliberate pseudo-label corruption, for isolation experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelCorruption {
    #[default]
    None,
    /// Shift every admitted pseudo-label to the next class.
    FlipAll,
}

/// Independent random streams for the stochastic parts of a step.
pub struct StepRngs<'a> {
    pub labeled_aug: &'a mut Rng,
    pub pseudo_aug: &'a mut Rng,
    pub unsupervised_aug: &'a mut Rng,
    pub avg_aug: &'a mut Rng,
}

pub struct StepInputs<'a> {
    /// Live model `(Θ, β)`.
    pub net: &'a Network,
    /// Model whose predictions produce pseudo-labels (live or prediction EMA).
    pub pseudo_source: &'a Network,
    pub labeled: &'a LabeledBatch,
    pub unlabeled: &'a UnlabeledBatch,
    pub policy: &'a ThresholdPolicy,
    pub aug: &'a AugmentationSpec,
    pub corruption: LabelCorruption,
}

#[derive(Debug, Clone)]
pub struct ObjectiveOutput {
    /// `L_s + w_u·L_u + w_ac·L_ac`, for logging.
    pub total: f64,
    pub loss_s: f64,
    pub loss_u: f64,
    pub loss_ac: f64,
    /// Gradient handed to the optimizer.
    pub grads: GradientSet,
    pub avg: Option<AvgClusteringState>,
    pub selection: Selection,
}

/// select → losses → route → `β̄` update.
pub fn overall_objective(
    inputs: &StepInputs<'_>,
    avg: Option<AvgClusteringState>,
    cfg: &ObjectiveConfig,
    rngs: StepRngs<'_>,
) -> Result<ObjectiveOutput> {
    let mut selection = select_pseudo_labels(
        inputs.pseudo_source,
        inputs.unlabeled,
        inputs.policy,
        inputs.aug,
        rngs.pseudo_aug,
    )?;
    if inputs.corruption == LabelCorruption::FlipAll {
        selection.pseudo = selection.pseudo.with_flipped_labels();
    }
    let out = objective_from_pseudo(
        inputs.net,
        inputs.labeled,
        &selection.pseudo,
        avg,
        inputs.aug,
        cfg,
        rngs.labeled_aug,
        rngs.unsupervised_aug,
        rngs.avg_aug,
    )?;
    Ok(ObjectiveOutput { selection, ..out })
}

/// The loss/route/update part of [`overall_objective`] for an already selected `D_τ`.
#[allow(clippy::too_many_arguments)]
pub fn objective_from_pseudo(
    net: &Network,
    labeled: &LabeledBatch,
    pseudo: &PseudoBatch,
    avg: Option<AvgClusteringState>,
    aug: &AugmentationSpec,
    cfg: &ObjectiveConfig,
    labeled_rng: &mut Rng,
    unsup_rng: &mut Rng,
    avg_rng: &mut Rng,
) -> Result<ObjectiveOutput> {
    cfg.weights.validate()?;
    let (loss_s, grads_s) = supervised_loss(net, labeled, aug, labeled_rng)?;

    let strong_u = strong_augment_batch(&pseudo.inputs, aug, unsup_rng);
    let (loss_u, grads_u) = unsupervised_loss_on(net, &strong_u, pseudo)?;

    let (loss_ac, theta_ac, avg) = if cfg.avg_clustering {
        let state = avg.ok_or_else(|| {
            Error::State("Avg-Clustering enabled without an averaged head".into())
        })?;
        let strong_ac = if cfg.share_strong_aug {
            strong_u
        } else {
            strong_augment_batch(&pseudo.inputs, aug, avg_rng)
        };
        let ac = avg_clustering_loss_on(net, &state.beta_bar, &strong_ac, pseudo)?;
        let theta = if cfg.ac_theta_coupling {
            ac.theta
        } else {
            net.extractor.zero_grads()
        };
        let state = state.update_avg_classifier(&net.classifier, &ac.beta_bar)?;
        (ac.value, theta, Some(state))
    } else {
        (0.0, net.extractor.zero_grads(), avg)
    };

    let weights = LossWeights {
        w_u: cfg.weights.w_u,
        w_ac: if cfg.avg_clustering { cfg.weights.w_ac } else { 0.0 },
    };
    let grads = if cfg.grad_relu {
        grad_relu_route(&grads_s, &grads_u, &theta_ac, weights)?
    } else {
        combine_unrouted(&grads_s, &grads_u, &theta_ac, weights)?
    };
    let total = loss_s + weights.w_u * loss_u + weights.w_ac * loss_ac;
    Ok(ObjectiveOutput {
        total,
        loss_s,
        loss_u,
        loss_ac,
        grads,
        avg,
        selection: Selection {
            pseudo: PseudoBatch::empty(pseudo.inputs.cols(), pseudo.num_classes()),
            max_confidences: Vec::new(),
        },
    })
}
