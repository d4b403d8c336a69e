//! Pseudo-label selection, the three losses, Grad-ReLU routing and the
//! Avg-Clustering head.
//!
//! A training step composes these as: select `D_τ` on weak views, evaluate
//! `L_s`, `L_u` and `L_ac`, route gradients (the classifier `β` only ever sees
//! `∇L_s`), then advance the averaged head `β̄`. See [`overall_objective`].

mod avg;
mod losses;
mod objective;
mod pseudo;
mod routing;
mod threshold;

pub use avg::AvgClusteringState;
pub use losses::{
    avg_clustering_loss, avg_clustering_loss_on, cross_entropy, head_loss, supervised_loss,
    unsupervised_loss, unsupervised_loss_on, AvgClusteringLoss, PROB_FLOOR,
};
pub use objective::{
    objective_from_pseudo, overall_objective, LabelCorruption, ObjectiveConfig, ObjectiveOutput,
    StepInputs, StepRngs,
};
pub use pseudo::{select_from_probs, select_pseudo_labels, PseudoBatch, Selection};
pub use routing::{combine_unrouted, grad_relu_route, LossWeights};
pub use threshold::{ThresholdKind, ThresholdPolicy};
