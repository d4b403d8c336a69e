use rand::Rng;

use super::ThresholdPolicy;
use crate::data::{weak_augment_batch, AugmentationSpec, HiddenLabels, UnlabeledBatch};
use crate::error::{arg_err, Result};
use crate::netcore::{Matrix, Network};

/// The admitted set `D_τ` of one step.
///
/// `inputs` are the original (un-augmented) unlabeled rows; strong views are
/// drawn later, at loss time.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoBatch {
    pub inputs: Matrix,
    pub pseudo_labels: Vec<usize>,
    pub confidences: Vec<f64>,
    pub true_labels: HiddenLabels,
    num_classes: usize,
}

impl PseudoBatch {
    pub fn new(
        inputs: Matrix,
        pseudo_labels: Vec<usize>,
        confidences: Vec<f64>,
        true_labels: HiddenLabels,
        num_classes: usize,
    ) -> Result<Self> {
        let n = inputs.rows();
        if pseudo_labels.len() != n || confidences.len() != n || true_labels.len() != n {
            return arg_err("pseudo batch fields disagree in length");
        }
        if let Some(&l) = pseudo_labels.iter().find(|&&l| l >= num_classes) {
            return arg_err(format!("pseudo-label {l} out of range"));
        }
        Ok(Self {
            inputs,
            pseudo_labels,
            confidences,
            true_labels,
            num_classes,
        })
    }

    pub fn empty(input_dim: usize, num_classes: usize) -> Self {
        Self {
            inputs: Matrix::zeros(0, input_dim),
            pseudo_labels: Vec::new(),
            confidences: Vec::new(),
            true_labels: HiddenLabels::default(),
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.pseudo_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pseudo_labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Pseudo-labels as one-hot rows.
    pub fn one_hot(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), self.num_classes);
        for (r, &l) in self.pseudo_labels.iter().enumerate() {
            m[(r, l)] = 1.0;
        }
        m
    }

    /// Every pseudo-label moved to the next class (`c -> (c + 1) mod C`).
    pub fn with_flipped_labels(&self) -> Self {
        let mut out = self.clone();
        for l in &mut out.pseudo_labels {
            *l = (*l + 1) % self.num_classes;
        }
        out
    }
}

/// Outcome of thresholding one unlabeled batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub pseudo: PseudoBatch,
    /// Max-class confidence of every row in the batch, admitted or not.
    pub max_confidences: Vec<f64>,
}

/// Thresholds precomputed class probabilities: row `i` is admitted iff its
/// max probability is at least `tau`.
pub fn select_from_probs(
    inputs: &Matrix,
    probs: &Matrix,
    tau: f64,
    hidden: &HiddenLabels,
) -> Result<Selection> {
    if probs.rows() != inputs.rows() || hidden.len() != inputs.rows() {
        return arg_err("inputs, probabilities and labels disagree in length");
    }
    let mut admitted = Vec::new();
    let mut labels = Vec::new();
    let mut conf = Vec::new();
    let mut max_confidences = Vec::with_capacity(probs.rows());
    for r in 0..probs.rows() {
        let arg = probs.argmax_row(r);
        let c = probs[(r, arg)];
        max_confidences.push(c);
        if c >= tau {
            admitted.push(r);
            labels.push(arg);
            conf.push(c);
        }
    }
    let pseudo = PseudoBatch::new(
        inputs.select_rows(&admitted),
        labels,
        conf,
        hidden.select(&admitted),
        probs.cols(),
    )?;
    Ok(Selection {
        pseudo,
        max_confidences,
    })
}

/// Predicts on weak views of `batch` with `source` and keeps the confident rows.
pub fn select_pseudo_labels<R: Rng + ?Sized>(
    source: &Network,
    batch: &UnlabeledBatch,
    policy: &ThresholdPolicy,
    aug: &AugmentationSpec,
    rng: &mut R,
) -> Result<Selection> {
    if batch.inputs.rows() == 0 {
        return Ok(Selection {
            pseudo: PseudoBatch::empty(batch.inputs.cols(), source.num_classes()),
            max_confidences: Vec::new(),
        });
    }
    let weak = weak_augment_batch(&batch.inputs, aug, rng);
    let probs = source.probs(&weak)?;
    select_from_probs(&batch.inputs, &probs, policy.current_tau(), &batch.hidden)
}
