//! Datasets, labeled/unlabeled splitting, augmentation and batch sampling.

mod augment;
mod idx;
mod sampler;
mod synth;

use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;

pub use augment::{strong_augment, strong_augment_batch, weak_augment, weak_augment_batch, AugmentationSpec};
pub use idx::{load_idx, parse_idx};
pub use sampler::{BatchSampler, LabeledBatch, UnlabeledBatch};
pub use synth::{generate, DatasetSpec, Generator};

use crate::error::{arg_err, Error, Result};
use crate::netcore::Matrix;
use crate::rng::stream_rng;

/// One input with its (possibly masked) label.
///
/// `true_label` is kept for diagnostics; learner-facing code goes through
/// [`LabeledSet`] / [`UnlabeledSet`], which never expose it for unlabeled data
/// except via [`HiddenLabels::reveal_for_diagnostics`].
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: Option<usize>,
    pub true_label: usize,
}

impl Example {
    pub fn labeled(features: Vec<f64>, label: usize) -> Self {
        Self {
            features,
            label: Some(label),
            true_label: label,
        }
    }

    pub fn masked(mut self) -> Self {
        self.label = None;
        self
    }
}

/// Ground-truth labels of unlabeled data, readable only by diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HiddenLabels(Vec<usize>);

impl HiddenLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    /// For metrics (γ, υ, accuracy) only; never feed into a loss.
    pub fn reveal_for_diagnostics(&self) -> &[usize] {
        &self.0
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self(indices.iter().map(|&i| self.0[i]).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Learner-facing labeled data (also used for test sets).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    /// Every example must carry a label.
    pub fn from_examples(examples: &[Example], input_dim: usize) -> Result<Self> {
        let mut labels = Vec::with_capacity(examples.len());
        for (i, e) in examples.iter().enumerate() {
            labels.push(e.label.ok_or_else(|| {
                Error::Argument(format!("example {i} has no label"))
            })?);
        }
        Ok(Self {
            inputs: stack(examples, input_dim)?,
            labels,
        })
    }

    /// Uses `true_label` regardless of masking; for held-out evaluation sets.
    pub fn evaluation_set(examples: &[Example], input_dim: usize) -> Result<Self> {
        Ok(Self {
            inputs: stack(examples, input_dim)?,
            labels: examples.iter().map(|e| e.true_label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    pub inputs: Matrix,
    pub hidden: HiddenLabels,
}

impl UnlabeledSet {
    pub fn from_examples(examples: &[Example], input_dim: usize) -> Result<Self> {
        Ok(Self {
            inputs: stack(examples, input_dim)?,
            hidden: HiddenLabels(examples.iter().map(|e| e.true_label).collect()),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

fn stack(examples: &[Example], input_dim: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(examples.len() * input_dim);
    for (i, e) in examples.iter().enumerate() {
        if e.features.len() != input_dim {
            return Err(Error::Shape(format!(
                "example {i} has {} features, expected {input_dim}",
                e.features.len()
            )));
        }
        data.extend_from_slice(&e.features);
    }
    Matrix::new(examples.len(), input_dim, data)
}

/// Number of classes implied by the largest true label.
pub fn class_count(examples: &[Example]) -> usize {
    examples.iter().map(|e| e.true_label + 1).max().unwrap_or(0)
}

/// Draws `labels_per_class` labeled examples per class; everything else is
/// returned with its label masked.
pub fn split(
    examples: &[Example],
    labels_per_class: usize,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>)> {
    let num_classes = class_count(examples);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, e) in examples.iter().enumerate() {
        by_class[e.true_label].push(i);
    }
    let mut rng = stream_rng(seed, crate::rng::Stream::Split);
    let mut chosen = vec![false; examples.len()];
    let mut labeled = Vec::with_capacity(labels_per_class * num_classes);
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < labels_per_class {
            return arg_err(format!(
                "class {class} has {} members, need {labels_per_class} labels",
                members.len()
            ));
        }
        members.shuffle(&mut rng);
        for &i in &members[..labels_per_class] {
            chosen[i] = true;
            let e = &examples[i];
            labeled.push(Example::labeled(e.features.clone(), e.true_label));
        }
    }
    let unlabeled = examples
        .iter()
        .zip(&chosen)
        .filter(|(_, &c)| !c)
        .map(|(e, _)| e.clone().masked())
        .collect();
    Ok((labeled, unlabeled))
}

/// Writes the dataset cache CSV: `f0,...,fk,label,true_label`, absent labels empty.
pub fn write_csv(path: &Path, examples: &[Example]) -> Result<()> {
    let dim = examples.first().map_or(0, |e| e.features.len());
    let mut w = csv::Writer::from_writer(File::create(path)?);
    let mut header: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    header.push("true_label".into());
    w.write_record(&header)?;
    for e in examples {
        let mut rec: Vec<String> = e.features.iter().map(|v| format!("{v:?}")).collect();
        rec.push(e.label.map(|l| l.to_string()).unwrap_or_default());
        rec.push(e.true_label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<Example>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let n = headers.len();
    if n < 2 || &headers[n - 2] != "label" || &headers[n - 1] != "true_label" {
        return Err(Error::Format("dataset CSV must end with label,true_label".into()));
    }
    let parse_err = |what: &str, v: &str| Error::Format(format!("bad {what} `{v}`"));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let features = rec
            .iter()
            .take(n - 2)
            .map(|v| v.parse::<f64>().map_err(|_| parse_err("feature", v)))
            .collect::<Result<Vec<_>>>()?;
        let label = match &rec[n - 2] {
            "" => None,
            v => Some(v.parse().map_err(|_| parse_err("label", v))?),
        };
        let true_label = rec[n - 1]
            .parse()
            .map_err(|_| parse_err("true_label", &rec[n - 1]))?;
        out.push(Example {
            features,
            label,
            true_label,
        });
    }
    Ok(out)
}
