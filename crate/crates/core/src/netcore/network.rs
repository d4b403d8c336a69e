//! Layered feed-forward network split into a feature extractor and a linear
//! classification head.
//!
//! The split matters: gradients are always returned per parameter group
//! ([`GradientSet::features`] vs [`GradientSet::classifier`]) so callers can
//! route them independently.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::Matrix;
use crate::error::{arg_err, shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => arg_err(format!("unknown activation `{other}`")),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

/// An affine map `x -> W x + b` with `W: out x in`, `b: out x 1`.
///
/// Used both for parameters and for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Affine {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: Matrix::zeros(out_dim, 1),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite Xavier bounds");
        let data = (0..out_dim * in_dim).map(|_| dist.sample(rng)).collect();
        Self {
            weight: Matrix::new(out_dim, in_dim, data).expect("sized above"),
            bias: Matrix::zeros(out_dim, 1),
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.out_dim(), self.in_dim())
    }

    pub fn same_shape(&self, other: &Affine) -> bool {
        self.weight.same_shape(&other.weight) && self.bias.same_shape(&other.bias)
    }

    /// Row-wise `inputs * W^T + b`.
    pub fn apply(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut z = inputs.matmul_t(&self.weight)?;
        z.add_row_broadcast(&self.bias)?;
        Ok(z)
    }

    pub fn axpy(&mut self, alpha: f64, other: &Affine) -> Result<()> {
        self.weight.axpy(alpha, &other.weight)?;
        self.bias.axpy(alpha, &other.bias)
    }

    pub fn scale(&mut self, factor: f64) {
        self.weight.scale(factor);
        self.bias.scale(factor);
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.weight.data().iter().chain(self.bias.data()).all(|&v| v == 0.0)
    }

    pub(crate) fn matrices(&self) -> [&Matrix; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn matrices_mut(&mut self) -> [&mut Matrix; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// The linear classification head: `num_classes x feature_dim` weight plus bias.
pub type Classifier = Affine;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub affine: Affine,
    pub activation: Activation,
}

/// Feature extraction stack `M(x)`; at least one layer, dimensions chain.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    layers: Vec<DenseLayer>,
}

/// Cached activations of one feature-extractor forward pass.
#[derive(Debug, Clone)]
pub struct FeatureTrace {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
    signature: Vec<(usize, usize)>,
}

impl FeatureTrace {
    /// Final-layer activations `M(x)`.
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("extractor has at least one layer")
    }

    pub fn input(&self) -> &Matrix {
        &self.input
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }
}

impl FeatureExtractor {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return arg_err("feature extractor needs at least one layer");
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].affine.out_dim() != pair[1].affine.in_dim() {
                return shape_err(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].affine.out_dim(),
                    k + 1,
                    pair[1].affine.in_dim()
                ));
            }
        }
        for (k, l) in layers.iter().enumerate() {
            if l.affine.bias.shape() != (l.affine.out_dim(), 1) {
                return shape_err(format!("layer {k} bias must be {}x1", l.affine.out_dim()));
            }
        }
        Ok(Self { layers })
    }

    /// Builds layers `dims[0] -> dims[1] -> ... -> dims[n]` with Glorot-uniform weights.
    pub fn xavier<R: Rng + ?Sized>(
        dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return arg_err(format!("invalid layer dims {dims:?}"));
        }
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer {
                affine: Affine::xavier(w[1], w[0], rng),
                activation,
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].affine.in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").affine.out_dim()
    }

    fn signature(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.affine.weight.shape()).collect()
    }

    /// Forward pass keeping every pre- and post-activation for [`Self::backward`].
    pub fn forward(&self, inputs: &Matrix) -> Result<FeatureTrace> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let x = post.last().unwrap_or(inputs);
            if x.cols() != layer.affine.in_dim() {
                return shape_err(format!(
                    "layer {k} expects {} inputs, got {}",
                    layer.affine.in_dim(),
                    x.cols()
                ));
            }
            let z = layer.affine.apply(x)?;
            let a = z.map(|v| layer.activation.apply(v));
            pre.push(z);
            post.push(a);
        }
        Ok(FeatureTrace {
            input: inputs.clone(),
            pre,
            post,
            signature: self.signature(),
        })
    }

    /// Output features only.
    pub fn features(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut x = inputs.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            if x.cols() != layer.affine.in_dim() {
                return shape_err(format!(
                    "layer {k} expects {} inputs, got {}",
                    layer.affine.in_dim(),
                    x.cols()
                ));
            }
            let z = layer.affine.apply(&x)?;
            x = z.map(|v| layer.activation.apply(v));
        }
        Ok(x)
    }

    /// Reverse pass from `dL/dM(x)`; returns per-layer gradients and `dL/dx`.
    pub fn backward(
        &self,
        trace: &FeatureTrace,
        grad_output: &Matrix,
    ) -> Result<(Vec<Affine>, Matrix)> {
        if trace.signature != self.signature() {
            return Err(Error::State(
                "forward trace was produced by a different architecture".into(),
            ));
        }
        if grad_output.shape() != trace.output().shape() {
            return shape_err(format!(
                "output gradient {}x{} does not match features {}x{}",
                grad_output.rows(),
                grad_output.cols(),
                trace.output().rows(),
                trace.output().cols()
            ));
        }
        let mut grads = vec![None; self.layers.len()];
        let mut upstream = grad_output.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let z = &trace.pre[k];
            let a = &trace.post[k];
            let mut dz = upstream;
            for ((d, &zv), &av) in dz.data_mut().iter_mut().zip(z.data()).zip(a.data()) {
                *d *= layer.activation.derivative(zv, av);
            }
            let x = if k == 0 { &trace.input } else { &trace.post[k - 1] };
            let weight = dz.t_matmul(x)?;
            let bias = dz.column_sums();
            upstream = dz.matmul(&layer.affine.weight)?;
            grads[k] = Some(Affine { weight, bias });
        }
        let grads = grads.into_iter().map(|g| g.expect("filled")).collect();
        Ok((grads, upstream))
    }

    pub fn zero_grads(&self) -> Vec<Affine> {
        self.layers.iter().map(|l| l.affine.zeros_like()).collect()
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Result<Matrix> {
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Class probabilities `P(y | features)` under the head `clf`.
pub fn forward_probs(clf: &Classifier, features: &Matrix) -> Result<Matrix> {
    if features.cols() != clf.in_dim() {
        return shape_err(format!(
            "classifier expects {} features, got {}",
            clf.in_dim(),
            features.cols()
        ));
    }
    softmax(&clf.apply(features)?)
}

/// Gradients mirroring a [`Network`]'s parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub features: Vec<Affine>,
    pub classifier: Affine,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            features: net.extractor.zero_grads(),
            classifier: net.classifier.zeros_like(),
        }
    }

    pub fn check_compatible(&self, other: &GradientSet) -> Result<()> {
        if self.features.len() != other.features.len()
            || self
                .features
                .iter()
                .zip(&other.features)
                .any(|(a, b)| !a.same_shape(b))
        {
            return shape_err("feature gradient shapes differ");
        }
        if !self.classifier.same_shape(&other.classifier) {
            return shape_err("classifier gradient shapes differ");
        }
        Ok(())
    }

    pub fn axpy(&mut self, alpha: f64, other: &GradientSet) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.features.iter_mut().zip(&other.features) {
            a.axpy(alpha, b)?;
        }
        self.classifier.axpy(alpha, &other.classifier)
    }

    pub fn is_finite(&self) -> bool {
        self.features.iter().all(Affine::is_finite) && self.classifier.is_finite()
    }

    /// Flattened in parameter order (see [`Network::flat_params`]).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.features {
            out.extend_from_slice(g.weight.data());
            out.extend_from_slice(g.bias.data());
        }
        out.extend_from_slice(self.classifier.weight.data());
        out.extend_from_slice(self.classifier.bias.data());
        out
    }
}

/// Feature extractor `Θ` plus linear head `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub extractor: FeatureExtractor,
    pub classifier: Classifier,
}

/// Cached state of a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub trace: FeatureTrace,
    pub logits: Matrix,
    pub probs: Matrix,
}

impl Network {
    pub fn new(extractor: FeatureExtractor, classifier: Classifier) -> Result<Self> {
        if classifier.in_dim() != extractor.output_dim() {
            return shape_err(format!(
                "classifier expects {} features, extractor emits {}",
                classifier.in_dim(),
                extractor.output_dim()
            ));
        }
        if classifier.bias.shape() != (classifier.out_dim(), 1) {
            return shape_err("classifier bias must be a column vector");
        }
        Ok(Self {
            extractor,
            classifier,
        })
    }

    /// Glorot-initialised network: `dims` are the extractor layer widths
    /// (input first, feature dim last).
    pub fn xavier<R: Rng + ?Sized>(
        dims: &[usize],
        activation: Activation,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_classes < 2 {
            return arg_err("need at least two classes");
        }
        let extractor = FeatureExtractor::xavier(dims, activation, rng)?;
        let classifier = Affine::xavier(num_classes, extractor.output_dim(), rng);
        Self::new(extractor, classifier)
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<ForwardPass> {
        self.forward_with_head(&self.classifier, inputs)
    }

    /// Forward pass through this extractor but an external head (e.g. `β̄`).
    pub fn forward_with_head(&self, head: &Classifier, inputs: &Matrix) -> Result<ForwardPass> {
        let trace = self.extractor.forward(inputs)?;
        if head.in_dim() != trace.output().cols() {
            return shape_err("head does not match feature dim");
        }
        let logits = head.apply(trace.output())?;
        let probs = softmax(&logits)?;
        Ok(ForwardPass {
            trace,
            logits,
            probs,
        })
    }

    pub fn probs(&self, inputs: &Matrix) -> Result<Matrix> {
        forward_probs(&self.classifier, &self.extractor.features(inputs)?)
    }

    /// Reverse pass from `dL/dlogits` through `head` (which produced `pass`).
    pub fn backward_with_head(
        &self,
        head: &Classifier,
        pass: &ForwardPass,
        grad_logits: &Matrix,
    ) -> Result<GradientSet> {
        let features = pass.trace.output();
        if grad_logits.shape() != (features.rows(), head.out_dim()) {
            return shape_err(format!(
                "logit gradient {}x{} does not match batch {} x classes {}",
                grad_logits.rows(),
                grad_logits.cols(),
                features.rows(),
                head.out_dim()
            ));
        }
        let classifier = Affine {
            weight: grad_logits.t_matmul(features)?,
            bias: grad_logits.column_sums(),
        };
        let grad_features = grad_logits.matmul(&head.weight)?;
        let (features, _) = self.extractor.backward(&pass.trace, &grad_features)?;
        Ok(GradientSet {
            features,
            classifier,
        })
    }

    pub fn backward(&self, pass: &ForwardPass, grad_logits: &Matrix) -> Result<GradientSet> {
        self.backward_with_head(&self.classifier, pass, grad_logits)
    }

    /// `∇_x P(y = class | x)` for a single input row.
    pub fn grad_wrt_input(&self, x: &Matrix, class_index: usize) -> Result<Matrix> {
        if x.rows() != 1 {
            return arg_err(format!("expected a single input row, got {}", x.rows()));
        }
        if class_index >= self.num_classes() {
            return arg_err(format!(
                "class index {class_index} out of range for {} classes",
                self.num_classes()
            ));
        }
        let pass = self.forward(x)?;
        let p = pass.probs.row(0);
        let pc = p[class_index];
        // dP_c/dz_j = P_c (δ_cj - P_j)
        let dlogits: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(j, &pj)| pc * (f64::from(u8::from(j == class_index)) - pj))
            .collect();
        let grad_features = Matrix::row_vector(&dlogits).matmul(&self.classifier.weight)?;
        let (_, grad_input) = self.extractor.backward(&pass.trace, &grad_features)?;
        Ok(grad_input)
    }

    pub fn param_count(&self) -> usize {
        self.extractor
            .layers()
            .iter()
            .map(|l| l.affine.param_count())
            .sum::<usize>()
            + self.classifier.param_count()
    }

    /// All parameter matrices in canonical order: each extractor layer's
    /// weight then bias, then the classifier weight then bias.
    pub fn matrices(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for l in self.extractor.layers() {
            out.extend(l.affine.matrices());
        }
        out.extend(self.classifier.matrices());
        out
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in self.extractor.layers_mut() {
            out.extend(l.affine.matrices_mut());
        }
        out.extend(self.classifier.matrices_mut());
        out
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.matrices()
            .into_iter()
            .flat_map(|m| m.data().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return shape_err(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            ));
        }
        let mut offset = 0;
        for m in self.matrices_mut() {
            let n = m.len();
            m.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
    }
}
