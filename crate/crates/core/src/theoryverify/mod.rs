//! Numerical checks of the theory: the chain-rule identity behind the
//! consistency bound, convergence of the discrete gradient sum, the satisfied
//! fraction of the pointwise bound over a training trace, and finite-difference
//! gradient checks for every analytic gradient in the crate.
//!
//! The binary setting uses `P(x) = σ(βᵀM(x) + b)` with `M` the feature
//! extractor.

mod gradcheck;

use std::io::Write;

use rand::Rng;

use crate::error::{arg_err, Result};
use crate::netcore::{Activation, Affine, FeatureExtractor, Matrix, Network};

pub use gradcheck::{default_model, gradcheck_suite, GradcheckConfig, SurfaceReport};

/// A binary probe: feature extractor `Θ` plus a sigmoid head `(β, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryModel {
    pub extractor: FeatureExtractor,
    pub beta: Vec<f64>,
    pub bias: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl BinaryModel {
    pub fn new(extractor: FeatureExtractor, beta: Vec<f64>, bias: f64) -> Result<Self> {
        if beta.len() != extractor.output_dim() {
            return arg_err(format!(
                "β has {} entries, features have {}",
                beta.len(),
                extractor.output_dim()
            ));
        }
        Ok(Self {
            extractor,
            beta,
            bias,
        })
    }

    pub fn random<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let extractor = FeatureExtractor::xavier(dims, activation, rng)?;
        let head = Affine::xavier(1, extractor.output_dim(), rng);
        let bias = rng.random_range(-0.5..0.5);
        Self::new(extractor, head.weight.into_data(), bias)
    }

    /// Exact reduction of a two-class softmax head: `P(class 1) = σ(z₁ − z₀)`.
    pub fn from_two_class(net: &Network) -> Result<Self> {
        if net.num_classes() != 2 {
            return arg_err(format!(
                "binary head required, network has {} classes",
                net.num_classes()
            ));
        }
        let w = &net.classifier.weight;
        let beta = w.row(1).iter().zip(w.row(0)).map(|(a, b)| a - b).collect();
        let b = &net.classifier.bias;
        Self::new(net.extractor.clone(), beta, b[(1, 0)] - b[(0, 0)])
    }

    /// One-vs-rest probe for `class`: its classifier row as `β`, same `Θ`.
    pub fn one_vs_rest(net: &Network, class: usize) -> Result<Self> {
        if class >= net.num_classes() {
            return arg_err(format!("class {class} out of range"));
        }
        Self::new(
            net.extractor.clone(),
            net.classifier.weight.row(class).to_vec(),
            net.classifier.bias[(class, 0)],
        )
    }

    /// Two-class softmax network whose class-1 probability equals `P`.
    pub fn to_network(&self) -> Result<Network> {
        let d = self.beta.len();
        let mut weight = Matrix::zeros(2, d);
        weight.row_mut(1).copy_from_slice(&self.beta);
        let bias = Matrix::column_vector(&[0.0, self.bias]);
        Network::new(self.extractor.clone(), Affine { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    /// `P(x)` for every row.
    pub fn prob(&self, xs: &Matrix) -> Result<Vec<f64>> {
        let m = self.extractor.features(xs)?;
        Ok(m.iter_rows().map(|r| sigmoid(self.logit(r))).collect())
    }

    fn logit(&self, features: &[f64]) -> f64 {
        features.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }

    /// `∇ₓP` for every row, by reverse mode through the extractor.
    pub fn input_gradients(&self, xs: &Matrix) -> Result<Matrix> {
        let trace = self.extractor.forward(xs)?;
        let m = trace.output();
        let mut upstream = Matrix::zeros(m.rows(), m.cols());
        for (r, row) in m.iter_rows().enumerate() {
            let p = sigmoid(self.logit(row));
            let s = p * (1.0 - p);
            for (u, b) in upstream.row_mut(r).iter_mut().zip(&self.beta) {
                *u = s * b;
            }
        }
        Ok(self.extractor.backward(&trace, &upstream)?.1)
    }

    /// Jacobian `∂M/∂x` (features × inputs) at a single point, by forward mode.
    pub fn feature_jacobian(&self, x: &[f64]) -> Result<Matrix> {
        if x.len() != self.input_dim() {
            return arg_err(format!("expected {} inputs, got {}", self.input_dim(), x.len()));
        }
        let mut a = x.to_vec();
        let mut jac = Matrix::identity(x.len());
        for layer in self.extractor.layers() {
            let w = &layer.affine.weight;
            let mut next_a = Vec::with_capacity(w.rows());
            let mut next_j = w.matmul(&jac)?;
            for i in 0..w.rows() {
                let z = w.row(i).iter().zip(&a).map(|(p, q)| p * q).sum::<f64>()
                    + layer.affine.bias[(i, 0)];
                let out = layer.activation.apply(z);
                let d = layer.activation.derivative(z, out);
                next_j.row_mut(i).iter_mut().for_each(|v| *v *= d);
                next_a.push(out);
            }
            a = next_a;
            jac = next_j;
        }
        Ok(jac)
    }

    /// Right-hand side of the identity: `P(1−P)·βᵀ·∂M/∂x`.
    pub fn chain_rule_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let jac = self.feature_jacobian(x)?;
        let p = self.prob(&Matrix::row_vector(x))?[0];
        let s = p * (1.0 - p);
        Ok(Matrix::row_vector(&self.beta).matmul(&jac)?.data().iter().map(|v| s * v).collect())
    }
}

/// Max absolute coordinate deviation between `∇ₓP` from the network's input
/// gradient and `P(1−P)·βᵀ∇ₓM` from a forward-mode Jacobian.
pub fn chain_rule_identity_check(model: &BinaryModel, x: &[f64]) -> Result<f64> {
    let direct = model.to_network()?.grad_wrt_input(&Matrix::row_vector(x), 1)?;
    let rhs = model.chain_rule_gradient(x)?;
    Ok(direct
        .data()
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Worst deviation over `n_models` random tanh/relu models, one random input each.
pub fn chain_rule_suite(n_models: usize, seed: u64) -> Result<f64> {
    let mut rng = crate::rng::stream_rng(seed, crate::rng::Stream::Probe);
    let mut worst = 0.0f64;
    for i in 0..n_models {
        let in_dim = rng.random_range(1..=4);
        let depth = rng.random_range(1..=3);
        let mut dims = vec![in_dim];
        dims.extend((0..depth).map(|_| rng.random_range(2..=8)));
        let act = if i % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let model = BinaryModel::random(&dims, act, &mut rng)?;
        let x: Vec<f64> = (0..in_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        worst = worst.max(chain_rule_identity_check(&model, &x)?);
    }
    Ok(worst)
}

/// Axis-aligned box `[lower, upper]` sampled at `points_per_dim` vertices per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points_per_dim: usize,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points_per_dim: usize) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return arg_err("grid bounds must be nonempty and of equal dimension");
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return arg_err("grid requires lower < upper in every dimension");
        }
        if points_per_dim < 2 {
            return arg_err("grid needs at least 2 points per dimension");
        }
        Ok(Self {
            lower,
            upper,
            points_per_dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Same box with vertex spacing `h` along the widest axis; every axis must
    /// be a whole number of steps.
    pub fn with_spacing(&self, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return arg_err(format!("spacing must be > 0, got {h}"));
        }
        let mut steps = None;
        for (l, u) in self.lower.iter().zip(&self.upper) {
            let n = ((u - l) / h).round();
            if n < 1.0 || ((u - l) - n * h).abs() > 1e-9 * (u - l) {
                return arg_err(format!("spacing {h} does not divide [{l}, {u}]"));
            }
            if steps.is_some_and(|s| s != n as usize) {
                return arg_err("grids with unequal step counts per axis are not supported");
            }
            steps = Some(n as usize);
        }
        Self::new(self.lower.clone(), self.upper.clone(), steps.unwrap_or(1) + 1)
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.points_per_dim - 1) as f64
    }

    /// Coordinates of vertex `i` along `axis`.
    fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + i as f64 * self.spacing(axis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaRow {
    pub h: f64,
    /// `hᵈ·Σᵢ ‖∇ₓP(xᵢ)‖₁` over all grid vertices.
    pub discrete_sum: f64,
    /// Composite-trapezoid estimate of `∫_D ‖∇ₓP‖₁ dV`.
    pub integral_estimate: f64,
}

impl LemmaRow {
    pub fn error(&self) -> f64 {
        (self.discrete_sum - self.integral_estimate).abs()
    }
}

/// Evaluates `‖∇ₓP‖₁` over `grid`, returning `(Σ f, trapezoid-weighted Σ f)`,
/// both multiplied by the cell volume.
fn grid_sums(model: &BinaryModel, grid: &GridSpec) -> Result<(f64, f64)> {
    let n = grid.points_per_dim;
    let weight = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    let volume: f64 = (0..grid.dim()).map(|a| grid.spacing(a)).product();
    let (mut plain, mut trap) = (0.0, 0.0);
    match grid.dim() {
        1 => {
            let xs = Matrix::new(n, 1, (0..n).map(|i| grid.coord(0, i)).collect())?;
            let g = model.input_gradients(&xs)?;
            for (i, row) in g.iter_rows().enumerate() {
                let f: f64 = row.iter().map(|v| v.abs()).sum();
                plain += f;
                trap += weight(i) * f;
            }
        }
        2 => {
            // One batched pass per grid row keeps memory at O(n).
            for i in 0..n {
                let x0 = grid.coord(0, i);
                let data = (0..n).flat_map(|j| [x0, grid.coord(1, j)]).collect();
                let g = model.input_gradients(&Matrix::new(n, 2, data)?)?;
                for (j, row) in g.iter_rows().enumerate() {
                    let f: f64 = row.iter().map(|v| v.abs()).sum();
                    plain += f;
                    trap += weight(i) * weight(j) * f;
                }
            }
        }
        d => return arg_err(format!("grid dimension {d} > 2 is not supported")),
    }
    Ok((plain * volume, trap * volume))
}

/// For each spacing `h`, the discrete vertex sum and a reference integral
/// from a trapezoid rule at one tenth of the finest spacing.
pub fn lemma41_convergence(
    model: &BinaryModel,
    grid: &GridSpec,
    spacings: &[f64],
) -> Result<Vec<LemmaRow>> {
    if grid.dim() > 2 {
        return arg_err(format!("grid dimension {} > 2 is not supported", grid.dim()));
    }
    if grid.dim() != model.input_dim() {
        return arg_err("grid and model dimensions differ");
    }
    if spacings.is_empty() {
        return arg_err("no spacings given");
    }
    let finest = spacings.iter().copied().fold(f64::INFINITY, f64::min);
    let (_, integral) = grid_sums(model, &grid.with_spacing(finest / 10.0)?)?;
    spacings
        .iter()
        .map(|&h| {
            let (sum, _) = grid_sums(model, &grid.with_spacing(h)?)?;
            Ok(LemmaRow {
                h,
                discrete_sum: sum,
                integral_estimate: integral,
            })
        })
        .collect()
}

/// For each `(iteration, probe model)`, the fraction of probe rows with
/// `P(1−P)·‖βᵀ∇ₓM‖₁ < ε`.
pub fn theorem42_monitor(
    trace: &[(usize, BinaryModel)],
    probe: &Matrix,
    epsilon: f64,
) -> Result<Vec<(usize, f64)>> {
    if probe.rows() == 0 {
        return arg_err("probe set is empty");
    }
    trace
        .iter()
        .map(|(t, model)| {
            let g = model.input_gradients(probe)?;
            let ok = g
                .iter_rows()
                .filter(|r| r.iter().map(|v| v.abs()).sum::<f64>() < epsilon)
                .count();
            Ok((*t, ok as f64 / probe.rows() as f64))
        })
        .collect()
}

/// One-vs-rest probes for `class` from a run's evaluation snapshots.
pub fn probe_trace(
    snapshots: &[crate::trainer::Snapshot],
    class: usize,
) -> Result<Vec<(usize, BinaryModel)>> {
    snapshots
        .iter()
        .map(|s| Ok((s.iteration, BinaryModel::one_vs_rest(&s.network, class)?)))
        .collect()
}

/// Moving average over full windows of `window` consecutive values; shorter
/// inputs collapse to their overall mean.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    if values.is_empty() {
        return Vec::new();
    }
    if values.len() < window {
        return vec![values.iter().sum::<f64>() / values.len() as f64];
    }
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub quantity: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub fn write_report_csv<W: Write>(w: W, rows: &[CheckRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["check", "quantity", "value", "threshold", "pass"])?;
    for r in rows {
        w.write_record([
            r.check.clone(),
            r.quantity.clone(),
            format!("{:e}", r.value),
            format!("{:e}", r.threshold),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_text<W: Write>(mut w: W, rows: &[CheckRow]) -> Result<()> {
    for r in rows {
        writeln!(
            w,
            "{:<10} {:<24} {:>12.4e}  (threshold {:.1e})  {}",
            r.check,
            r.quantity,
            r.value,
            r.threshold,
            if r.pass { "PASS" } else { "FAIL" }
        )?;
    }
    Ok(())
}
