//! Central finite differences against every analytic gradient in the crate.

use rand::seq::index;
use rand::Rng as _;

use super::CheckRow;
use crate::data::{AugmentationSpec, HiddenLabels, LabeledBatch};
use crate::error::{arg_err, Result};
use crate::netcore::{Activation, Affine, GradientSet, Matrix, Network};
use crate::rng::{stream_rng, Rng, Stream};
use crate::sslcore::{
    avg_clustering_loss, objective_from_pseudo, supervised_loss, unsupervised_loss,
    AvgClusteringState, LossWeights, ObjectiveConfig, PseudoBatch,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    /// Sampled coordinates per surface.
    pub n_coords: usize,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Central-difference step.
    pub step: f64,
    /// When both analytic and numeric values are this small, the absolute
    /// difference is reported instead of the (meaningless) relative one.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            n_coords: 100,
            tolerance: 1e-4,
            step: 1e-5,
            abs_floor: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceReport {
    pub surface: &'static str,
    pub coords: usize,
    pub worst_rel_error: f64,
    pub tolerance: f64,
}

impl SurfaceReport {
    pub fn pass(&self) -> bool {
        self.worst_rel_error < self.tolerance
    }

    pub fn to_row(&self) -> CheckRow {
        CheckRow {
            check: "gradcheck".into(),
            quantity: self.surface.into(),
            value: self.worst_rel_error,
            threshold: self.tolerance,
            pass: self.pass(),
        }
    }
}

fn rel_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale <= abs_floor {
        diff
    } else {
        diff / scale
    }
}

fn sample_coords(len: usize, n: usize, rng: &mut Rng) -> Vec<usize> {
    if n <= len {
        index::sample(rng, len, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Worst relative error of `analytic` against central differences of `f`
/// around `x0` on the sampled coordinates.
fn check_surface(
    surface: &'static str,
    x0: &[f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    cfg: &GradcheckConfig,
    tolerance: f64,
    rng: &mut Rng,
) -> Result<SurfaceReport> {
    if x0.len() != analytic.len() {
        return arg_err(format!("{surface}: gradient length mismatch"));
    }
    let coords = sample_coords(x0.len(), cfg.n_coords, rng);
    let mut x = x0.to_vec();
    let mut worst = 0.0f64;
    for &i in &coords {
        x[i] = x0[i] + cfg.step;
        let up = f(&x)?;
        x[i] = x0[i] - cfg.step;
        let down = f(&x)?;
        x[i] = x0[i];
        let numeric = (up - down) / (2.0 * cfg.step);
        worst = worst.max(rel_error(analytic[i], numeric, cfg.abs_floor));
    }
    Ok(SurfaceReport {
        surface,
        coords: coords.len(),
        worst_rel_error: worst,
        tolerance,
    })
}

fn with_params(net: &Network, flat: &[f64]) -> Result<Network> {
    let mut n = net.clone();
    n.set_flat_params(flat)?;
    Ok(n)
}

fn affine_flat(a: &Affine) -> Vec<f64> {
    a.weight.data().iter().chain(a.bias.data()).copied().collect()
}

fn affine_from_flat(template: &Affine, flat: &[f64]) -> Result<Affine> {
    let (w, b) = flat.split_at(template.weight.len());
    Ok(Affine {
        weight: Matrix::new(template.weight.rows(), template.weight.cols(), w.to_vec())?,
        bias: Matrix::new(template.bias.rows(), 1, b.to_vec())?,
    })
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::new(rows, cols, data).expect("sized")
}

/// Smooth default probe network (tanh avoids ReLU kinks under differencing).
pub fn default_model(rng: &mut Rng) -> Result<Network> {
    Network::xavier(&[2, 10, 10], Activation::Tanh, 3, rng)
}

/// Gradient checks over:
///
/// - `squared_linear`: a linear map under squared loss (harness sanity, 1e-8)
/// - `zero_model`: `L_s` at all-zero parameters (exercises the absolute floor)
/// - `L_s`, `L_u`: supervised and unsupervised losses w.r.t. all parameters
/// - `L_ac_theta`, `L_ac_beta_bar`: the averaged-head loss w.r.t. `Θ` and `β̄`
/// - `combined`: `L_s + w_u·L_u + w_ac·L_ac` against its unrouted gradient
/// - `input_grad`: `∇ₓP_c` from the network
pub fn gradcheck_suite(
    model_factory: impl Fn(&mut Rng) -> Result<Network>,
    cfg: &GradcheckConfig,
) -> Result<Vec<SurfaceReport>> {
    if !(cfg.tolerance > 0.0) {
        return arg_err("gradcheck tolerance must be > 0");
    }
    let mut rng = stream_rng(cfg.seed, Stream::Probe);
    let net = model_factory(&mut rng)?;
    let (d, c) = (net.input_dim(), net.num_classes());
    let aug = AugmentationSpec::default();
    let tol = cfg.tolerance;
    let mut out = Vec::new();

    // Linear map + squared loss, gradient by hand.
    {
        let (n, k, din) = (20, 10, 10);
        // Positive inputs and residuals near a constant offset keep every
        // gradient coordinate well away from zero, and the loss (hence its
        // rounding noise) small.
        let x = random_matrix(n, din, 0.75, &mut rng).map(|v| v + 1.25);
        let lin = Affine::xavier(k, din, &mut rng);
        let mut y = lin.apply(&x)?.map(|v| v - 0.1);
        y.axpy(1.0, &random_matrix(n, k, 0.02, &mut rng))?;
        let loss = |a: &Affine| -> Result<f64> {
            let r = a.apply(&x)?;
            Ok(r.data().iter().zip(y.data()).map(|(p, t)| (p - t).powi(2)).sum::<f64>()
                / (2.0 * n as f64))
        };
        let mut resid = lin.apply(&x)?;
        resid.axpy(-1.0, &y)?;
        resid.scale(1.0 / n as f64);
        let grad = Affine {
            weight: resid.t_matmul(&x)?,
            bias: resid.column_sums(),
        };
        out.push(check_surface(
            "squared_linear",
            &affine_flat(&lin),
            &affine_flat(&grad),
            |p| loss(&affine_from_flat(&lin, p)?),
            cfg,
            tol.min(1e-8),
            &mut rng,
        )?);
    }

    let labels: Vec<usize> = (0..16).map(|i| i % c).collect();
    let labeled = LabeledBatch {
        inputs: random_matrix(labels.len(), d, 1.5, &mut rng),
        labels,
    };
    let pseudo_labels: Vec<usize> = (0..12).map(|_| rng.random_range(0..c)).collect();
    let pseudo = PseudoBatch::new(
        random_matrix(pseudo_labels.len(), d, 1.5, &mut rng),
        pseudo_labels.clone(),
        vec![1.0; pseudo_labels.len()],
        HiddenLabels::new(pseudo_labels),
        c,
    )?;
    let aug_rng = rng.clone();
    let flat = net.flat_params();

    {
        let mut zero = net.clone();
        zero.set_flat_params(&vec![0.0; flat.len()])?;
        let (_, g) = supervised_loss(&zero, &labeled, &aug, &mut aug_rng.clone())?;
        out.push(check_surface(
            "zero_model",
            &zero.flat_params(),
            &g.flatten(),
            |p| Ok(supervised_loss(&with_params(&zero, p)?, &labeled, &aug, &mut aug_rng.clone())?.0),
            cfg,
            tol,
            &mut rng,
        )?);
    }

    let (_, gs) = supervised_loss(&net, &labeled, &aug, &mut aug_rng.clone())?;
    out.push(check_surface(
        "L_s",
        &flat,
        &gs.flatten(),
        |p| Ok(supervised_loss(&with_params(&net, p)?, &labeled, &aug, &mut aug_rng.clone())?.0),
        cfg,
        tol,
        &mut rng,
    )?);

    let (_, gu) = unsupervised_loss(&net, &pseudo, &aug, &mut aug_rng.clone())?;
    out.push(check_surface(
        "L_u",
        &flat,
        &gu.flatten(),
        |p| Ok(unsupervised_loss(&with_params(&net, p)?, &pseudo, &aug, &mut aug_rng.clone())?.0),
        cfg,
        tol,
        &mut rng,
    )?);

    // β̄ perturbed away from β so the two heads differ.
    let mut beta_bar = net.classifier.clone();
    beta_bar.axpy(1.0, &Affine::xavier(c, net.feature_dim(), &mut rng))?;
    let ac = avg_clustering_loss(&net, &beta_bar, &pseudo, &aug, &mut aug_rng.clone())?;
    let theta_only = GradientSet {
        features: ac.theta.clone(),
        classifier: net.classifier.zeros_like(),
    };
    out.push(check_surface(
        "L_ac_theta",
        &flat,
        &theta_only.flatten(),
        |p| {
            Ok(avg_clustering_loss(&with_params(&net, p)?, &beta_bar, &pseudo, &aug, &mut aug_rng.clone())?
                .value)
        },
        cfg,
        tol,
        &mut rng,
    )?);
    out.push(check_surface(
        "L_ac_beta_bar",
        &affine_flat(&beta_bar),
        &affine_flat(&ac.beta_bar),
        |p| {
            let head = affine_from_flat(&beta_bar, p)?;
            Ok(avg_clustering_loss(&net, &head, &pseudo, &aug, &mut aug_rng.clone())?.value)
        },
        cfg,
        tol,
        &mut rng,
    )?);

    let obj = ObjectiveConfig {
        grad_relu: false,
        ..ObjectiveConfig::layermatch(LossWeights { w_u: 0.7, w_ac: 1.3 })
    };
    let mut avg = AvgClusteringState::new(&net.classifier, 2048, 0.999, 5e-4)?;
    avg.beta_bar = beta_bar.clone();
    avg.iteration = 1;
    let combined = |n: &Network| {
        let mut r = aug_rng.clone();
        let (mut a, mut b) = (r.clone(), r.clone());
        a.set_stream(91);
        b.set_stream(92);
        objective_from_pseudo(n, &labeled, &pseudo, Some(avg.clone()), &aug, &obj, &mut r, &mut a, &mut b)
    };
    let g = combined(&net)?.grads;
    out.push(check_surface(
        "combined",
        &flat,
        &g.flatten(),
        |p| Ok(combined(&with_params(&net, p)?)?.total),
        cfg,
        tol,
        &mut rng,
    )?);

    // Input gradients: n_coords/d points, one coordinate each.
    {
        let points = cfg.n_coords.div_ceil(d).max(1);
        let mut worst = 0.0f64;
        let mut coords = 0;
        for _ in 0..points {
            let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let class = rng.random_range(0..c);
            let analytic = net.grad_wrt_input(&Matrix::row_vector(&x0), class)?;
            let prob = |x: &[f64]| Ok(net.probs(&Matrix::row_vector(x))?[(0, class)]);
            let cfg_all = GradcheckConfig { n_coords: d, ..*cfg };
            let r = check_surface("input_grad", &x0, analytic.data(), prob, &cfg_all, tol, &mut rng)?;
            worst = worst.max(r.worst_rel_error);
            coords += r.coords;
        }
        out.push(SurfaceReport {
            surface: "input_grad",
            coords,
            worst_rel_error: worst,
            tolerance: tol,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_absolute_floor() {
        assert_eq!(rel_error(0.0, 0.0, 1e-10), 0.0);
        assert_eq!(rel_error(1e-12, -1e-12, 1e-10), 2e-12);
        assert!((rel_error(1.0, 1.1, 1e-10) - 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn suite_passes_on_default_model() {
        for seed in 0..4 {
            let cfg = GradcheckConfig { seed, ..GradcheckConfig::default() };
            let reports = gradcheck_suite(default_model, &cfg).unwrap();
            assert_eq!(reports.len(), 8);
            for r in &reports {
                assert!(r.coords >= 100, "{} sampled {}", r.surface, r.coords);
                assert!(r.pass(), "seed {seed} {}: {:e}", r.surface, r.worst_rel_error);
            }
            let lin = reports.iter().find(|r| r.surface == "squared_linear").unwrap();
            assert!(lin.worst_rel_error < 1e-8);
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = stream_rng(0, Stream::Probe);
        let x0 = vec![1.0, 2.0];
        let r = check_surface(
            "bad",
            &x0,
            &[2.0, 4.0 * 1.01],
            |x| Ok(x[0] * x[0] + x[1] * x[1]),
            &GradcheckConfig { n_coords: 2, ..GradcheckConfig::default() },
            1e-4,
            &mut rng,
        )
        .unwrap();
        assert!(!r.pass());
    }
}
