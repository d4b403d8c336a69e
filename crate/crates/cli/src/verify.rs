//! The `verify` subcommand: numerical checks rendered as report rows.

use std::str::FromStr;

use layermatch::netcore::{Activation, Affine, DenseLayer, FeatureExtractor, Matrix};
use layermatch::theoryverify::{
    chain_rule_suite, default_model, gradcheck_suite, lemma41_convergence, probe_trace, sigmoid,
    smooth, theorem42_monitor, BinaryModel, CheckRow, GradcheckConfig, GridSpec,
};
use layermatch::trainer::{run, TrainData};

use crate::config::Settings;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Gradcheck,
    Lemma41,
    Theorem42,
    ChainRule,
}

impl FromStr for Check {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcheck" => Ok(Check::Gradcheck),
            "lemma41" => Ok(Check::Lemma41),
            "theorem42" => Ok(Check::Theorem42),
            "chainrule" => Ok(Check::ChainRule),
            other => Err(CliError::Argument(format!("unknown check `{other}`"))),
        }
    }
}

fn row(check: &str, quantity: impl Into<String>, value: f64, threshold: f64, pass: bool) -> CheckRow {
    CheckRow {
        check: check.into(),
        quantity: quantity.into(),
        value,
        threshold,
        pass,
    }
}

pub fn gradcheck(cfg: &GradcheckConfig) -> Result<Vec<CheckRow>> {
    Ok(gradcheck_suite(default_model, cfg)?.iter().map(|r| r.to_row()).collect())
}

pub fn chainrule(models: usize, seed: u64, threshold: f64) -> Result<Vec<CheckRow>> {
    let worst = chain_rule_suite(models, seed)?;
    Ok(vec![row("chainrule", "max_abs_deviation", worst, threshold, worst < threshold)])
}

/// `P(x) = σ(x)` on `[-5, 5]`.
pub fn sigmoid_oracle_model() -> BinaryModel {
    let layer = DenseLayer {
        affine: Affine {
            weight: Matrix::identity(1),
            bias: Matrix::zeros(1, 1),
        },
        activation: Activation::Identity,
    };
    let extractor = FeatureExtractor::new(vec![layer]).expect("single layer");
    BinaryModel::new(extractor, vec![1.0], 0.0).expect("matching dims")
}

/// Rows: the absolute error `|discrete − exact|` at each spacing (threshold
/// `tolerance`), and the error ratio for each pair of spacings where one is
/// half the other (must lie in `[1.4, 2.6]`; the threshold column holds 1.4).
pub fn lemma41(spacings: &[f64], tolerance: f64) -> Result<Vec<CheckRow>> {
    let model = sigmoid_oracle_model();
    let grid = GridSpec::new(vec![-5.0], vec![5.0], 2)?;
    let exact = sigmoid(5.0) - sigmoid(-5.0);
    let rows = lemma41_convergence(&model, &grid, spacings)?;
    let mut out = vec![row(
        "lemma41",
        "integral_estimate",
        rows[0].integral_estimate,
        exact,
        (rows[0].integral_estimate - exact).abs() < 1e-6,
    )];
    for r in &rows {
        let err = (r.discrete_sum - exact).abs();
        out.push(row("lemma41", format!("abs_error_h={}", r.h), err, tolerance, err < tolerance));
    }
    for a in &rows {
        for b in &rows {
            if (a.h - 2.0 * b.h).abs() < 1e-12 * a.h {
                let ratio = (a.discrete_sum - exact).abs() / (b.discrete_sum - exact).abs();
                out.push(row(
                    "lemma41",
                    format!("error_ratio_h={}/{}", a.h, b.h),
                    ratio,
                    1.4,
                    (1.4..=2.6).contains(&ratio),
                ));
            }
        }
    }
    Ok(out)
}

/// Satisfied fraction per evaluation checkpoint of one training run, plus
/// the smoothed first-to-last change (must be `>= 0`).
pub fn theorem42(settings: &Settings, seed: u64, epsilon: f64, window: usize) -> Result<Vec<CheckRow>> {
    let mut train = settings.train.clone();
    train.seed = seed;
    let data = TrainData::build(&settings.data, seed)?;
    let out = run(&train, &data)?;
    let trace = probe_trace(&out.snapshots, 0)?;
    let fractions = theorem42_monitor(&trace, &data.test.inputs, epsilon)?;
    let mut rows: Vec<CheckRow> = fractions
        .iter()
        .map(|&(t, f)| row("theorem42", format!("fraction_t={t}"), f, epsilon, (0.0..=1.0).contains(&f)))
        .collect();
    let values: Vec<f64> = fractions.iter().map(|&(_, f)| f).collect();
    let smoothed = smooth(&values, window);
    let change = smoothed.last().copied().unwrap_or(0.0) - smoothed.first().copied().unwrap_or(0.0);
    rows.push(row("theorem42", format!("smoothed_trend_w={window}"), change, 0.0, change >= 0.0));
    Ok(rows)
}
