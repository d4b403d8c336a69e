//! Flat `key = value` experiment configs.
//!
//! One assignment per line, `#` starts a comment. Unknown keys are errors.
//! List-valued keys (`methods`, `seeds`, `hidden`, `sweep.<key>`) take
//! comma-separated values. See [`KEYS`] for the full list.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use layermatch::data::{AugmentationSpec, Generator};
use layermatch::netcore::Activation;
use layermatch::sslcore::{LabelCorruption, ThresholdKind};
use layermatch::trainer::{DataConfig, Method, TrainConfig};

use crate::error::{config_err, CliError, Result};

/// Every accepted scalar key, in dump order.
pub const KEYS: &[&str] = &[
    "iterations",
    "lr",
    "sgd_momentum",
    "weight_decay",
    "batch_labeled",
    "batch_unlabeled",
    "threshold",
    "tau",
    "threshold_momentum",
    "w_u",
    "w_ac",
    "avg_period",
    "avg_momentum",
    "avg_step",
    "model_ema_momentum",
    "prediction_ema_momentum",
    "pseudo_from_ema",
    "grad_relu",
    "avg_clustering",
    "ac_theta_coupling",
    "share_strong_aug",
    "corruption",
    "eval_every",
    "eval_beta_bar",
    "hidden",
    "activation",
    "weak_jitter_sigma",
    "strong_jitter_sigma",
    "strong_mask_prob",
    "dataset",
    "idx_images",
    "idx_labels",
    "num_classes",
    "labels_per_class",
    "n_unlabeled",
    "n_test",
    "noise_sigma",
];

/// Everything one training run needs, before the method and seed are fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub data: DataConfig,
    dataset: String,
    idx_images: Option<PathBuf>,
    idx_labels: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        let data = DataConfig::default();
        Self {
            train: TrainConfig::default(),
            dataset: data.generator.tag().to_string(),
            data,
            idx_images: None,
            idx_labels: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::Config {
            key: key.into(),
            message: format!("cannot parse `{value}`"),
        })
}

fn real(key: &str, value: &str, ok: impl Fn(f64) -> bool, range: &str) -> Result<f64> {
    let v: f64 = parse(key, value)?;
    if v.is_finite() && ok(v) {
        Ok(v)
    } else {
        config_err(key, format!("{value} is outside {range}"))
    }
}

fn count(key: &str, value: &str, min: usize) -> Result<usize> {
    let v: usize = parse(key, value)?;
    if v < min {
        return config_err(key, format!("must be at least {min}, got {v}"));
    }
    Ok(v)
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => config_err(key, format!("expected true or false, got `{value}`")),
    }
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Settings {
    /// Applies one assignment, checking the value's own range.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let d = &mut self.data;
        let unit = |v: f64| (0.0..1.0).contains(&v);
        let nonneg = |v: f64| v >= 0.0;
        match key {
            "iterations" => t.iterations = count(key, value, 1)?,
            "lr" => t.lr = real(key, value, |v| v > 0.0, "(0, inf)")?,
            "sgd_momentum" => t.sgd_momentum = real(key, value, unit, "[0, 1)")?,
            "weight_decay" => t.weight_decay = real(key, value, nonneg, "[0, inf)")?,
            "batch_labeled" => t.batch_labeled = count(key, value, 1)?,
            "batch_unlabeled" => t.batch_unlabeled = count(key, value, 1)?,
            "threshold" => {
                t.threshold = match value {
                    "fixed" => ThresholdKind::Fixed,
                    "adaptive" => ThresholdKind::Adaptive,
                    _ => return config_err(key, format!("expected fixed or adaptive, got `{value}`")),
                }
            }
            "tau" => t.tau = real(key, value, |v| v > 0.0 && v < 1.0, "(0, 1)")?,
            "threshold_momentum" => t.threshold_momentum = real(key, value, unit, "[0, 1)")?,
            "w_u" => t.weights.w_u = real(key, value, nonneg, "[0, inf)")?,
            "w_ac" => t.weights.w_ac = real(key, value, nonneg, "[0, inf)")?,
            "avg_period" => {
                t.avg_period = parse(key, value)?;
                if t.avg_period == 0 {
                    return config_err(key, "must be at least 1");
                }
            }
            "avg_momentum" => t.avg_momentum = real(key, value, |v| (0.0..=1.0).contains(&v), "[0, 1]")?,
            "avg_step" => t.avg_step = real(key, value, |v| v > 0.0, "(0, inf)")?,
            "model_ema_momentum" => t.model_ema_momentum = real(key, value, unit, "[0, 1)")?,
            "prediction_ema_momentum" => {
                t.prediction_ema_momentum = real(key, value, unit, "[0, 1)")?
            }
            "pseudo_from_ema" => t.pseudo_from_ema = flag(key, value)?,
            "grad_relu" => t.grad_relu = flag(key, value)?,
            "avg_clustering" => t.avg_clustering = flag(key, value)?,
            "ac_theta_coupling" => t.ac_theta_coupling = flag(key, value)?,
            "share_strong_aug" => t.share_strong_aug = flag(key, value)?,
            "corruption" => {
                t.corruption = match value {
                    "none" => LabelCorruption::None,
                    "flip_all" => LabelCorruption::FlipAll,
                    _ => return config_err(key, format!("expected none or flip_all, got `{value}`")),
                }
            }
            "eval_every" => t.eval_every = count(key, value, 1)?,
            "eval_beta_bar" => t.eval_beta_bar = flag(key, value)?,
            "hidden" => {
                let widths = list(value).map(|w| count(key, w, 1)).collect::<Result<Vec<_>>>()?;
                if widths.is_empty() {
                    return config_err(key, "needs at least one layer width");
                }
                t.hidden = widths;
            }
            "activation" => {
                t.activation = value
                    .parse::<Activation>()
                    .or_else(|_| config_err(key, format!("unknown activation `{value}`")))?
            }
            "weak_jitter_sigma" => t.aug.weak_jitter_sigma = real(key, value, nonneg, "[0, inf)")?,
            "strong_jitter_sigma" => t.aug.strong_jitter_sigma = real(key, value, nonneg, "[0, inf)")?,
            "strong_mask_prob" => {
                t.aug.strong_mask_prob = real(key, value, |v| (0.0..=1.0).contains(&v), "[0, 1]")?
            }
            "dataset" => {
                if value != "idx_file" && Generator::from_tag(value).is_err() {
                    return config_err(key, format!("unknown dataset `{value}`"));
                }
                self.dataset = value.to_string();
            }
            "idx_images" => self.idx_images = Some(PathBuf::from(value)),
            "idx_labels" => self.idx_labels = Some(PathBuf::from(value)),
            "num_classes" => d.num_classes = count(key, value, 2)?,
            "labels_per_class" => d.labels_per_class = count(key, value, 1)?,
            "n_unlabeled" => d.n_unlabeled = count(key, value, 0)?,
            "n_test" => d.n_test = count(key, value, 1)?,
            "noise_sigma" => d.noise_sigma = real(key, value, nonneg, "[0, inf)")?,
            _ => return Err(CliError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Cross-key checks and construction of the data generator.
    fn finish(&mut self) -> Result<()> {
        self.data.generator = match self.dataset.as_str() {
            "idx_file" => match (&self.idx_images, &self.idx_labels) {
                (Some(images), Some(labels)) => Generator::IdxFile {
                    images: images.clone(),
                    labels: labels.clone(),
                },
                _ => return config_err("dataset", "idx_file needs idx_images and idx_labels"),
            },
            tag => Generator::from_tag(tag)?,
        };
        let c = self.data.num_classes;
        if self.data.generator == Generator::TwoMoons && c != 2 {
            return config_err("num_classes", "two_moons has exactly 2 classes");
        }
        if self.train.tau <= 1.0 / c as f64 {
            return config_err("tau", format!("must exceed 1/num_classes = {}", 1.0 / c as f64));
        }
        let AugmentationSpec {
            weak_jitter_sigma,
            strong_jitter_sigma,
            ..
        } = self.train.aug;
        if strong_jitter_sigma < weak_jitter_sigma {
            return config_err("strong_jitter_sigma", "must be at least weak_jitter_sigma");
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        let t = &self.train;
        let d = &self.data;
        match key {
            "iterations" => t.iterations.to_string(),
            "lr" => t.lr.to_string(),
            "sgd_momentum" => t.sgd_momentum.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "batch_labeled" => t.batch_labeled.to_string(),
            "batch_unlabeled" => t.batch_unlabeled.to_string(),
            "threshold" => match t.threshold {
                ThresholdKind::Fixed => "fixed".into(),
                ThresholdKind::Adaptive => "adaptive".into(),
            },
            "tau" => t.tau.to_string(),
            "threshold_momentum" => t.threshold_momentum.to_string(),
            "w_u" => t.weights.w_u.to_string(),
            "w_ac" => t.weights.w_ac.to_string(),
            "avg_period" => t.avg_period.to_string(),
            "avg_momentum" => t.avg_momentum.to_string(),
            "avg_step" => t.avg_step.to_string(),
            "model_ema_momentum" => t.model_ema_momentum.to_string(),
            "prediction_ema_momentum" => t.prediction_ema_momentum.to_string(),
            "pseudo_from_ema" => t.pseudo_from_ema.to_string(),
            "grad_relu" => t.grad_relu.to_string(),
            "avg_clustering" => t.avg_clustering.to_string(),
            "ac_theta_coupling" => t.ac_theta_coupling.to_string(),
            "share_strong_aug" => t.share_strong_aug.to_string(),
            "corruption" => match t.corruption {
                LabelCorruption::None => "none".into(),
                LabelCorruption::FlipAll => "flip_all".into(),
            },
            "eval_every" => t.eval_every.to_string(),
            "eval_beta_bar" => t.eval_beta_bar.to_string(),
            "hidden" => join(&t.hidden),
            "activation" => t.activation.to_string(),
            "weak_jitter_sigma" => t.aug.weak_jitter_sigma.to_string(),
            "strong_jitter_sigma" => t.aug.strong_jitter_sigma.to_string(),
            "strong_mask_prob" => t.aug.strong_mask_prob.to_string(),
            "dataset" => self.dataset.clone(),
            "idx_images" => self.idx_images.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "idx_labels" => self.idx_labels.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "num_classes" => d.num_classes.to_string(),
            "labels_per_class" => d.labels_per_class.to_string(),
            "n_unlabeled" => d.n_unlabeled.to_string(),
            "n_test" => d.n_test.to_string(),
            "noise_sigma" => d.noise_sigma.to_string(),
            _ => unreachable!("dump only walks KEYS"),
        }
    }
}

/// A resolved experiment: base settings crossed with methods, seeds and sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub base: Settings,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Swept keys (sorted) and their values in the order given.
    pub sweeps: BTreeMap<String, Vec<String>>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            base: Settings::default(),
            methods: vec![Method::LayerMatch],
            seeds: vec![0],
            sweeps: BTreeMap::new(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// One point of the plan's cross product.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub seed: u64,
    pub sweep: Vec<(String, String)>,
    pub settings: Settings,
}

impl Cell {
    /// Directory name under the plan's output dir, e.g. `layermatch.seed1.avg_period=2048`.
    pub fn name(&self) -> String {
        let mut s = format!("{}.seed{}", self.method, self.seed);
        for (k, v) in &self.sweep {
            let _ = write!(s, ".{k}={v}");
        }
        s
    }

    /// `key=value` pairs of the swept keys, `-` when nothing is swept.
    pub fn sweep_label(&self) -> String {
        if self.sweep.is_empty() {
            "-".into()
        } else {
            self.sweep.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
        }
    }
}

impl ExperimentPlan {
    /// Cells in lexicographic order of (method, seed, sweep values), each
    /// position following the order given in the config; swept keys are
    /// ordered alphabetically, the last varying fastest.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let keys: Vec<&String> = self.sweeps.keys().collect();
        let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for k in &keys {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    self.sweeps[*k].iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(((*k).clone(), v.clone()));
                        p
                    })
                })
                .collect();
        }
        let mut out = Vec::new();
        for &method in &self.methods {
            for &seed in &self.seeds {
                for combo in &combos {
                    let mut settings = self.base.clone();
                    for (k, v) in combo {
                        settings.set(k, v)?;
                    }
                    settings.finish()?;
                    settings.train.method = method;
                    settings.train.seed = seed;
                    settings.train.validate().map_err(|e| CliError::Config {
                        key: "config".into(),
                        message: e.to_string(),
                    })?;
                    out.push(Cell {
                        method,
                        seed,
                        sweep: combo.clone(),
                        settings,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Every setting, one `key = value` per line; parses back to the same plan.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "methods = {}", join(&self.methods));
        let _ = writeln!(s, "seeds = {}", join(&self.seeds));
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        for key in KEYS {
            let v = self.base.value_of(key);
            if !v.is_empty() {
                let _ = writeln!(s, "{key} = {v}");
            }
        }
        for (k, vs) in &self.sweeps {
            let _ = writeln!(s, "sweep.{k} = {}", vs.join(","));
        }
        s
    }

    /// Overrides the seed list with `LAYERMATCH_SEED` when it is set.
    pub fn apply_env_seed(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            let seed = v.trim().parse().map_err(|_| CliError::Config {
                key: "LAYERMATCH_SEED".into(),
                message: format!("cannot parse `{v}`"),
            })?;
            self.seeds = vec![seed];
        }
        Ok(())
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentPlan> {
    let mut plan = ExperimentPlan::default();
    let mut seen = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Argument(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        if seen.insert(key.to_string(), lineno).is_some() {
            return config_err(key, "assigned more than once");
        }
        match key {
            "method" | "methods" => {
                plan.methods = list(value)
                    .map(|m| m.parse::<Method>().or_else(|_| config_err(key, format!("unknown method `{m}`"))))
                    .collect::<Result<_>>()?;
                if plan.methods.is_empty() {
                    return config_err(key, "needs at least one method");
                }
            }
            "seed" | "seeds" => {
                plan.seeds = list(value).map(|s| parse(key, s)).collect::<Result<_>>()?;
                if plan.seeds.is_empty() {
                    return config_err(key, "needs at least one seed");
                }
            }
            "output_dir" => plan.output_dir = PathBuf::from(value),
            _ => {
                if let Some(swept) = key.strip_prefix("sweep.") {
                    let values: Vec<String> = list(value).map(String::from).collect();
                    if values.is_empty() {
                        return config_err(key, "needs at least one value");
                    }
                    if !KEYS.contains(&swept) {
                        return Err(CliError::UnknownKey(swept.to_string()));
                    }
                    // Validate each value eagerly so typos fail before any run.
                    for v in &values {
                        plan.base.clone().set(swept, v)?;
                    }
                    plan.sweeps.insert(swept.to_string(), values);
                } else {
                    plan.base.set(key, value)?;
                }
            }
        }
    }
    if seen.contains_key("method") && seen.contains_key("methods") {
        return config_err("methods", "give either method or methods, not both");
    }
    if seen.contains_key("seed") && seen.contains_key("seeds") {
        return config_err("seeds", "give either seed or seeds, not both");
    }
    let mut check = plan.base.clone();
    check.finish()?;
    // Sweeps interact with cross-key rules; resolve every cell once now.
    plan.cells()?;
    Ok(plan)
}

pub fn load_config(path: &Path) -> Result<ExperimentPlan> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Argument(format!("cannot read config {}: {e}", path.display()))
    })?;
    parse_config(&text)
}
