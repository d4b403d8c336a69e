//! The optimization loop, baselines, EMAs, evaluation and checkpoints.

mod metrics;
mod optim;
mod state;

use std::fmt;
use std::str::FromStr;

use crate::data::{
    generate, split, AugmentationSpec, BatchSampler, DatasetSpec, Generator, LabeledSet,
    UnlabeledSet,
};
use crate::error::{arg_err, Error, Result};
use crate::netcore::{Activation, Network};
use crate::rng::{stream_rng, Stream};
use crate::sslcore::{
    overall_objective, supervised_loss, LabelCorruption, LossWeights, ObjectiveConfig,
    StepInputs, StepRngs, ThresholdKind, ThresholdPolicy,
};

pub use metrics::{
    compute_gamma_upsilon, evaluate, evaluate_with_head, read_metrics_csv, write_metrics_csv,
    GammaUpsilon, MetricsRecord, METRICS_HEADER,
};
pub use optim::{cosine_lr, sgd_step, update_model_ema, SgdState};
pub use state::ModelState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    SupervisedOnly,
    PseudoLabel,
    FixMatch,
    LayerMatch,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::SupervisedOnly,
        Method::PseudoLabel,
        Method::FixMatch,
        Method::LayerMatch,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::SupervisedOnly => "supervised_only",
            Method::PseudoLabel => "pseudo_label",
            Method::FixMatch => "fixmatch",
            Method::LayerMatch => "layermatch",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::Argument(format!("unknown method `{s}`")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    /// Total iterations `K`.
    pub iterations: usize,
    /// Initial learning rate `η0`.
    pub lr: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub threshold: ThresholdKind,
    pub tau: f64,
    pub threshold_momentum: f64,
    pub weights: LossWeights,
    /// Avg-Clustering reset period `N`.
    pub avg_period: u64,
    /// Avg-Clustering blend momentum `m`.
    pub avg_momentum: f64,
    /// Avg-Clustering inner step `α`.
    pub avg_step: f64,
    pub model_ema_momentum: f64,
    pub prediction_ema_momentum: f64,
    /// Take pseudo-labels from the prediction-EMA model instead of the live one.
    pub pseudo_from_ema: bool,
    /// Ablation switches for the layermatch method.
    pub grad_relu: bool,
    pub avg_clustering: bool,
    pub ac_theta_coupling: bool,
    pub share_strong_aug: bool,
    pub corruption: LabelCorruption,
    pub eval_every: usize,
    /// Report accuracy through `β̄` instead of `β`.
    pub eval_beta_bar: bool,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub aug: AugmentationSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::LayerMatch,
            iterations: 5000,
            lr: 0.03,
            sgd_momentum: 0.9,
            weight_decay: 5e-4,
            batch_labeled: 8,
            batch_unlabeled: 64,
            threshold: ThresholdKind::Fixed,
            tau: 0.95,
            threshold_momentum: 0.999,
            weights: LossWeights { w_u: 1.0, w_ac: 1.0 },
            avg_period: 2048,
            avg_momentum: 0.999,
            avg_step: 5e-4,
            model_ema_momentum: 0.999,
            prediction_ema_momentum: 0.999,
            pseudo_from_ema: false,
            grad_relu: true,
            avg_clustering: true,
            ac_theta_coupling: true,
            share_strong_aug: false,
            corruption: LabelCorruption::None,
            eval_every: 500,
            eval_beta_bar: false,
            seed: 0,
            hidden: vec![32, 32],
            activation: Activation::Relu,
            aug: AugmentationSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                arg_err(format!("{name} must lie in [0, 1), got {v}"))
            }
        };
        unit("sgd_momentum", self.sgd_momentum)?;
        unit("model_ema_momentum", self.model_ema_momentum)?;
        unit("prediction_ema_momentum", self.prediction_ema_momentum)?;
        unit("threshold_momentum", self.threshold_momentum)?;
        if !(0.0..=1.0).contains(&self.avg_momentum) {
            return arg_err("avg_momentum must lie in [0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return arg_err(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return arg_err("weight_decay must be >= 0");
        }
        if self.batch_labeled == 0 {
            return arg_err("batch_labeled must be >= 1");
        }
        if self.eval_every == 0 {
            return arg_err("eval_every must be >= 1");
        }
        if self.avg_period == 0 {
            return arg_err("avg_period must be >= 1");
        }
        if !(self.avg_step > 0.0 && self.avg_step.is_finite()) {
            return arg_err("avg_step must be > 0");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return arg_err("hidden layer widths must be nonempty and positive");
        }
        self.weights.validate()?;
        self.aug.validate()
    }

    fn uses_unlabeled(&self) -> bool {
        self.method != Method::SupervisedOnly
    }

    fn objective(&self) -> ObjectiveConfig {
        match self.method {
            Method::LayerMatch => ObjectiveConfig {
                weights: self.weights,
                grad_relu: self.grad_relu,
                avg_clustering: self.avg_clustering,
                ac_theta_coupling: self.ac_theta_coupling,
                share_strong_aug: self.share_strong_aug,
            },
            _ => ObjectiveConfig::consistency_only(self.weights.w_u),
        }
    }

    fn policy(&self, num_classes: usize) -> Result<ThresholdPolicy> {
        match (self.method, self.threshold) {
            (Method::LayerMatch, ThresholdKind::Adaptive) => {
                ThresholdPolicy::adaptive(self.tau, self.threshold_momentum, num_classes)
            }
            _ => ThresholdPolicy::fixed(self.tau, num_classes),
        }
    }

    fn augmentation(&self) -> AugmentationSpec {
        match self.method {
            Method::PseudoLabel => self.aug.weak_as_strong(),
            _ => self.aug,
        }
    }
}

/// How to build the train/unlabeled/test pools.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub generator: Generator,
    pub num_classes: usize,
    pub labels_per_class: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub noise_sigma: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            generator: Generator::TwoMoons,
            num_classes: 2,
            labels_per_class: 4,
            n_unlabeled: 2000,
            n_test: 1000,
            noise_sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub test: LabeledSet,
    pub num_classes: usize,
}

/// SplitMix64 finaliser, used to derive independent dataset seeds.
fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl TrainData {
    /// Generates the pools for `seed`: a training draw of
    /// `labels_per_class·C + n_unlabeled` points split into labeled and
    /// unlabeled parts, plus an independent test draw.
    pub fn build(cfg: &DataConfig, seed: u64) -> Result<Self> {
        let n_train = cfg.labels_per_class * cfg.num_classes + cfg.n_unlabeled;
        let (train, test) = if let Generator::IdxFile { .. } = cfg.generator {
            let spec = DatasetSpec {
                generator: cfg.generator.clone(),
                n_samples: 0,
                noise_sigma: 0.0,
                num_classes: cfg.num_classes,
                seed,
                labels_per_class: 0,
            };
            let mut all = generate(&spec)?;
            if all.len() < n_train + cfg.n_test {
                return arg_err(format!(
                    "IDX data has {} examples, need {}",
                    all.len(),
                    n_train + cfg.n_test
                ));
            }
            let mut rng = stream_rng(seed, Stream::TestSet);
            rand::seq::SliceRandom::shuffle(&mut all[..], &mut rng);
            let test = all.split_off(all.len() - cfg.n_test);
            all.truncate(n_train);
            (all, test)
        } else {
            let spec = |n, seed| DatasetSpec {
                generator: cfg.generator.clone(),
                n_samples: n,
                noise_sigma: cfg.noise_sigma,
                num_classes: cfg.num_classes,
                seed,
                labels_per_class: 0,
            };
            (
                generate(&spec(n_train, derive_seed(seed, 1)))?,
                generate(&spec(cfg.n_test, derive_seed(seed, 2)))?,
            )
        };
        let (labeled, unlabeled) = split(&train, cfg.labels_per_class, seed)?;
        let dim = train.first().map_or(0, |e| e.features.len());
        Ok(Self {
            labeled: LabeledSet::from_examples(&labeled, dim)?,
            unlabeled: UnlabeledSet::from_examples(&unlabeled, dim)?,
            test: LabeledSet::evaluation_set(&test, dim)?,
            num_classes: cfg.num_classes,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.labeled.inputs.cols()
    }
}

/// Live network captured at an evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub network: Network,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: ModelState,
    pub metrics: Vec<MetricsRecord>,
    pub snapshots: Vec<Snapshot>,
}

pub fn run(cfg: &TrainConfig, data: &TrainData) -> Result<RunOutput> {
    run_with_observer(cfg, data, |_, _| {})
}

/// Like [`run`], calling `observer(k, state)` after every completed iteration `k`.
pub fn run_with_observer(
    cfg: &TrainConfig,
    data: &TrainData,
    mut observer: impl FnMut(usize, &ModelState),
) -> Result<RunOutput> {
    cfg.validate()?;
    let mut state = ModelState::init(cfg, data.input_dim(), data.num_classes)?;
    let mut metrics = Vec::new();
    let mut snapshots = Vec::new();
    if cfg.iterations == 0 {
        return Ok(RunOutput {
            state,
            metrics,
            snapshots,
        });
    }

    let batch_unlabeled = if cfg.uses_unlabeled() { cfg.batch_unlabeled } else { 0 };
    let mut sampler = BatchSampler::new(
        &data.labeled,
        &data.unlabeled,
        cfg.batch_labeled,
        batch_unlabeled,
        cfg.seed,
    )?;
    let mut policy = cfg.policy(data.num_classes)?;
    let objective = cfg.objective();
    let aug = cfg.augmentation();
    let mut sgd = SgdState::new(&state.network);
    let mut rng_labeled = stream_rng(cfg.seed, Stream::LabeledAug);
    let mut rng_pseudo = stream_rng(cfg.seed, Stream::PseudoAug);
    let mut rng_unsup = stream_rng(cfg.seed, Stream::UnsupervisedAug);
    let mut rng_avg = stream_rng(cfg.seed, Stream::AvgClusteringAug);

    let mut acc = LossAccumulator::default();
    for k in 0..cfg.iterations {
        let lr = cosine_lr(k, cfg.iterations, cfg.lr)?;
        let (lb, ub) = sampler.next().expect("sampler is infinite");

        let (losses, grads) = if cfg.uses_unlabeled() {
            let source = match (&state.prediction_ema, cfg.pseudo_from_ema) {
                (Some(ema), true) => ema,
                _ => &state.network,
            };
            let inputs = StepInputs {
                net: &state.network,
                pseudo_source: source,
                labeled: &lb,
                unlabeled: &ub,
                policy: &policy,
                aug: &aug,
                corruption: cfg.corruption,
            };
            let out = overall_objective(
                &inputs,
                state.avg.take(),
                &objective,
                StepRngs {
                    labeled_aug: &mut rng_labeled,
                    pseudo_aug: &mut rng_pseudo,
                    unsupervised_aug: &mut rng_unsup,
                    avg_aug: &mut rng_avg,
                },
            )
            .map_err(at_iteration(k))?;
            state.avg = out.avg;
            if policy.kind() == ThresholdKind::Adaptive {
                policy = policy.update_adaptive_threshold(&out.selection.max_confidences)?;
            }
            ([out.loss_s, out.loss_u, out.loss_ac], out.grads)
        } else {
            let (ls, g) = supervised_loss(&state.network, &lb, &aug, &mut rng_labeled)
                .map_err(at_iteration(k))?;
            ([ls, 0.0, 0.0], g)
        };

        if losses.iter().any(|v| !v.is_finite()) || !grads.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss or gradient at iteration {k}: L_s={} L_u={} L_ac={}",
                losses[0], losses[1], losses[2]
            )));
        }
        acc.add(losses);

        sgd_step(
            &mut state.network,
            &grads,
            &mut sgd,
            lr,
            cfg.sgd_momentum,
            cfg.weight_decay,
        )?;
        if let Some(ema) = state.model_ema.as_mut() {
            update_model_ema(ema, &state.network, cfg.model_ema_momentum)?;
        }
        if let Some(ema) = state.prediction_ema.as_mut() {
            update_model_ema(ema, &state.network, cfg.prediction_ema_momentum)?;
        }
        observer(k, &state);

        let done = k + 1;
        if done % cfg.eval_every == 0 || done == cfg.iterations {
            let [loss_s, loss_u, loss_ac] = acc.take_mean();
            let eval_net = state.eval_network();
            let test_accuracy = match (&state.avg, cfg.eval_beta_bar) {
                (Some(avg), true) => evaluate_with_head(eval_net, &avg.beta_bar, &data.test)?,
                _ => evaluate(eval_net, &data.test)?,
            };
            let source = match (&state.prediction_ema, cfg.pseudo_from_ema) {
                (Some(ema), true) => ema,
                _ => &state.network,
            };
            let gu = compute_gamma_upsilon(source, &data.unlabeled, policy.current_tau())?;
            metrics.push(MetricsRecord {
                iteration: done,
                loss_s,
                loss_u,
                loss_ac,
                test_accuracy,
                gamma: gu.gamma,
                upsilon: gu.upsilon,
                tau: policy.current_tau(),
                lr,
            });
            snapshots.push(Snapshot {
                iteration: done,
                network: state.network.clone(),
            });
        }
    }
    Ok(RunOutput {
        state,
        metrics,
        snapshots,
    })
}

fn at_iteration(k: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("{msg} at iteration {k}")),
        other => other,
    }
}

#[derive(Default)]
struct LossAccumulator {
    sums: [f64; 3],
    count: usize,
}

impl LossAccumulator {
    fn add(&mut self, v: [f64; 3]) {
        for (s, x) in self.sums.iter_mut().zip(v) {
            *s += x;
        }
        self.count += 1;
    }

    fn take_mean(&mut self) -> [f64; 3] {
        let n = self.count.max(1) as f64;
        let out = self.sums.map(|s| s / n);
        *self = Self::default();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_data() -> TrainData {
        TrainData::build(
            &DataConfig {
                n_unlabeled: 200,
                n_test: 100,
                ..DataConfig::default()
            },
            0,
        )
        .unwrap()
    }

    fn small_cfg(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            iterations: 60,
            eval_every: 20,
            hidden: vec![8, 8],
            batch_unlabeled: 16,
            tau: 0.7,
            avg_period: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
        }
        assert!("mixmatch".parse::<Method>().is_err());
    }

    #[test]
    fn zero_iterations_returns_initial_model() {
        let data = small_data();
        let cfg = TrainConfig {
            iterations: 0,
            ..small_cfg(Method::LayerMatch)
        };
        let out = run(&cfg, &data).unwrap();
        assert!(out.metrics.is_empty());
        let init = ModelState::init(&cfg, 2, 2).unwrap();
        assert_eq!(out.state.network, init.network);
    }

    #[test]
    fn every_method_runs_and_logs() {
        let data = small_data();
        for m in Method::ALL {
            let out = run(&small_cfg(m), &data).unwrap();
            assert_eq!(out.metrics.len(), 3);
            assert_eq!(out.metrics.last().unwrap().iteration, 60);
            for r in &out.metrics {
                assert!(r.loss_s.is_finite() && r.loss_u.is_finite() && r.loss_ac.is_finite());
                assert!((0.0..=1.0).contains(&r.test_accuracy));
                assert!((0.0..=1.0).contains(&r.gamma));
                assert!(r.lr > 0.0 && r.lr <= 0.03);
            }
            if m != Method::LayerMatch {
                assert!(out.metrics.iter().all(|r| r.loss_ac == 0.0));
            }
        }
    }

    #[test]
    fn same_seed_same_metrics() {
        let data = small_data();
        let cfg = small_cfg(Method::LayerMatch);
        let a = run(&cfg, &data).unwrap();
        let b = run(&cfg, &data).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.state.network, b.state.network);
    }

    #[test]
    fn adaptive_threshold_moves() {
        let data = small_data();
        let cfg = TrainConfig {
            threshold: ThresholdKind::Adaptive,
            threshold_momentum: 0.5,
            ..small_cfg(Method::LayerMatch)
        };
        let out = run(&cfg, &data).unwrap();
        assert!(out.metrics.iter().any(|r| r.tau != 0.7));
    }

    #[test]
    fn nan_learning_rate_is_rejected_and_divergence_aborts() {
        let data = small_data();
        let bad = TrainConfig {
            lr: f64::NAN,
            ..small_cfg(Method::FixMatch)
        };
        assert!(run(&bad, &data).is_err());
        let exploding = TrainConfig {
            lr: 1e200,
            sgd_momentum: 0.0,
            model_ema_momentum: 0.0,
            ..small_cfg(Method::SupervisedOnly)
        };
        match run(&exploding, &data) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("iteration"), "{msg}"),
            other => panic!("expected numeric abort, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.sgd_momentum = 1.0;
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.lr = 0.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn data_build_sizes() {
        let d = small_data();
        assert_eq!(d.labeled.len(), 8);
        assert_eq!(d.unlabeled.len(), 200);
        assert_eq!(d.test.len(), 100);
        assert_eq!(TrainData::build(&DataConfig::default(), 0).unwrap().unlabeled.len(), 2000);
    }
}
