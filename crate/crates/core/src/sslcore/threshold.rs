use crate::error::{arg_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdKind {
    Fixed,
    /// Global EMA of the batch-mean max-class confidence.
    Adaptive,
}

/// Confidence threshold `τ` for admitting pseudo-labels.
///
/// `current_tau` always lies strictly inside `(1 / num_classes, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPolicy {
    kind: ThresholdKind,
    current_tau: f64,
    ema_momentum: f64,
    num_classes: usize,
}

const MARGIN: f64 = 1e-6;

fn check_tau(tau: f64, num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return arg_err("threshold needs at least two classes");
    }
    let floor = 1.0 / num_classes as f64;
    if !(tau > floor && tau < 1.0) {
        return arg_err(format!("tau {tau} outside ({floor}, 1)"));
    }
    Ok(())
}

impl ThresholdPolicy {
    pub fn fixed(tau: f64, num_classes: usize) -> Result<Self> {
        check_tau(tau, num_classes)?;
        Ok(Self {
            kind: ThresholdKind::Fixed,
            current_tau: tau,
            ema_momentum: 0.0,
            num_classes,
        })
    }

    pub fn adaptive(initial_tau: f64, ema_momentum: f64, num_classes: usize) -> Result<Self> {
        check_tau(initial_tau, num_classes)?;
        if !(0.0..=1.0).contains(&ema_momentum) {
            return arg_err(format!("threshold momentum {ema_momentum} outside [0, 1]"));
        }
        Ok(Self {
            kind: ThresholdKind::Adaptive,
            current_tau: initial_tau,
            ema_momentum,
            num_classes,
        })
    }

    pub fn kind(&self) -> ThresholdKind {
        self.kind
    }

    pub fn current_tau(&self) -> f64 {
        self.current_tau
    }

    pub fn ema_momentum(&self) -> f64 {
        self.ema_momentum
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `τ ← m·τ + (1 − m)·mean(confidences)`, clamped to
    /// `(1/C + 1e-6, 1 − 1e-6)`. An empty batch leaves `τ` unchanged.
    pub fn update_adaptive_threshold(mut self, confidences: &[f64]) -> Result<Self> {
        if self.kind != ThresholdKind::Adaptive {
            return Err(Error::State("cannot adapt a fixed threshold".into()));
        }
        if confidences.is_empty() {
            return Ok(self);
        }
        let mean = confidences.iter().sum::<f64>() / confidences.len() as f64;
        let m = self.ema_momentum;
        let tau = m * self.current_tau + (1.0 - m) * mean;
        let lo = 1.0 / self.num_classes as f64 + MARGIN;
        self.current_tau = tau.clamp(lo, 1.0 - MARGIN);
        Ok(self)
    }
}
