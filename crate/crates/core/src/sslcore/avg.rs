use crate::error::{arg_err, shape_err, Result};
use crate::netcore::{Affine, Classifier};

/// The averaged classifier `β̄` and its update schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct AvgClusteringState {
    pub beta_bar: Classifier,
    /// Reset period `N`.
    pub period: u64,
    /// Blend momentum `m`.
    pub momentum: f64,
    /// Inner gradient step `α`.
    pub step: f64,
    /// Iteration counter `t` of the next update.
    pub iteration: u64,
}

impl AvgClusteringState {
    /// Starts with `β̄ = β` at `t = 0`.
    pub fn new(live_beta: &Classifier, period: u64, momentum: f64, step: f64) -> Result<Self> {
        if period == 0 {
            return arg_err("Avg-Clustering period N must be >= 1");
        }
        if !(0.0..=1.0).contains(&momentum) {
            return arg_err(format!("Avg-Clustering momentum {momentum} outside [0, 1]"));
        }
        if !(step > 0.0 && step.is_finite()) {
            return arg_err(format!("Avg-Clustering step {step} must be > 0"));
        }
        Ok(Self {
            beta_bar: live_beta.clone(),
            period,
            momentum,
            step,
            iteration: 0,
        })
    }

    pub fn is_reset_step(&self) -> bool {
        self.iteration.is_multiple_of(self.period)
    }

    /// One schedule step, then `t += 1`:
    ///
    /// - `t mod N == 0`: `β̄ ← β` (exact copy)
    /// - otherwise: `β̃ = β̄ − α·g`, `β̄ ← m·β̄ + (1 − m)·β̃`
    pub fn update_avg_classifier(
        mut self,
        live_beta: &Classifier,
        grad_beta_bar: &Affine,
    ) -> Result<Self> {
        if !self.beta_bar.same_shape(live_beta) || !self.beta_bar.same_shape(grad_beta_bar) {
            return shape_err("β̄, β and the β̄ gradient must share a shape");
        }
        if self.is_reset_step() {
            self.beta_bar = live_beta.clone();
        } else {
            let (m, a) = (self.momentum, self.step);
            for (dst, g) in self
                .beta_bar
                .matrices_mut()
                .into_iter()
                .zip(grad_beta_bar.matrices())
            {
                for (b, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                    let tilde = *b - a * gv;
                    *b = m * *b + (1.0 - m) * tilde;
                }
            }
        }
        self.iteration += 1;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::Matrix;

    fn scalar(v: f64) -> Affine {
        Affine {
            weight: Matrix::new(1, 1, vec![v]).unwrap(),
            bias: Matrix::zeros(1, 1),
        }
    }

    #[test]
    fn reset_copies_live_head() {
        let s = AvgClusteringState::new(&scalar(0.0), 4, 0.9, 0.1).unwrap();
        let s = s.update_avg_classifier(&scalar(3.25), &scalar(100.0)).unwrap();
        assert_eq!(s.beta_bar, scalar(3.25));
        assert_eq!(s.iteration, 1);
    }

    #[test]
    fn scalar_blend_arithmetic() {
        let mut s = AvgClusteringState::new(&scalar(1.0), 2048, 0.999, 5e-4).unwrap();
        s.iteration = 1;
        let s = s.update_avg_classifier(&scalar(-7.0), &scalar(2000.0)).unwrap();
        assert!((s.beta_bar.weight[(0, 0)] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut s = AvgClusteringState::new(&scalar(0.37), 10, 0.3, 1.0).unwrap();
        s.iteration = 5;
        let s2 = s.clone().update_avg_classifier(&scalar(9.0), &scalar(0.0)).unwrap();
        assert_eq!(s2.beta_bar, s.beta_bar);
    }

    #[test]
    fn validates_arguments() {
        assert!(AvgClusteringState::new(&scalar(0.0), 0, 0.9, 0.1).is_err());
        assert!(AvgClusteringState::new(&scalar(0.0), 1, 1.5, 0.1).is_err());
        assert!(AvgClusteringState::new(&scalar(0.0), 1, 0.9, 0.0).is_err());
        let s = AvgClusteringState::new(&scalar(0.0), 1, 0.9, 0.1).unwrap();
        assert!(s.update_avg_classifier(&Affine::zeros(2, 1), &scalar(0.0)).is_err());
    }

    #[test]
    fn constant_target_contracts_geometrically() {
        // With g = (β̄ - c)/α the blend target β̃ is exactly c.
        let c = 2.0;
        let (m, a) = (0.9, 0.5);
        let mut s = AvgClusteringState::new(&scalar(0.0), u64::MAX, m, a).unwrap();
        s.iteration = 1;
        let mut gap = (s.beta_bar.weight[(0, 0)] - c).abs();
        for _ in 0..50 {
            let b = s.beta_bar.weight[(0, 0)];
            s = s.update_avg_classifier(&scalar(0.0), &scalar((b - c) / a)).unwrap();
            let g2 = (s.beta_bar.weight[(0, 0)] - c).abs();
            assert!((g2 - m * gap).abs() < 1e-12);
            gap = g2;
        }
    }
}
