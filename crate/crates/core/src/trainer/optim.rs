use std::f64::consts::PI;

use crate::error::{arg_err, Result};
use crate::netcore::{GradientSet, Network};

/// `η = η0·cos(7πk / 16K)`.
pub fn cosine_lr(k: usize, total: usize, eta0: f64) -> Result<f64> {
    if k > total {
        return arg_err(format!("iteration {k} beyond schedule length {total}"));
    }
    if total == 0 {
        return Ok(eta0);
    }
    Ok(eta0 * (7.0 * PI * k as f64 / (16.0 * total as f64)).cos())
}

/// Heavy-ball momentum buffers, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: GradientSet,
}

impl SgdState {
    pub fn new(net: &Network) -> Self {
        Self {
            velocity: GradientSet::zeros_like(net),
        }
    }
}

/// `v ← μ·v + (g + λ·p)`, then `p ← p − η·v`.
pub fn sgd_step(
    net: &mut Network,
    grads: &GradientSet,
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let template = GradientSet::zeros_like(net);
    template.check_compatible(grads)?;
    template.check_compatible(&state.velocity)?;
    let params = net.matrices_mut();
    let grads = grad_matrices(grads);
    let vels = grad_matrices_mut(&mut state.velocity);
    for ((p, g), v) in params.into_iter().zip(grads).zip(vels) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + (gv + weight_decay * *pv);
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// `ema ← μ·ema + (1 − μ)·live`, coordinate-wise.
pub fn update_model_ema(ema: &mut Network, live: &Network, momentum: f64) -> Result<()> {
    if ema.param_count() != live.param_count()
        || ema
            .matrices()
            .iter()
            .zip(live.matrices())
            .any(|(a, b)| !a.same_shape(b))
    {
        return arg_err("EMA and live networks differ in shape");
    }
    for (e, l) in ema.matrices_mut().into_iter().zip(live.matrices()) {
        for (ev, &lv) in e.data_mut().iter_mut().zip(l.data()) {
            *ev = momentum * *ev + (1.0 - momentum) * lv;
        }
    }
    Ok(())
}

fn grad_matrices(g: &GradientSet) -> Vec<&crate::netcore::Matrix> {
    let mut out = Vec::new();
    for a in &g.features {
        out.extend(a.matrices());
    }
    out.extend(g.classifier.matrices());
    out
}

fn grad_matrices_mut(g: &mut GradientSet) -> Vec<&mut crate::netcore::Matrix> {
    let mut out = Vec::new();
    for a in &mut g.features {
        out.extend(a.matrices_mut());
    }
    out.extend(g.classifier.matrices_mut());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::Activation;
    use crate::rng::{stream_rng, Stream};

    fn net() -> Network {
        Network::xavier(&[2, 3], Activation::Tanh, 2, &mut stream_rng(0, Stream::Init)).unwrap()
    }

    fn constant_grads(n: &Network, v: f64) -> GradientSet {
        let mut g = GradientSet::zeros_like(n);
        for a in &mut g.features {
            a.weight.fill(v);
            a.bias.fill(v);
        }
        g.classifier.weight.fill(v);
        g.classifier.bias.fill(v);
        g
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.03).unwrap(), 0.03);
        let end = cosine_lr(100, 100, 1.0).unwrap();
        assert!((end - 0.195_090_322_016_128_26).abs() < 1e-15);
        assert!(cosine_lr(101, 100, 1.0).is_err());
        let lrs: Vec<f64> = (0..=100).map(|k| cosine_lr(k, 100, 0.03).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs.iter().all(|&l| l > 0.0 && l <= 0.03));
    }

    #[test]
    fn plain_gradient_descent() {
        let mut n = net();
        let before = n.flat_params();
        let g = constant_grads(&n, 0.5);
        let mut s = SgdState::new(&n);
        sgd_step(&mut n, &g, &mut s, 0.1, 0.0, 0.0).unwrap();
        for (a, b) in n.flat_params().iter().zip(&before) {
            assert_eq!(*a, b - 0.1 * 0.5);
        }
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut n = net();
        let before = n.clone();
        let g = GradientSet::zeros_like(&n);
        let mut s = SgdState::new(&n);
        sgd_step(&mut n, &g, &mut s, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(n, before);
    }

    #[test]
    fn momentum_second_displacement() {
        let (lr, mu, gv) = (0.1, 0.9, 0.5);
        let mut n = net();
        let g = constant_grads(&n, gv);
        let mut s = SgdState::new(&n);
        sgd_step(&mut n, &g, &mut s, lr, mu, 0.0).unwrap();
        let mid = n.flat_params();
        sgd_step(&mut n, &g, &mut s, lr, mu, 0.0).unwrap();
        for (a, b) in n.flat_params().iter().zip(&mid) {
            assert!(((b - a) - lr * gv * (1.0 + mu)).abs() < 1e-15);
        }
    }

    #[test]
    fn weight_decay_pulls_towards_zero() {
        let mut n = net();
        let before = n.flat_params();
        let mut s = SgdState::new(&n);
        let g = GradientSet::zeros_like(&n);
        sgd_step(&mut n, &g, &mut s, 0.1, 0.0, 0.5).unwrap();
        for (a, b) in n.flat_params().iter().zip(&before) {
            assert!((a - b * 0.95).abs() < 1e-15);
        }
    }

    #[test]
    fn ema_degenerate_momenta() {
        let live = net();
        let mut other = Network::xavier(&[2, 3], Activation::Tanh, 2, &mut stream_rng(1, Stream::Init)).unwrap();
        let keep = other.clone();
        update_model_ema(&mut other, &live, 1.0).unwrap();
        assert_eq!(other, keep);
        update_model_ema(&mut other, &live, 0.0).unwrap();
        assert_eq!(other, live);
    }

    #[test]
    fn ema_converges_geometrically() {
        let c = 0.7;
        let mut live = net();
        let flat = vec![c; live.param_count()];
        live.set_flat_params(&flat).unwrap();
        let mut ema = net();
        let start: Vec<f64> = ema.flat_params();
        let mu: f64 = 0.99;
        for _ in 0..1000 {
            update_model_ema(&mut ema, &live, mu).unwrap();
        }
        for (e, s) in ema.flat_params().iter().zip(&start) {
            assert!((e - c).abs() <= mu.powi(1000) * (s - c).abs() * 1.01 + 1e-15);
        }
    }
}
