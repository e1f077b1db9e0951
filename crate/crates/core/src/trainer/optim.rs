use serde::{Deserialize, Serialize};

use crate::error::{Result, SrhError};
use crate::nn::{ParamSet, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 0.05, momentum: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// `v ← μ·v + g; θ ← θ − lr·v`.
pub fn sgd_step<F: Scalar>(
    params: &mut ParamSet<F>,
    grads: &ParamSet<F>,
    cfg: &SgdConfig,
    velocity: &mut ParamSet<F>,
) -> Result<()> {
    params.check_same_layout(grads)?;
    params.check_same_layout(velocity)?;
    let (lr, mu) = (F::from_f64_lossy(cfg.lr), F::from_f64_lossy(cfg.momentum));
    for ((p, g), v) in params.tensors.iter_mut().zip(&grads.tensors).zip(&mut velocity.tensors) {
        for ((x, &gi), vi) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
            *vi = mu * *vi + gi;
            *x -= lr * *vi;
        }
    }
    Ok(())
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<F> {
    pub m: ParamSet<F>,
    pub v: ParamSet<F>,
}

impl<F: Scalar> AdamMoments<F> {
    pub fn zeros_like(params: &ParamSet<F>) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// Bias-corrected Adam update at step `t` (1-based).
pub fn adam_step<F: Scalar>(
    params: &mut ParamSet<F>,
    grads: &ParamSet<F>,
    cfg: &AdamConfig,
    state: &mut AdamMoments<F>,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(SrhError::Contract("Adam step counter starts at 1".into()));
    }
    params.check_same_layout(grads)?;
    params.check_same_layout(&state.m)?;
    params.check_same_layout(&state.v)?;
    let f = F::from_f64_lossy;
    let (b1, b2) = (f(cfg.beta1), f(cfg.beta2));
    let c1 = f(1.0 - cfg.beta1.powi(t as i32));
    let c2 = f(1.0 - cfg.beta2.powi(t as i32));
    let (lr, eps, one) = (f(cfg.lr), f(cfg.eps), F::one());
    for (((p, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut state.m.tensors)
        .zip(&mut state.v.tensors)
    {
        for (((x, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let (mh, vh) = (*mi / c1, *vi / c2);
            *x -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Stateful parameter updater.
pub trait Optimizer<F>: Send {
    fn step(&mut self, params: &mut ParamSet<F>, grads: &ParamSet<F>) -> Result<()>;
}

pub struct Sgd<F> {
    pub config: SgdConfig,
    velocity: ParamSet<F>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(config: SgdConfig, params: &ParamSet<F>) -> Self {
        Self { config, velocity: params.zeros_like() }
    }
}

impl<F: Scalar> Optimizer<F> for Sgd<F> {
    fn step(&mut self, params: &mut ParamSet<F>, grads: &ParamSet<F>) -> Result<()> {
        sgd_step(params, grads, &self.config, &mut self.velocity)
    }
}

pub struct Adam<F> {
    pub config: AdamConfig,
    moments: AdamMoments<F>,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig, params: &ParamSet<F>) -> Self {
        Self { config, moments: AdamMoments::zeros_like(params), t: 0 }
    }
}

impl<F: Scalar> Optimizer<F> for Adam<F> {
    fn step(&mut self, params: &mut ParamSet<F>, grads: &ParamSet<F>) -> Result<()> {
        self.t += 1;
        adam_step(params, grads, &self.config, &mut self.moments, self.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Param, ParamSpec};
    use proptest::prelude::*;

    fn scalar(v: f64) -> ParamSet<f64> {
        ParamSet { tensors: vec![Param { spec: ParamSpec { name: "x".into(), shape: vec![1] }, data: vec![v] }] }
    }

    fn val(p: &ParamSet<f64>) -> f64 {
        p.tensors[0].data[0]
    }

    #[test]
    fn sgd_hand_values() {
        let mut p = scalar(1.0);
        let mut v = scalar(0.0);
        sgd_step(&mut p, &scalar(0.5), &SgdConfig { lr: 0.1, momentum: 0.0 }, &mut v).unwrap();
        assert!((val(&p) - 0.95).abs() < 1e-15);

        let cfg = SgdConfig { lr: 0.1, momentum: 0.9 };
        let (mut p, mut v) = (scalar(0.0), scalar(0.0));
        sgd_step(&mut p, &scalar(1.0), &cfg, &mut v).unwrap();
        assert!((val(&p) + 0.1).abs() < 1e-15);
        sgd_step(&mut p, &scalar(1.0), &cfg, &mut v).unwrap();
        assert!((val(&p) + 0.29).abs() < 1e-15);
        assert!((val(&v) - 1.9).abs() < 1e-15);

        let (mut p, mut v) = (scalar(3.0), scalar(0.0));
        sgd_step(&mut p, &scalar(0.0), &cfg, &mut v).unwrap();
        assert_eq!(val(&p), 3.0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = AdamConfig { eps: 0.0, ..AdamConfig::default() };
        for g in [1e-6, -3.0, 250.0] {
            let mut p = scalar(0.5);
            let mut s = AdamMoments::zeros_like(&p);
            adam_step(&mut p, &scalar(g), &cfg, &mut s, 1).unwrap();
            assert!(((val(&p) - 0.5).abs() - cfg.lr).abs() < 1e-12);
            assert_eq!((val(&p) - 0.5).signum(), -g.signum());
        }
    }

    #[test]
    fn adam_two_steps_hand_iteration() {
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = scalar(1.0);
        let mut s = AdamMoments::zeros_like(&p);
        adam_step(&mut p, &scalar(2.0), &cfg, &mut s, 1).unwrap();
        // m1 = 0.2, v1 = 0.004, m̂ = 2, v̂ = 4
        let x1 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((val(&p) - x1).abs() < 1e-12);
        adam_step(&mut p, &scalar(2.0), &cfg, &mut s, 2).unwrap();
        // m2 = 0.38, v2 = 0.007996, m̂ = 0.38/0.19 = 2, v̂ = 0.007996/0.001999 = 4
        let x2 = x1 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((val(&p) - x2).abs() < 1e-12);
        assert!((val(&s.m) - 0.38).abs() < 1e-12);
        assert!((val(&s.v) - 0.007996).abs() < 1e-12);
        assert!(adam_step(&mut p, &scalar(1.0), &cfg, &mut s, 0).is_err());
    }

    #[test]
    fn zero_gradient_keeps_adam_params() {
        let mut opt = Adam::new(AdamConfig::default(), &scalar(0.0));
        let mut p = scalar(0.7);
        for _ in 0..5 {
            opt.step(&mut p, &scalar(0.0)).unwrap();
        }
        assert_eq!(val(&p), 0.7);
    }

    #[test]
    fn layout_mismatch_is_shape_error() {
        let mut p = scalar(0.0);
        let g = ParamSet::<f64> { tensors: vec![] };
        let mut v = scalar(0.0);
        assert!(matches!(sgd_step(&mut p, &g, &SgdConfig::default(), &mut v), Err(SrhError::Shape(_))));
    }

    proptest! {
        #[test]
        fn zero_lr_never_moves(gs in proptest::collection::vec(-10.0f64..10.0, 1..20), x in -5.0f64..5.0) {
            let mut sgd = Sgd::new(SgdConfig { lr: 0.0, momentum: 0.9 }, &scalar(0.0));
            let mut adam = Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }, &scalar(0.0));
            let (mut a, mut b) = (scalar(x), scalar(x));
            for g in gs {
                sgd.step(&mut a, &scalar(g)).unwrap();
                adam.step(&mut b, &scalar(g)).unwrap();
            }
            prop_assert_eq!(val(&a), x);
            prop_assert_eq!(val(&b), x);
        }

        #[test]
        fn steps_are_pure(g in -10.0f64..10.0, x in -5.0f64..5.0, m in -1.0f64..1.0, v in 0.0f64..1.0) {
            let run = || {
                let mut p = scalar(x);
                let mut s = AdamMoments { m: scalar(m), v: scalar(v) };
                adam_step(&mut p, &scalar(g), &AdamConfig::default(), &mut s, 3).unwrap();
                (val(&p), val(&s.m), val(&s.v))
            };
            prop_assert_eq!(run(), run());
        }
    }
}
