//! Adam for Euclidean parameters, Riemannian Adam for Poincaré-ball
//! parameters, global-norm clipping and the validation-plateau schedule.

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::diffkit::Tensor;
use crate::error::{Error, Result};
use crate::manifold::{self, clamp_in_place, exp_map0_raw, mobius_add_raw, norm_sq};
use crate::nn::params::{ParamKind, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs without improvement tolerated before halving.
    pub patience: usize,
    pub factor: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 10,
            factor: 0.5,
            clip_norm: Some(5.0),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr0 > 0.0
            && self.patience >= 1
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.factor > 0.0
            && self.factor < 1.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl MomentState {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }
}

fn check_finite(name: &str, grad: &Tensor) -> Result<()> {
    if grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient(name.to_string()))
    }
}

fn check_shapes(name: &str, param: &Tensor, grad: &Tensor, state: &MomentState) -> Result<()> {
    if param.dim() != grad.dim() || state.m.dim() != param.dim() {
        return Err(Error::shape(
            "optimizer",
            format!(
                "`{name}`: param {:?}, grad {:?}, moments {:?}",
                param.dim(),
                grad.dim(),
                state.m.dim()
            ),
        ));
    }
    Ok(())
}

/// Updates the moments with `grad` and returns the bias-corrected step
/// direction `-lr m̂ / (sqrt(v̂) + eps)`.
fn adam_direction(grad: &Tensor, state: &mut MomentState, lr: f64, cfg: &OptimConfig) -> Tensor {
    state.step += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    state.m.zip_mut_with(grad, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
    state.v.zip_mut_with(grad, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let mut dir = state.m.clone();
    dir.zip_mut_with(&state.v, |m, &v| {
        *m = -lr * (*m / c1) / ((v / c2).sqrt() + cfg.eps);
    });
    dir
}

/// Bias-corrected Adam update of a Euclidean tensor.
pub fn adam_step(
    name: &str,
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut MomentState,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    check_shapes(name, param, grad, state)?;
    check_finite(name, grad)?;
    let dir = adam_direction(grad, state, lr, cfg);
    *param += &dir;
    Ok(())
}

/// Riemannian Adam for an `L x K` tensor whose columns are ball points.
///
/// The Euclidean gradient is rescaled by `1/λ_p²`, moments are kept in
/// coordinates without transport, and each column moves along the
/// exponential map at its current point, `p ⊕ exp_0(λ_p u / 2)`, then clamped.
pub fn radam_step(
    name: &str,
    points: &mut Tensor,
    grad: &Tensor,
    state: &mut MomentState,
    lr: f64,
    kappa: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    check_shapes(name, points, grad, state)?;
    check_finite(name, grad)?;
    if !(kappa > 0.0) {
        return Err(Error::InvalidCurvature(-kappa));
    }
    let lambdas: Vec<f64> = points
        .axis_iter(Axis(1))
        .map(|p| 2.0 / (1.0 - kappa * p.dot(&p)))
        .collect();
    let mut rgrad = grad.clone();
    for (mut col, &lam) in rgrad.axis_iter_mut(Axis(1)).zip(&lambdas) {
        col /= lam * lam;
    }
    let dir = adam_direction(&rgrad, state, lr, cfg);
    for ((mut p, u), &lam) in points
        .axis_iter_mut(Axis(1))
        .zip(dir.axis_iter(Axis(1)))
        .zip(&lambdas)
    {
        let step: Vec<f64> = u.iter().map(|x| 0.5 * lam * x).collect();
        if norm_sq(&step) == 0.0 {
            continue;
        }
        let cur = p.to_vec();
        let mut next = mobius_add_raw(&cur, &exp_map0_raw(&step, kappa), kappa);
        clamp_in_place(&mut next, kappa);
        for (dst, v) in p.iter_mut().zip(next) {
            *dst = v;
        }
    }
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Learning-rate multiplier after a sequence of validation losses. The
/// multiplier halves (by `factor`) once `patience` epochs pass without a
/// strict improvement; the wait counter restarts after each reduction.
pub fn plateau_schedule(history: &[f64], patience: usize, factor: f64) -> f64 {
    let mut best = f64::INFINITY;
    let mut wait = 0;
    let mut mult = 1.0;
    for &loss in history {
        if loss < best {
            best = loss;
            wait = 0;
        } else {
            wait += 1;
            if wait >= patience {
                mult *= factor;
                wait = 0;
            }
        }
    }
    mult
}

/// Per-parameter optimizer state routed by [`ParamKind`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub config: OptimConfig,
    pub states: Vec<MomentState>,
    pub lr: f64,
}

impl Optimizer {
    pub fn new(params: &ParamStore, config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            states: params
                .params
                .iter()
                .map(|p| MomentState::zeros(p.value.dim()))
                .collect(),
            lr: config.lr0,
            config,
        })
    }

    /// Clips, then applies Adam or Riemannian Adam to every parameter.
    /// `grads` follow the store order. Nothing is modified if any gradient
    /// is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, mut grads: Vec<Tensor>, kappa: f64) -> Result<f64> {
        if grads.len() != params.len() || self.states.len() != params.len() {
            return Err(Error::shape(
                "optimizer",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (p, g) in params.params.iter().zip(&grads) {
            check_finite(&p.name, g)?;
        }
        let norm = match self.config.clip_norm {
            Some(c) => clip_global_norm(&mut grads, c),
            None => clip_global_norm(&mut grads, f64::INFINITY),
        };
        for ((p, g), st) in params.params.iter_mut().zip(&grads).zip(&mut self.states) {
            match p.kind {
                ParamKind::Euclidean => adam_step(&p.name, &mut p.value, g, st, self.lr, &self.config)?,
                ParamKind::Ball => {
                    radam_step(&p.name, &mut p.value, g, st, self.lr, kappa, &self.config)?
                }
            }
        }
        Ok(norm)
    }

    /// Sets the learning rate from the validation history.
    pub fn schedule(&mut self, val_history: &[f64]) {
        self.lr = self.config.lr0
            * plateau_schedule(val_history, self.config.patience, self.config.factor);
    }
}

/// Squared geodesic distance and its Euclidean gradient in `p`, used by tests
/// and the benchmark.
pub fn dist_sq_and_grad(p: &[f64], q: &[f64], kappa: f64) -> (f64, Vec<f64>) {
    let curv = manifold::Curvature::hyperbolic(kappa).expect("kappa > 0");
    let bp = manifold::BallPoint::new(p.to_vec(), curv).expect("inside ball");
    let bq = manifold::BallPoint::new(q.to_vec(), curv).expect("inside ball");
    let d = manifold::dist_acosh(&bp, &bq).expect("same ball");
    // d = acosh(1 + 2κ|p-q|²/((1-κ|p|²)(1-κ|q|²))) / √κ
    let diff: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
    let d2 = norm_sq(&diff);
    let ap = 1.0 - kappa * norm_sq(p);
    let aq = 1.0 - kappa * norm_sq(q);
    let arg = 1.0 + 2.0 * kappa * d2 / (ap * aq);
    if arg <= 1.0 + 1e-15 {
        return (0.0, vec![0.0; p.len()]);
    }
    let dd_darg = 1.0 / (kappa.sqrt() * (arg * arg - 1.0).sqrt());
    let grad: Vec<f64> = p
        .iter()
        .zip(&diff)
        .map(|(pi, di)| {
            let darg = 2.0 * kappa / aq * (2.0 * di / ap + d2 * 2.0 * kappa * pi / (ap * ap));
            2.0 * d * dd_darg * darg
        })
        .collect();
    (d * d, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let cfg = OptimConfig::default();
        let mut w = array![[1.0, -2.0]];
        let mut st = MomentState::zeros((1, 2));
        adam_step("w", &mut w, &Tensor::zeros((1, 2)), &mut st, 1e-3, &cfg).unwrap();
        assert_eq!(w, array![[1.0, -2.0]]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_adam_step_is_minus_lr() {
        let cfg = OptimConfig::default();
        let mut w = array![[0.0]];
        let mut st = MomentState::zeros((1, 1));
        adam_step("w", &mut w, &array![[1.0]], &mut st, 1e-3, &cfg).unwrap();
        assert!((w[[0, 0]] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let cfg = OptimConfig::default();
        let mut w = array![[0.0]];
        let mut st = MomentState::zeros((1, 1));
        let err = adam_step("enc.0.w", &mut w, &array![[f64::NAN]], &mut st, 1e-3, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "enc.0.w"));
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let cfg = OptimConfig::default();
        let target = array![[0.7, -1.3, 2.1]];
        let mut w = Tensor::zeros((1, 3));
        let mut st = MomentState::zeros((1, 3));
        for _ in 0..5000 {
            let g = (&w - &target) * 2.0;
            adam_step("w", &mut w, &g, &mut st, 1e-2, &cfg).unwrap();
        }
        let err = (&w - &target).mapv(|x| x * x).sum().sqrt();
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn radam_zero_gradient_keeps_point() {
        let cfg = OptimConfig::default();
        let mut p = array![[0.2], [-0.1]];
        let mut st = MomentState::zeros((2, 1));
        radam_step("p", &mut p, &Tensor::zeros((2, 1)), &mut st, 1e-2, 1.0, &cfg).unwrap();
        assert_eq!(p, array![[0.2], [-0.1]]);
    }

    #[test]
    fn radam_from_origin_is_adam_on_quarter_gradient() {
        let cfg = OptimConfig::default();
        let g = array![[0.4], [-0.8]];
        let mut p = Tensor::zeros((2, 1));
        let mut st = MomentState::zeros((2, 1));
        radam_step("p", &mut p, &g, &mut st, 1e-2, 1.0, &cfg).unwrap();

        let mut e = Tensor::zeros((2, 1));
        let mut est = MomentState::zeros((2, 1));
        adam_step("e", &mut e, &(&g / 4.0), &mut est, 1e-2, &cfg).unwrap();
        let expect = exp_map0_raw(&e.column(0).to_vec(), 1.0);
        for (a, b) in p.column(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn radam_converges_to_target_point() {
        let cfg = OptimConfig::default();
        for kappa in [0.1, 1.0] {
            let r = 1.0 / f64::sqrt(kappa);
            let q = [0.5 * r, -0.3 * r];
            let mut p = array![[-0.2 * r], [0.4 * r]];
            let mut st = MomentState::zeros((2, 1));
            for _ in 0..5000 {
                let (_, g) = dist_sq_and_grad(&p.column(0).to_vec(), &q, kappa);
                let g = Tensor::from_shape_vec((2, 1), g).unwrap();
                radam_step("p", &mut p, &g, &mut st, 1e-2, kappa, &cfg).unwrap();
            }
            let (d2, _) = dist_sq_and_grad(&p.column(0).to_vec(), &q, kappa);
            assert!(d2.sqrt() <= 1e-3, "kappa {kappa}: {}", d2.sqrt());
        }
    }

    #[test]
    fn ball_points_never_escape() {
        let cfg = OptimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let kappa = 1.0;
        let mut p = array![[0.9], [0.0]];
        let mut st = MomentState::zeros((2, 1));
        for _ in 0..20_000 {
            let g = array![[rng.random_range(-1e3..1e3)], [rng.random_range(-1e3..1e3)]];
            radam_step("p", &mut p, &g, &mut st, 0.5, kappa, &cfg).unwrap();
            let r2 = kappa * p.column(0).dot(&p.column(0));
            assert!(r2 <= 1.0 - manifold::BALL_EPS + 1e-12);
        }
    }

    #[test]
    fn dist_gradient_matches_finite_differences() {
        let p = [0.3, -0.4];
        let q = [-0.2, 0.1];
        let (_, g) = dist_sq_and_grad(&p, &q, 0.7);
        for i in 0..2 {
            let h = 1e-6;
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            let fd = (dist_sq_and_grad(&a, &q, 0.7).0 - dist_sq_and_grad(&b, &q, 0.7).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn plateau_examples() {
        let improving: Vec<f64> = (0..30).map(|i| 10.0 - i as f64).collect();
        assert_eq!(plateau_schedule(&improving, 10, 0.5), 1.0);
        let mut flat = vec![1.0];
        flat.extend(std::iter::repeat_n(1.0, 10));
        assert_eq!(flat.len(), 11);
        assert_eq!(plateau_schedule(&flat, 10, 0.5), 0.5);
        let flat22 = vec![1.0; 22];
        assert_eq!(plateau_schedule(&flat22, 10, 0.5), 0.25);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = vec![array![[3.0]], array![[4.0]]];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0][[0, 0]] - 0.6).abs() < 1e-15 && (g[1][[0, 0]] - 0.8).abs() < 1e-15);
    }
}
