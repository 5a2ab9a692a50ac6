//! Poincaré-ball geometry centered at the origin.
//!
//! Curvature is carried as the paper-style signed value `c <= 0`; every formula
//! works with the magnitude `kappa = |c|`. A ball of curvature `kappa` has
//! radius `1/sqrt(kappa)`. Every ball-valued result is radially clamped so that
//! `kappa * |x|^2 <= 1 - BALL_EPS`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary margin applied to every ball-valued result.
pub const BALL_EPS: f64 = 1e-5;

/// Below this norm the exp/log scalar factors take their limit value 1.
pub const TAYLOR_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Curvature {
    c: f64,
}

impl Curvature {
    /// Accepts paper-style values: `c < 0` is hyperbolic, `c == 0` Euclidean.
    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() || c > 0.0 {
            return Err(Error::InvalidCurvature(c));
        }
        Ok(Self { c })
    }

    pub fn euclidean() -> Self {
        Self { c: 0.0 }
    }

    /// Hyperbolic ball with magnitude `kappa > 0`.
    pub fn hyperbolic(kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidCurvature(-kappa));
        }
        Ok(Self { c: -kappa })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn kappa(&self) -> f64 {
        self.c.abs()
    }

    pub fn is_euclidean(&self) -> bool {
        self.c == 0.0
    }

    /// Largest admissible Euclidean norm of a ball point.
    pub fn max_norm(&self) -> f64 {
        ((1.0 - BALL_EPS) / self.kappa()).sqrt()
    }

    fn require_hyperbolic(&self) -> Result<f64> {
        if self.is_euclidean() {
            Err(Error::InvalidCurvature(self.c))
        } else {
            Ok(self.kappa())
        }
    }
}

/// A point strictly inside the Poincaré ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallPoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

/// A tangent vector at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub coords: Vec<f64>,
}

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

impl BallPoint {
    /// Validates membership; points in the boundary margin are clamped,
    /// points on or outside the boundary are rejected.
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        let kappa = curvature.require_hyperbolic()?;
        let r2 = kappa * norm_sq(&coords);
        if !(r2 < 1.0) {
            return Err(Error::OutsideBall(r2));
        }
        let mut coords = coords;
        clamp_in_place(&mut coords, kappa);
        Ok(Self { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Result<Self> {
        curvature.require_hyperbolic()?;
        Ok(Self {
            coords: vec![0.0; dim],
            curvature,
        })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm_sq(&self.coords).sqrt()
    }

    pub fn neg(&self) -> Self {
        Self {
            coords: self.coords.iter().map(|x| -x).collect(),
            curvature: self.curvature,
        }
    }

    fn check_compatible(&self, other: &BallPoint) -> Result<f64> {
        if self.curvature != other.curvature {
            return Err(Error::CurvatureMismatch(
                self.curvature.c(),
                other.curvature.c(),
            ));
        }
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(self.dim(), other.dim()));
        }
        Ok(self.curvature.kappa())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `tanh(s)/s` with its removable singularity filled in.
pub(crate) fn tanh_ratio(s: f64) -> f64 {
    if s < TAYLOR_NORM {
        1.0
    } else {
        s.tanh() / s
    }
}

/// `atanh(s)/s` with its removable singularity filled in.
pub(crate) fn atanh_ratio(s: f64) -> f64 {
    if s < TAYLOR_NORM {
        1.0
    } else {
        s.atanh() / s
    }
}

pub(crate) fn clamp_in_place(x: &mut [f64], kappa: f64) {
    let r2 = kappa * norm_sq(x);
    let limit = 1.0 - BALL_EPS;
    if r2 >= limit {
        let scale = (limit / r2).sqrt();
        x.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Conformal factor `2 / (1 - kappa |x|^2)`.
pub fn conformal_factor(x: &[f64], curvature: Curvature) -> Result<f64> {
    let kappa = curvature.require_hyperbolic()?;
    let r2 = kappa * norm_sq(x);
    if !(r2 < 1.0) {
        return Err(Error::OutsideBall(r2));
    }
    Ok(2.0 / (1.0 - r2))
}

/// Radially rescales `x` into the ball when it falls in the boundary margin.
pub fn clamp_to_ball(x: &[f64], curvature: Curvature) -> Result<BallPoint> {
    let kappa = curvature.require_hyperbolic()?;
    let mut coords = x.to_vec();
    clamp_in_place(&mut coords, kappa);
    Ok(BallPoint { coords, curvature })
}

pub(crate) fn exp_map0_raw(v: &[f64], kappa: f64) -> Vec<f64> {
    let sk = kappa.sqrt();
    let factor = tanh_ratio(sk * norm_sq(v).sqrt());
    let mut out: Vec<f64> = v.iter().map(|x| factor * x).collect();
    clamp_in_place(&mut out, kappa);
    out
}

pub(crate) fn log_map0_raw(y: &[f64], kappa: f64) -> Vec<f64> {
    let sk = kappa.sqrt();
    let factor = atanh_ratio(sk * norm_sq(y).sqrt());
    y.iter().map(|x| factor * x).collect()
}

/// Unclamped Möbius addition.
pub(crate) fn mobius_add_raw(a: &[f64], b: &[f64], kappa: f64) -> Vec<f64> {
    let ab = dot(a, b);
    let a2 = norm_sq(a);
    let b2 = norm_sq(b);
    let ca = 1.0 + 2.0 * kappa * ab + kappa * b2;
    let cb = 1.0 - kappa * a2;
    let den = 1.0 + 2.0 * kappa * ab + kappa * kappa * a2 * b2;
    a.iter()
        .zip(b)
        .map(|(x, y)| (ca * x + cb * y) / den)
        .collect()
}

/// Exponential map at the origin.
pub fn exp_map0(v: &TangentVector, curvature: Curvature) -> Result<BallPoint> {
    let kappa = curvature.require_hyperbolic()?;
    Ok(BallPoint {
        coords: exp_map0_raw(&v.coords, kappa),
        curvature,
    })
}

/// Logarithmic map at the origin; inverse of [`exp_map0`].
pub fn log_map0(y: &BallPoint) -> Result<TangentVector> {
    let kappa = y.curvature.require_hyperbolic()?;
    let r2 = kappa * norm_sq(&y.coords);
    if !(r2 < 1.0) {
        return Err(Error::OutsideBall(r2));
    }
    Ok(TangentVector {
        coords: log_map0_raw(&y.coords, kappa),
    })
}

/// Möbius (gyrovector) addition `a ⊕ b`.
pub fn mobius_add(a: &BallPoint, b: &BallPoint) -> Result<BallPoint> {
    let kappa = a.check_compatible(b)?;
    let mut coords = mobius_add_raw(&a.coords, &b.coords, kappa);
    clamp_in_place(&mut coords, kappa);
    Ok(BallPoint {
        coords,
        curvature: a.curvature,
    })
}

/// Möbius scalar multiplication `r ⊗ a = exp0(r log0(a))`.
pub fn mobius_scalar_mul(r: f64, a: &BallPoint) -> Result<BallPoint> {
    let v = log_map0(a)?;
    let scaled = TangentVector {
        coords: v.coords.iter().map(|x| r * x).collect(),
    };
    exp_map0(&scaled, a.curvature)
}

/// Geodesic distance `(2/sqrt(kappa)) atanh(sqrt(kappa) |(-a) ⊕ b|)`.
pub fn dist(a: &BallPoint, b: &BallPoint) -> Result<f64> {
    let kappa = a.check_compatible(b)?;
    let neg_a: Vec<f64> = a.coords.iter().map(|x| -x).collect();
    let m = mobius_add_raw(&neg_a, &b.coords, kappa);
    let sk = kappa.sqrt();
    let arg = (sk * norm_sq(&m).sqrt()).min((1.0 - BALL_EPS).sqrt());
    Ok(2.0 / sk * arg.atanh())
}

/// Distance through the `acosh` closed form; agrees with [`dist`].
pub fn dist_acosh(a: &BallPoint, b: &BallPoint) -> Result<f64> {
    let kappa = a.check_compatible(b)?;
    let diff2: f64 = a
        .coords
        .iter()
        .zip(&b.coords)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let da = 1.0 - kappa * norm_sq(&a.coords);
    let db = 1.0 - kappa * norm_sq(&b.coords);
    let arg = 1.0 + 2.0 * kappa * diff2 / (da * db);
    Ok(arg.acosh() / kappa.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k(kappa: f64) -> Curvature {
        Curvature::hyperbolic(kappa).unwrap()
    }

    fn pt(c: &[f64], kappa: f64) -> BallPoint {
        BallPoint::new(c.to_vec(), k(kappa)).unwrap()
    }

    #[test]
    fn curvature_sign_convention() {
        let c = Curvature::new(-0.1).unwrap();
        assert_eq!(c.kappa(), 0.1);
        assert!(Curvature::new(0.0).unwrap().is_euclidean());
        assert!(Curvature::new(0.5).is_err());
        assert!(exp_map0(&TangentVector::new(vec![1.0]), Curvature::euclidean()).is_err());
    }

    #[test]
    fn conformal_factor_examples() {
        assert_eq!(conformal_factor(&[0.0, 0.0], k(1.0)).unwrap(), 2.0);
        assert_abs_diff_eq!(
            conformal_factor(&[0.5, 0.0], k(1.0)).unwrap(),
            2.0 / 0.75,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            conformal_factor(&[0.5, 0.0], k(0.1)).unwrap(),
            2.051282051282051,
            epsilon = 1e-12
        );
        assert!(matches!(
            conformal_factor(&[1.0, 0.0], k(1.0)),
            Err(Error::OutsideBall(_))
        ));
    }

    #[test]
    fn exp_map_examples() {
        let z = exp_map0(&TangentVector::new(vec![0.0, 0.0]), k(1.0)).unwrap();
        assert_eq!(z.coords(), &[0.0, 0.0]);
        let y = exp_map0(&TangentVector::new(vec![0.5, 0.0]), k(1.0)).unwrap();
        assert_abs_diff_eq!(y.coords()[0], 0.5f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(y.coords()[0], 0.462117, epsilon = 1e-6);
        let y = exp_map0(&TangentVector::new(vec![3.0, 4.0]), k(1.0)).unwrap();
        assert_abs_diff_eq!(y.coords()[0], 0.599945, epsilon = 1e-6);
        assert_abs_diff_eq!(y.coords()[1], 0.799927, epsilon = 1e-6);
    }

    #[test]
    fn log_map_examples() {
        let v = log_map0(&pt(&[0.0, 0.0], 1.0)).unwrap();
        assert_eq!(v.coords, vec![0.0, 0.0]);
        let v = log_map0(&pt(&[0.5f64.tanh(), 0.0], 1.0)).unwrap();
        assert_abs_diff_eq!(v.coords[0], 0.5, epsilon = 1e-12);
        let v = log_map0(&pt(&[0.9, 0.0], 1.0)).unwrap();
        assert_abs_diff_eq!(v.coords[0], 1.472219, epsilon = 1e-6);
    }

    #[test]
    fn mobius_add_examples() {
        let r = mobius_add(&pt(&[0.0, 0.0], 1.0), &pt(&[0.3, 0.2], 1.0)).unwrap();
        assert_abs_diff_eq!(r.coords()[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(r.coords()[1], 0.2, epsilon = 1e-15);
        let r = mobius_add(&pt(&[0.5, 0.0], 1.0), &pt(&[-0.5, 0.0], 1.0)).unwrap();
        assert_abs_diff_eq!(r.norm(), 0.0, epsilon = 1e-15);
        let r = mobius_add(&pt(&[0.5, 0.0], 1.0), &pt(&[0.25, 0.0], 1.0)).unwrap();
        assert_abs_diff_eq!(r.coords()[0], 0.75 / 1.125, epsilon = 1e-15);
    }

    #[test]
    fn mobius_add_rejects_mixed_curvature() {
        let err = mobius_add(&pt(&[0.1, 0.0], 1.0), &pt(&[0.1, 0.0], 0.1)).unwrap_err();
        assert!(matches!(err, Error::CurvatureMismatch(..)));
    }

    #[test]
    fn scalar_mul_examples() {
        let a = pt(&[0.3, 0.4], 1.0);
        let one = mobius_scalar_mul(1.0, &a).unwrap();
        assert_abs_diff_eq!(one.coords()[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(one.coords()[1], 0.4, epsilon = 1e-12);
        let zero = mobius_scalar_mul(0.0, &a).unwrap();
        assert_eq!(zero.coords(), &[0.0, 0.0]);
        let two = mobius_scalar_mul(2.0, &pt(&[0.5f64.tanh(), 0.0], 1.0)).unwrap();
        assert_abs_diff_eq!(two.coords()[0], 1.0f64.tanh(), epsilon = 1e-12);
    }

    #[test]
    fn distance_examples() {
        let a = pt(&[0.3, 0.1], 1.0);
        assert_eq!(dist(&a, &a).unwrap(), 0.0);
        let o = pt(&[0.0, 0.0], 1.0);
        let b = pt(&[0.5, 0.0], 1.0);
        assert_abs_diff_eq!(dist(&o, &b).unwrap(), 1.098612, epsilon = 1e-6);
        assert_abs_diff_eq!(
            dist(&o, &b).unwrap(),
            (5.0f64 / 3.0).acosh(),
            epsilon = 1e-12
        );
        let a = pt(&[0.1, 0.0], 1e-8);
        let b = pt(&[0.3, 0.0], 1e-8);
        assert_abs_diff_eq!(dist(&a, &b).unwrap(), 0.4, epsilon = 1e-6);
    }

    #[test]
    fn clamp_examples() {
        let p = clamp_to_ball(&[0.2, 0.0], k(1.0)).unwrap();
        assert_eq!(p.coords(), &[0.2, 0.0]);
        let p = clamp_to_ball(&[1.0, 0.0], k(1.0)).unwrap();
        assert_abs_diff_eq!(p.norm(), (1.0 - 1e-5f64).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.norm(), 0.999995, epsilon = 1e-6);
        let p = clamp_to_ball(&[0.0, 10.0], k(0.01)).unwrap();
        assert_abs_diff_eq!(p.norm(), 9.99995, epsilon = 1e-5);
    }

    #[test]
    fn projection_saturates_at_boundary() {
        let y = exp_map0(&TangentVector::new(vec![50.0, 0.0]), k(1.0)).unwrap();
        assert_abs_diff_eq!(y.norm(), (1.0 - BALL_EPS).sqrt(), epsilon = 1e-12);
    }
}
