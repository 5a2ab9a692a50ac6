//! Differentiable Poincaré-ball operations built from [`Graph`] primitives.
//!
//! Rows of an `n x L` node are points (or tangent vectors); ball parameters
//! for `K` classes are stored column-wise as `L x K` matrices.

use crate::diffkit::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Row-wise `exp_0` followed by the ball clamp.
pub fn exp_map0(g: &mut Graph, v: Var, kappa: f64) -> Result<Var> {
    let n = g.row_norm(v);
    let s = g.scale(n, kappa.sqrt());
    let f = g.tanh_ratio(s);
    g.mul(v, f)
}

/// Row-wise `log_0`.
pub fn log_map0(g: &mut Graph, y: Var, kappa: f64) -> Result<Var> {
    let n = g.row_norm(y);
    let s = g.scale(n, kappa.sqrt());
    let f = g.atanh_ratio(s);
    g.mul(y, f)
}

/// Row-wise Möbius addition; either side may be a single broadcast row.
pub fn mobius_add(g: &mut Graph, a: Var, b: Var, kappa: f64) -> Result<Var> {
    let ab_e = g.mul(a, b)?;
    let ab = g.sum_rows(ab_e);
    let a_sq = g.square(a);
    let a2 = g.sum_rows(a_sq);
    let b_sq = g.square(b);
    let b2 = g.sum_rows(b_sq);

    let two_ab = g.scale(ab, 2.0 * kappa);
    let kb2 = g.scale(b2, kappa);
    let ca0 = g.add(two_ab, kb2)?;
    let ca = g.offset(ca0, 1.0);
    let ka2 = g.scale(a2, -kappa);
    let cb = g.offset(ka2, 1.0);
    let a2b2 = g.mul(a2, b2)?;
    let kk = g.scale(a2b2, kappa * kappa);
    let den0 = g.add(two_ab, kk)?;
    let den = g.offset(den0, 1.0);

    let ta = g.mul(ca, a)?;
    let tb = g.mul(cb, b)?;
    let num = g.add(ta, tb)?;
    g.div(num, den)
}

/// Row-wise geodesic distance `(2/sqrt(kappa)) atanh(sqrt(kappa) |(-a) ⊕ b|)`.
pub fn dist(g: &mut Graph, a: Var, b: Var, kappa: f64) -> Result<Var> {
    let na = g.neg(a);
    let m = mobius_add(g, na, b, kappa)?;
    let n = g.row_norm(m);
    let s = g.scale(n, kappa.sqrt());
    let at = g.atanh(s);
    Ok(g.scale(at, 2.0 / kappa.sqrt()))
}

/// Signed hyperbolic MLR logits for every row of `h` (`n x L`) against `K`
/// hyperplanes with offsets `p` (`L x K`, columns in the ball) and normals
/// `a` (`L x K`). Returns `n x K`.
///
/// `logit_k = (λ_{p_k} |a_k| / √κ) asinh(2√κ ⟨m_k, a_k⟩ / ((1 - κ|m_k|²) |a_k|))`
/// with `m_k = (-p_k) ⊕ h`, expanded per coordinate so every class is
/// evaluated in the same `n x K` tensors.
pub fn hmlr_logits(g: &mut Graph, h: Var, p: Var, a: Var, kappa: f64) -> Result<Var> {
    let (_, dim) = g.shape(h);
    let (pl, k) = g.shape(p);
    if pl != dim || g.shape(a) != (dim, k) {
        return Err(Error::shape(
            "hmlr_logits",
            format!(
                "embedding dim {dim}, offsets {:?}, normals {:?}",
                g.shape(p),
                g.shape(a)
            ),
        ));
    }
    let sk = kappa.sqrt();
    let ones = g.leaf(Tensor::ones((1, dim)));

    let neg_p = g.neg(p);
    // <h, -p_k>, |p_k|^2, |h|^2
    let xy = g.matmul(h, neg_p)?;
    let p_sq = g.square(p);
    let p2 = g.matmul(ones, p_sq)?;
    let h_sq = g.square(h);
    let h2 = g.sum_rows(h_sq);

    let two_xy = g.scale(xy, 2.0 * kappa);
    let kh2 = g.scale(h2, kappa);
    let ca0 = g.add(two_xy, kh2)?;
    let ca = g.offset(ca0, 1.0);
    let kp2 = g.scale(p2, -kappa);
    let cb = g.offset(kp2, 1.0);
    let p2h2 = g.mul(p2, h2)?;
    let kk = g.scale(p2h2, kappa * kappa);
    let den0 = g.add(two_xy, kk)?;
    let den = g.offset(den0, 1.0);

    let mut inner: Option<Var> = None;
    let mut m2: Option<Var> = None;
    for l in 0..dim {
        let h_l = g.cols(h, l, l + 1)?;
        let np_l = g.rows(neg_p, l, l + 1)?;
        let a_l = g.rows(a, l, l + 1)?;
        let t1 = g.mul(ca, np_l)?;
        let t2 = g.mul(cb, h_l)?;
        let num = g.add(t1, t2)?;
        let m_l = g.div(num, den)?;
        let ma = g.mul(m_l, a_l)?;
        let msq = g.square(m_l);
        inner = Some(match inner {
            None => ma,
            Some(acc) => g.add(acc, ma)?,
        });
        m2 = Some(match m2 {
            None => msq,
            Some(acc) => g.add(acc, msq)?,
        });
    }
    let (inner, m2) = (inner.expect("dim >= 1"), m2.expect("dim >= 1"));

    let a_sq = g.square(a);
    let a2 = g.matmul(ones, a_sq)?;
    let a_norm = g.sqrt(a2);
    let lambda_den = g.offset(kp2, 1.0);
    let two = g.constant(2.0);
    let lambda_p = g.div(two, lambda_den)?;

    let km2 = g.scale(m2, -kappa);
    let gap0 = g.offset(km2, 1.0);
    let gap = g.clamp_min(gap0, 1e-15);
    let scaled_inner = g.scale(inner, 2.0 * sk);
    let denom = g.mul(gap, a_norm)?;
    let arg = g.div(scaled_inner, denom)?;
    let asinh = g.asinh(arg);
    let pref0 = g.mul(lambda_p, a_norm)?;
    let pref = g.scale(pref0, 1.0 / sk);
    g.mul(pref, asinh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffkit::grad_check;
    use crate::manifold::{self, BallPoint, Curvature, TangentVector};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
        Tensor::from_shape_fn((r, c), |_| rng.random_range(-scale..scale))
    }

    #[test]
    fn graph_exp_map_matches_manifold() {
        let mut g = Graph::new();
        let v = g.leaf(array![[0.0, 0.0], [0.5, 0.0], [3.0, 4.0], [50.0, 0.0]]);
        let h = exp_map0(&mut g, v, 1.0).unwrap();
        let out = g.value(h).clone();
        let k = Curvature::hyperbolic(1.0).unwrap();
        for (row, v) in out.rows().into_iter().zip(g.value(v).rows()) {
            let expect = manifold::exp_map0(&TangentVector::new(v.to_vec()), k).unwrap();
            for (a, b) in row.iter().zip(expect.coords()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn graph_dist_matches_manifold() {
        let k = Curvature::hyperbolic(0.7).unwrap();
        let mut g = Graph::new();
        let a = g.leaf(array![[0.3, -0.2]]);
        let b = g.leaf(array![[-0.5, 0.4]]);
        let d = dist(&mut g, a, b, 0.7).unwrap();
        let pa = BallPoint::new(vec![0.3, -0.2], k).unwrap();
        let pb = BallPoint::new(vec![-0.5, 0.4], k).unwrap();
        assert!((g.scalar(d) - manifold::dist(&pa, &pb).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn hmlr_logit_example() {
        let mut g = Graph::new();
        let h = g.leaf(array![[0.3, 0.0]]);
        let p = g.leaf(array![[0.0], [0.0]]);
        let a = g.leaf(array![[1.0], [0.0]]);
        let l = hmlr_logits(&mut g, h, p, a, 1.0).unwrap();
        let expect = 2.0 * (0.6f64 / 0.91).asinh();
        assert!((g.value(l)[[0, 0]] - expect).abs() < 1e-12);
        assert!((g.value(l)[[0, 0]] - 1.2380784).abs() < 1e-6);
    }

    #[test]
    fn geometry_primitives_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let kappa = rng.random_range(0.1..1.5);
            let v = rand_tensor(&mut rng, 3, 2, 1.2);
            let report = grad_check(
                |g, p| {
                    let h = exp_map0(g, p[0], kappa)?;
                    let o = g.leaf(Tensor::zeros((1, 2)));
                    let d = dist(g, o, h, kappa)?;
                    Ok(g.sum_all(d))
                },
                &[v],
                1e-6,
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-4, "exp∘dist {}", report.max_rel_error);

            let scale = 0.5 / f64::sqrt(kappa);
            let x = rand_tensor(&mut rng, 3, 2, scale);
            let y = rand_tensor(&mut rng, 1, 2, scale);
            let report = grad_check(
                |g, p| {
                    let m = mobius_add(g, p[1], p[0], kappa)?;
                    let l = log_map0(g, m, kappa)?;
                    let w = g.leaf(array![[0.7], [-1.3]]);
                    let s = g.matmul(l, w)?;
                    Ok(g.sum_all(s))
                },
                &[x, y],
                1e-6,
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-4, "mobius {}", report.max_rel_error);
        }
    }

    #[test]
    fn hmlr_logits_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let kappa = rng.random_range(0.1..1.5);
            let r = 0.6 / f64::sqrt(kappa);
            let z = rand_tensor(&mut rng, 4, 2, 1.0);
            let p = rand_tensor(&mut rng, 2, 3, r / 2.0);
            let a = rand_tensor(&mut rng, 2, 3, 1.0);
            let report = grad_check(
                |g, q| {
                    let h = exp_map0(g, q[0], kappa)?;
                    let l = hmlr_logits(g, h, q[1], q[2], kappa)?;
                    let w = g.leaf(array![[0.3, -1.1, 0.8]]);
                    let lw = g.mul(l, w)?;
                    Ok(g.sum_all(lw))
                },
                &[z, p, a],
                1e-6,
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-4, "{}", report.max_rel_error);
        }
    }
}
