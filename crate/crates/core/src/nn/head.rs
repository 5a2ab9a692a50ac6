//! Classification heads: Euclidean softmax MLR, hyperbolic MLR, and the
//! two-level hierarchical head that turns parent and leaf logits into masks.

use serde::{Deserialize, Serialize};

use crate::diffkit::{Graph, Var};
use crate::error::{Error, Result};
use crate::manifold::{self, BallPoint, Curvature, TangentVector};

use super::geom;

/// Parent classes are fixed: index 0 is "near", index 1 is "far".
pub const NEAR: usize = 0;
pub const FAR: usize = 1;
pub const PARENT_NAMES: [&str; 2] = ["near", "far"];

/// Below this norm a hyperplane normal is considered collapsed.
pub const MIN_NORMAL_NORM: f64 = 1e-8;

/// Leaf layout: the first `children[NEAR]` leaves belong to "near", the next
/// `children[FAR]` to "far".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchySpec {
    pub children: [usize; 2],
}

impl HierarchySpec {
    pub fn new(children_per_parent: usize) -> Result<Self> {
        let spec = Self {
            children: [children_per_parent; 2],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.children.iter().any(|c| !(2..=3).contains(c)) || self.children[0] != self.children[1]
        {
            return Err(Error::Config(format!(
                "children per parent must be 2 or 3 on both sides, got {:?}",
                self.children
            )));
        }
        Ok(())
    }

    pub fn leaves(&self) -> usize {
        self.children[NEAR] + self.children[FAR]
    }

    pub fn parent_of(&self, leaf: usize) -> usize {
        if leaf < self.children[NEAR] {
            NEAR
        } else {
            FAR
        }
    }

    /// Leaf index range of a parent.
    pub fn leaf_range(&self, parent: usize) -> std::ops::Range<usize> {
        if parent == NEAR {
            0..self.children[NEAR]
        } else {
            self.children[NEAR]..self.leaves()
        }
    }
}

/// Softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Euclidean MLR posterior `softmax(z W + b)` with `weights[l][k]`.
pub fn euclid_mlr(z: &[f64], weights: &[Vec<f64>], biases: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&euclid_logits(z, weights, biases)?))
}

fn euclid_logits(z: &[f64], weights: &[Vec<f64>], biases: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != z.len() || weights.iter().any(|w| w.len() != biases.len()) {
        return Err(Error::shape("euclid_mlr", "weights must be L x K, biases K"));
    }
    Ok((0..biases.len())
        .map(|k| biases[k] + z.iter().zip(weights).map(|(zl, w)| zl * w[k]).sum::<f64>())
        .collect())
}

/// Projects a Euclidean embedding onto the ball.
pub fn project(z: &[f64], curvature: Curvature) -> Result<BallPoint> {
    manifold::exp_map0(&TangentVector::new(z.to_vec()), curvature)
}

/// Signed hyperbolic MLR logit of `h` for the hyperplane `(p, a)`.
pub fn hmlr_logit(h: &BallPoint, p: &BallPoint, a: &[f64]) -> Result<f64> {
    let a_norm = manifold::norm_sq(a).sqrt();
    if a_norm < MIN_NORMAL_NORM {
        return Err(Error::DegenerateNormal(a_norm));
    }
    if a.len() != h.dim() {
        return Err(Error::DimensionMismatch(a.len(), h.dim()));
    }
    let curvature = h.curvature();
    let kappa = curvature.kappa();
    let sk = kappa.sqrt();
    let m = manifold::mobius_add(&p.neg(), h)?;
    let m2 = manifold::norm_sq(m.coords());
    let inner = manifold::dot(m.coords(), a);
    let lambda = manifold::conformal_factor(p.coords(), curvature)?;
    let arg = 2.0 * sk * inner / ((1.0 - kappa * m2) * a_norm);
    Ok(lambda * a_norm / sk * arg.asinh())
}

/// Parameters of one MLR layer in per-class form.
#[derive(Debug, Clone)]
pub enum HeadParams {
    /// `weights[l][k]`, `biases[k]`.
    Euclidean {
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
    },
    Hyperbolic {
        offsets: Vec<BallPoint>,
        normals: Vec<Vec<f64>>,
    },
}

impl HeadParams {
    pub fn classes(&self) -> usize {
        match self {
            HeadParams::Euclidean { biases, .. } => biases.len(),
            HeadParams::Hyperbolic { offsets, .. } => offsets.len(),
        }
    }

    /// Logits for one embedding. Hyperbolic heads project `z` first.
    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            HeadParams::Euclidean { weights, biases } => euclid_logits(z, weights, biases),
            HeadParams::Hyperbolic { offsets, normals } => {
                let curvature = offsets
                    .first()
                    .map(|p| p.curvature())
                    .ok_or_else(|| Error::shape("hmlr", "no classes"))?;
                let h = project(z, curvature)?;
                offsets
                    .iter()
                    .zip(normals)
                    .map(|(p, a)| hmlr_logit(&h, p, a))
                    .collect()
            }
        }
    }
}

/// Masks for one TF bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinMasks {
    pub parent: [f64; 2],
    /// Conditional child posteriors, normalized within each parent's slots.
    pub child_cond: Vec<f64>,
    /// `parent[parent_of(k)] * child_cond[k]`.
    pub joint: Vec<f64>,
}

/// Combines parent logits with groupwise-normalized leaf logits.
pub fn hierarchical_masks(
    parent_logits: &[f64],
    leaf_logits: &[f64],
    spec: &HierarchySpec,
) -> Result<BinMasks> {
    if parent_logits.len() != 2 || leaf_logits.len() != spec.leaves() {
        return Err(Error::shape(
            "hierarchical_head",
            format!(
                "expected 2 parent and {} leaf logits, got {} and {}",
                spec.leaves(),
                parent_logits.len(),
                leaf_logits.len()
            ),
        ));
    }
    let p = softmax(parent_logits);
    let parent = [p[0], p[1]];
    let mut child_cond = vec![0.0; spec.leaves()];
    for side in [NEAR, FAR] {
        let r = spec.leaf_range(side);
        let s = softmax(&leaf_logits[r.clone()]);
        child_cond[r].copy_from_slice(&s);
    }
    let joint = (0..spec.leaves())
        .map(|k| parent[spec.parent_of(k)] * child_cond[k])
        .collect();
    Ok(BinMasks {
        parent,
        child_cond,
        joint,
    })
}

/// Hierarchical head for one embedding.
pub fn hierarchical_head(
    z: &[f64],
    parent: &HeadParams,
    child: &HeadParams,
    spec: &HierarchySpec,
) -> Result<BinMasks> {
    if parent.classes() != 2 || child.classes() != spec.leaves() {
        return Err(Error::shape(
            "hierarchical_head",
            format!(
                "parent head has {} classes, child head {} (hierarchy needs 2 and {})",
                parent.classes(),
                child.classes(),
                spec.leaves()
            ),
        ));
    }
    hierarchical_masks(&parent.logits(z)?, &child.logits(z)?, spec)
}

/// Leaf logits (`n x K`) to conditional child posteriors, softmaxed per parent.
pub fn groupwise_softmax(g: &mut Graph, logits: Var, spec: &HierarchySpec) -> Result<Var> {
    let mut parts = Vec::with_capacity(2);
    for side in [NEAR, FAR] {
        let r = spec.leaf_range(side);
        let block = g.cols(logits, r.start, r.end)?;
        parts.push(g.softmax_rows(block));
    }
    g.concat_cols(&parts)
}

/// Graph form of an MLR layer on embeddings `x` (`n x L`).
pub enum GraphHead {
    Euclidean { weights: Var, biases: Var },
    Hyperbolic { offsets: Var, normals: Var, kappa: f64 },
}

impl GraphHead {
    /// `x` must already be projected for hyperbolic heads.
    pub fn logits(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match *self {
            GraphHead::Euclidean { weights, biases } => {
                let xw = g.matmul(x, weights)?;
                g.add(xw, biases)
            }
            GraphHead::Hyperbolic {
                offsets,
                normals,
                kappa,
            } => geom::hmlr_logits(g, x, offsets, normals, kappa),
        }
    }
}
