//! Separator network: context encoder producing one `L`-dimensional embedding
//! per TF bin, optional projection onto the Poincaré ball, and parent/leaf MLR
//! heads combined hierarchically.

pub mod checkpoint;
pub mod features;
pub mod geom;
pub mod head;
pub mod params;

use ndarray::Axis;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffkit::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::manifold::{self, Curvature, BALL_EPS};

pub use head::{HierarchySpec, FAR, NEAR};
pub use params::{Param, ParamKind, ParamStore};

use head::GraphHead;

/// Normalization tolerance of the runtime mask checks.
pub const MASK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    /// Dense tanh layers over a window of neighbouring frames.
    FeedforwardContext,
    /// Elman tanh recurrence over frames as the first hidden layer.
    Recurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// STFT bins per frame.
    pub bins: usize,
    /// Context radius in frames.
    pub context: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub dropout: f64,
    pub backbone: Backbone,
}

impl EncoderConfig {
    /// Small feedforward encoder that trains in minutes on a CPU.
    pub fn desk(bins: usize) -> Self {
        Self {
            bins,
            context: 2,
            hidden: vec![128, 128],
            embed_dim: 2,
            dropout: 0.0,
            backbone: Backbone::FeedforwardContext,
        }
    }

    /// Four recurrent-width layers of 600 units with dropout 0.3. The
    /// recurrence is unidirectional here.
    pub fn paper(bins: usize) -> Self {
        Self {
            bins,
            context: 0,
            hidden: vec![600; 4],
            embed_dim: 2,
            dropout: 0.3,
            backbone: Backbone::Recurrent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.bins == 0 {
            return Err(Error::Config("embedding dim and bins must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("encoder needs at least one non-empty hidden layer".into()));
        }
        Ok(())
    }

    fn input_width(&self) -> usize {
        (2 * self.context + 1) * self.bins
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Levels {
    /// Parent (near/far) separation only.
    One,
    /// Parent plus per-parent child separation.
    Two,
}

/// Which leaf masks are applied to the mixture for resynthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resynthesis {
    /// Parent posterior times conditional child posterior.
    #[default]
    Joint,
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub hierarchy: HierarchySpec,
    pub levels: Levels,
    pub curvature: Curvature,
    #[serde(default)]
    pub resynthesis: Resynthesis,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.hierarchy.validate()
    }
}

/// Nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// One leaf per parameter, in store order.
    pub params: Vec<Var>,
    /// Euclidean embeddings, `T F x L`.
    pub z: Var,
    /// Ball embeddings for hyperbolic models.
    pub h: Option<Var>,
    /// Parent posteriors, `T F x 2`.
    pub parent: Var,
    /// Conditional child posteriors, `T F x K`, normalized per parent.
    pub child_cond: Option<Var>,
}

/// Plain-tensor outputs for evaluation and analysis.
#[derive(Debug, Clone)]
pub struct Inference {
    pub frames: usize,
    pub bins: usize,
    /// Ball points for hyperbolic models, `Z` otherwise.
    pub embeddings: Tensor,
    pub parent: Tensor,
    pub child_cond: Option<Tensor>,
    pub joint: Option<Tensor>,
}

impl Inference {
    /// `T x F` mask applied to the mixture to extract `leaf`.
    pub fn leaf_mask(&self, leaf: usize, mode: Resynthesis) -> Option<Tensor> {
        let src = match mode {
            Resynthesis::Joint => self.joint.as_ref()?,
            Resynthesis::Conditional => self.child_cond.as_ref()?,
        };
        Some(column_as_grid(src, leaf, self.frames, self.bins))
    }

    pub fn parent_mask(&self, parent: usize) -> Tensor {
        column_as_grid(&self.parent, parent, self.frames, self.bins)
    }
}

pub(crate) fn column_as_grid(t: &Tensor, col: usize, frames: usize, bins: usize) -> Tensor {
    Tensor::from_shape_vec((frames, bins), t.column(col).to_vec()).expect("row-major layout")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

fn normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    Tensor::from_shape_fn((rows, cols), |_| {
        std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    })
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let e = &config.encoder;
        let mut store = ParamStore::default();
        let mut fan_in = e.input_width();
        for (i, &h) in e.hidden.iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            if i == 0 && e.backbone == Backbone::Recurrent {
                store.push("rnn.w_in", ParamKind::Euclidean, uniform(rng, fan_in, h, bound));
                let rb = 1.0 / (h as f64).sqrt();
                store.push("rnn.w_rec", ParamKind::Euclidean, uniform(rng, h, h, rb));
                store.push("rnn.b", ParamKind::Euclidean, Tensor::zeros((1, h)));
            } else {
                store.push(format!("enc.{i}.w"), ParamKind::Euclidean, uniform(rng, fan_in, h, bound));
                store.push(format!("enc.{i}.b"), ParamKind::Euclidean, Tensor::zeros((1, h)));
            }
            fan_in = h;
        }
        let out = e.bins * e.embed_dim;
        let bound = 1.0 / (fan_in as f64).sqrt();
        store.push("enc.out.w", ParamKind::Euclidean, uniform(rng, fan_in, out, bound));
        store.push("enc.out.b", ParamKind::Euclidean, Tensor::zeros((1, out)));

        let mut heads = vec![("parent", 2)];
        if config.levels == Levels::Two {
            heads.push(("child", config.hierarchy.leaves()));
        }
        for (name, k) in heads {
            Self::init_head(&mut store, name, k, &config, rng)?;
        }
        Ok(Self {
            config,
            params: store,
        })
    }

    fn init_head(
        store: &mut ParamStore,
        name: &str,
        classes: usize,
        config: &ModelConfig,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let dim = config.encoder.embed_dim;
        if config.curvature.is_euclidean() {
            let bound = 1.0 / (dim as f64).sqrt();
            store.push(format!("{name}.w"), ParamKind::Euclidean, uniform(rng, dim, classes, bound));
            store.push(format!("{name}.b"), ParamKind::Euclidean, Tensor::zeros((1, classes)));
        } else {
            let kappa = config.curvature.kappa();
            let mut p = normal(rng, dim, classes, 0.01);
            for mut col in p.axis_iter_mut(Axis(1)) {
                let v = col.to_vec();
                let q = manifold::exp_map0_raw(&v, kappa);
                col.assign(&ndarray::Array1::from(q));
            }
            store.push(format!("{name}.p"), ParamKind::Ball, p);
            store.push(format!("{name}.a"), ParamKind::Euclidean, normal(rng, dim, classes, 0.01));
        }
        Ok(())
    }

    pub fn curvature(&self) -> Curvature {
        self.config.curvature
    }

    pub fn hierarchy(&self) -> &HierarchySpec {
        &self.config.hierarchy
    }

    /// Re-draws hyperplane normals whose norm collapsed below
    /// [`head::MIN_NORMAL_NORM`]. Returns how many columns were reset.
    pub fn repair_normals(&mut self, rng: &mut impl Rng) -> usize {
        let mut fixed = 0;
        for p in self.params.params.iter_mut().filter(|p| p.name.ends_with(".a")) {
            for mut col in p.value.axis_iter_mut(Axis(1)) {
                if col.dot(&col).sqrt() < head::MIN_NORMAL_NORM {
                    for v in col.iter_mut() {
                        *v = 0.01 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
                    }
                    fixed += 1;
                }
            }
        }
        fixed
    }

    fn graph_head(&self, vars: &[Var], name: &str) -> Result<GraphHead> {
        let v = |suffix: &str| -> Result<Var> {
            Ok(vars[self.params.index(&format!("{name}.{suffix}"))?])
        };
        Ok(if self.config.curvature.is_euclidean() {
            GraphHead::Euclidean {
                weights: v("w")?,
                biases: v("b")?,
            }
        } else {
            GraphHead::Hyperbolic {
                offsets: v("p")?,
                normals: v("a")?,
                kappa: self.config.curvature.kappa(),
            }
        })
    }

    fn dropout(&self, g: &mut Graph, x: Var, rng: Option<&mut impl Rng>) -> Result<Var> {
        let rate = self.config.encoder.dropout;
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let (r, c) = g.shape(x);
                let mask = Tensor::from_shape_fn((r, c), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                let m = g.leaf(mask);
                g.mul(x, m)
            }
            _ => Ok(x),
        }
    }

    fn recurrent(&self, g: &mut Graph, x: Var, vars: &[Var]) -> Result<Var> {
        let w_in = vars[self.params.index("rnn.w_in")?];
        let w_rec = vars[self.params.index("rnn.w_rec")?];
        let b = vars[self.params.index("rnn.b")?];
        let proj0 = g.matmul(x, w_in)?;
        let proj = g.add(proj0, b)?;
        let (frames, _) = g.shape(proj);
        let mut states = Vec::with_capacity(frames);
        let mut prev: Option<Var> = None;
        for t in 0..frames {
            let xt = g.rows(proj, t, t + 1)?;
            let pre = match prev {
                Some(h) => {
                    let r = g.matmul(h, w_rec)?;
                    g.add(xt, r)?
                }
                None => xt,
            };
            let h = g.tanh(pre);
            states.push(h);
            prev = Some(h);
        }
        g.concat_rows(&states)
    }

    /// Records the network on `g` for a `T x F` feature matrix. Passing a
    /// dropout RNG selects training mode.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        features: &Tensor,
        dropout_rng: Option<&mut R>,
    ) -> Result<Forward> {
        let vars: Vec<Var> = self.params.params.iter().map(|p| g.leaf(p.value.clone())).collect();
        self.forward_with(g, vars, features, dropout_rng)
    }

    /// As [`Model::forward`] with parameter leaves supplied by the caller, in
    /// store order.
    pub fn forward_with<R: Rng>(
        &self,
        g: &mut Graph,
        vars: Vec<Var>,
        features: &Tensor,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<Forward> {
        let e = &self.config.encoder;
        let (frames, bins) = features.dim();
        if bins != e.bins {
            return Err(Error::shape(
                "encode",
                format!("features have {bins} bins, encoder expects {}", e.bins),
            ));
        }
        if vars.len() != self.params.len() {
            return Err(Error::shape(
                "encode",
                format!("{} parameter leaves for {} parameters", vars.len(), self.params.len()),
            ));
        }
        let input = g.leaf(features::stack_context(features, e.context));

        let mut hcur = input;
        for i in 0..e.hidden.len() {
            hcur = if i == 0 && e.backbone == Backbone::Recurrent {
                self.recurrent(g, hcur, &vars)?
            } else {
                let w = vars[self.params.index(&format!("enc.{i}.w"))?];
                let b = vars[self.params.index(&format!("enc.{i}.b"))?];
                let xw = g.matmul(hcur, w)?;
                let pre = g.add(xw, b)?;
                g.tanh(pre)
            };
            hcur = self.dropout(g, hcur, dropout_rng.as_deref_mut())?;
        }
        let w = vars[self.params.index("enc.out.w")?];
        let b = vars[self.params.index("enc.out.b")?];
        let xw = g.matmul(hcur, w)?;
        let out = g.add(xw, b)?;
        let z = g.reshape(out, frames * bins, e.embed_dim)?;

        let curvature = self.config.curvature;
        let h = if curvature.is_euclidean() {
            None
        } else {
            Some(geom::exp_map0(g, z, curvature.kappa())?)
        };
        let emb = h.unwrap_or(z);

        let parent_logits = self.graph_head(&vars, "parent")?.logits(g, emb)?;
        let parent = g.softmax_rows(parent_logits);
        let child_cond = if self.config.levels == Levels::Two {
            let leaf_logits = self.graph_head(&vars, "child")?.logits(g, emb)?;
            Some(head::groupwise_softmax(g, leaf_logits, &self.config.hierarchy)?)
        } else {
            None
        };
        let fwd = Forward {
            params: vars,
            z,
            h,
            parent,
            child_cond,
        };
        self.check_forward(g, &fwd)?;
        Ok(fwd)
    }

    /// Runtime invariants: normalized masks at every level and ball
    /// membership of every hyperbolic embedding.
    pub fn check_forward(&self, g: &Graph, fwd: &Forward) -> Result<()> {
        use crate::signal::masks::check_groups_normalized;
        let spec = &self.config.hierarchy;
        check_groups_normalized(g.value(fwd.parent), &[0..2], "parent mask", MASK_TOL)?;
        if let Some(c) = fwd.child_cond {
            let cond = g.value(c);
            check_groups_normalized(
                cond,
                &[spec.leaf_range(NEAR), spec.leaf_range(FAR)],
                "child mask",
                MASK_TOL,
            )?;
            let joint = joint_masks(g.value(fwd.parent), cond, spec);
            check_groups_normalized(&joint, &[0..spec.leaves()], "joint leaf mask", MASK_TOL)?;
        }
        if let Some(h) = fwd.h {
            let kappa = self.config.curvature.kappa();
            for (i, row) in g.value(h).rows().into_iter().enumerate() {
                let r2 = kappa * row.dot(&row);
                if !(r2 <= 1.0 - BALL_EPS + 1e-12) {
                    return Err(Error::Invariant(format!(
                        "embedding {i} left the ball: kappa |h|^2 = {r2}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Evaluation-mode forward pass returning plain tensors.
    pub fn infer(&self, features: &Tensor) -> Result<Inference> {
        let mut g = Graph::new();
        let fwd = self.forward::<rand_chacha::ChaCha8Rng>(&mut g, features, None)?;
        let (frames, bins) = features.dim();
        let parent = g.value(fwd.parent).clone();
        let child_cond = fwd.child_cond.map(|c| g.value(c).clone());
        let joint = child_cond
            .as_ref()
            .map(|c| joint_masks(&parent, c, &self.config.hierarchy));
        Ok(Inference {
            frames,
            bins,
            embeddings: g.value(fwd.h.unwrap_or(fwd.z)).clone(),
            parent,
            child_cond,
            joint,
        })
    }
}

/// `joint[:, k] = parent[:, parent_of(k)] * child_cond[:, k]`.
pub fn joint_masks(parent: &Tensor, child_cond: &Tensor, spec: &HierarchySpec) -> Tensor {
    let mut joint = child_cond.clone();
    for k in 0..spec.leaves() {
        let p = parent.column(spec.parent_of(k));
        let mut col = joint.column_mut(k);
        col *= &p;
    }
    joint
}
