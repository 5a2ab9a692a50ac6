//! Hierarchical cross-entropy losses with permutation-invariant child terms,
//! the training loop, SI-SDRi evaluation and curvature sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffkit::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{Checkpoint, RngState};
use crate::nn::features::log_magnitude_features;
use crate::nn::head::{HierarchySpec, FAR, NEAR, PARENT_NAMES};
use crate::nn::{Forward, Levels, Model, ModelConfig};
use crate::optim::{OptimConfig, Optimizer};
use crate::par;
use crate::scene::{stream_rng, Density, Manifest, SceneAudio, SceneRecord};
use crate::signal::masks::{apply_mask_and_resynthesize, ibm_targets_labeled, LabeledSource};
use crate::signal::metrics::{noise_reduction, si_sdri};
use crate::signal::stft::{Spectrogram, Stft, StftConfig};

/// Probabilities are clamped to `[LOG_FLOOR, 1]` inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub parent: f64,
    pub near: f64,
    pub far: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(parent: f64, near: f64, far: f64) -> Self {
        Self {
            parent,
            near,
            far,
            total: parent + near + far,
        }
    }

    fn mean(items: &[LossBreakdown]) -> Self {
        let n = items.len().max(1) as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self::new(sum(|l| l.parent), sum(|l| l.near), sum(|l| l.far))
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(op, format!("prediction {:?} vs target {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Mean over rows of `-Σ_k t_k ln(max(p_k, LOG_FLOOR))`.
pub fn cross_entropy(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_same_shape("cross_entropy", pred, target)?;
    let rows = pred.nrows().max(1) as f64;
    let mut total = 0.0;
    for (p, t) in pred.rows().into_iter().zip(target.rows()) {
        for (&pk, &tk) in p.iter().zip(t.iter()) {
            if tk != 0.0 {
                total -= tk * pk.clamp(LOG_FLOOR, 1.0).ln();
            }
        }
    }
    Ok(total / rows)
}

/// Parent-level loss: cross-entropy of the near/far posteriors.
pub fn loss_parent(target: &Tensor, pred: &Tensor) -> Result<f64> {
    cross_entropy(pred, target)
}

/// All permutations of `0..n` in lexicographic order (identity first).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Columns of `pred` gathered as `out[:, j] = pred[:, offset + perm[j]]`.
pub fn gather_columns(pred: &Tensor, offset: usize, perm: &[usize]) -> Tensor {
    let mut out = Tensor::zeros((pred.nrows(), perm.len()));
    for (j, &k) in perm.iter().enumerate() {
        out.column_mut(j).assign(&pred.column(offset + k));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitResult {
    pub loss: f64,
    pub near: f64,
    pub far: f64,
    /// Per parent, `perm[j]` is the predicted slot assigned to target slot
    /// `j`; `None` for a silent parent.
    pub perms: [Option<Vec<usize>>; 2],
}

/// Child-level loss minimized over the product of within-parent slot
/// permutations. `targets[p]` is the `N x children[p]` one-hot target of
/// parent `p` (`None` when it is silent, contributing zero); `pred` holds the
/// `N x K` conditional child posteriors. Parents are never exchanged.
pub fn loss_children_pit(targets: [Option<&Tensor>; 2], pred: &Tensor, spec: &HierarchySpec) -> Result<PitResult> {
    if pred.ncols() != spec.leaves() {
        return Err(Error::shape(
            "loss_children_pit",
            format!("{} leaf columns for {} leaves", pred.ncols(), spec.leaves()),
        ));
    }
    // Per-parent candidate losses, then the product of the two lists.
    let mut options: [Vec<(Option<Vec<usize>>, f64)>; 2] = [Vec::new(), Vec::new()];
    for p in [NEAR, FAR] {
        match targets[p] {
            None => options[p].push((None, 0.0)),
            Some(t) => {
                let slots = spec.children[p];
                if t.ncols() != slots || t.nrows() != pred.nrows() {
                    return Err(Error::shape(
                        "loss_children_pit",
                        format!("{} target {:?} for {slots} slots", PARENT_NAMES[p], t.dim()),
                    ));
                }
                let offset = spec.leaf_range(p).start;
                for perm in permutations(slots) {
                    let ce = cross_entropy(&gather_columns(pred, offset, &perm), t)?;
                    options[p].push((Some(perm), ce));
                }
            }
        }
    }
    let mut best: Option<PitResult> = None;
    for (np, nl) in &options[NEAR] {
        for (fp, fl) in &options[FAR] {
            let loss = nl + fl;
            if best.as_ref().is_none_or(|b| loss < b.loss) {
                best = Some(PitResult {
                    loss,
                    near: *nl,
                    far: *fl,
                    perms: [np.clone(), fp.clone()],
                });
            }
        }
    }
    Ok(best.expect("at least one assignment"))
}

/// Cross-entropy recorded on the tape.
pub fn graph_cross_entropy(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    if g.shape(pred) != target.dim() {
        return Err(Error::shape(
            "cross_entropy",
            format!("prediction {:?} vs target {:?}", g.shape(pred), target.dim()),
        ));
    }
    let rows = target.nrows().max(1) as f64;
    let c = g.clamp_min(pred, LOG_FLOOR);
    let l = g.log(c);
    let t = g.leaf(target.clone());
    let tl = g.mul(t, l)?;
    let s = g.sum_all(tl);
    Ok(g.scale(s, -1.0 / rows))
}

/// Training example: features plus IBM class indices per TF bin
/// (row `t * bins + f`).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub density: Density,
    pub frames: usize,
    pub bins: usize,
    pub features: Tensor,
    pub parent: Vec<u8>,
    /// Child slot within the parent, per bin; `None` for a silent parent.
    pub child: [Option<Vec<u8>>; 2],
}

fn one_hot(classes: &[u8], k: usize) -> Tensor {
    let mut t = Tensor::zeros((classes.len(), k));
    for (i, &c) in classes.iter().enumerate() {
        t[[i, c as usize]] = 1.0;
    }
    t
}

impl Example {
    pub fn parent_target(&self) -> Tensor {
        one_hot(&self.parent, 2)
    }

    pub fn child_target(&self, parent: usize, slots: usize) -> Option<Tensor> {
        self.child[parent].as_ref().map(|c| one_hot(c, slots))
    }
}

/// Source spectrograms and labels of one scene, shared by targets and
/// oracle masks.
pub struct SceneSpectra {
    pub mixture: Spectrogram,
    pub sources: Vec<Spectrogram>,
    pub labels: Vec<usize>,
}

impl SceneSpectra {
    pub fn analyze(engine: &Stft, record: &SceneRecord, audio: &SceneAudio) -> Result<Self> {
        Ok(Self {
            mixture: engine.analyze(&audio.mixture)?,
            sources: audio.wet.iter().map(|w| engine.analyze(w)).collect::<Result<_>>()?,
            labels: record.labels(),
        })
    }

    fn labeled(&self) -> Vec<LabeledSource<'_>> {
        self.sources
            .iter()
            .zip(&self.labels)
            .map(|(s, _)| LabeledSource {
                spectrogram: s,
                distance: f64::NAN,
            })
            .collect()
    }
}

pub fn stft_config_for(manifest: &Manifest) -> Result<StftConfig> {
    StftConfig::for_rate(manifest.render.sample_rate)
}

pub fn prepare_example(record: &SceneRecord, spectra: &SceneSpectra, hierarchy: &HierarchySpec) -> Result<Example> {
    let targets = ibm_targets_labeled(&spectra.labeled(), &spectra.labels, hierarchy)?;
    let n = targets.parent.data.nrows();
    let classes = |m: &crate::signal::MaskTensor| -> Vec<u8> {
        (0..n).map(|r| m.argmax_row(r).unwrap_or(0) as u8).collect()
    };
    Ok(Example {
        id: record.id.clone(),
        density: record.density,
        frames: spectra.mixture.frames(),
        bins: spectra.mixture.bins(),
        features: log_magnitude_features(&spectra.mixture),
        parent: classes(&targets.parent),
        child: [targets.near.as_ref().map(classes), targets.far.as_ref().map(classes)],
    })
}

/// Features and targets of every scene in the manifest.
pub fn prepare_examples(manifest: &Manifest, hierarchy: &HierarchySpec) -> Result<Vec<Example>> {
    let engine = Stft::new(stft_config_for(manifest)?)?;
    par::try_map_range(manifest.scenes.len(), |i| {
        let record = &manifest.scenes[i];
        let audio = manifest.audio(i)?;
        let spectra = SceneSpectra::analyze(&engine, record, &audio)?;
        prepare_example(record, &spectra, hierarchy)
    })
}

/// Records the compound loss of one example on `g`.
pub fn build_loss(model: &Model, g: &mut Graph, fwd: &Forward, ex: &Example) -> Result<(Var, LossBreakdown)> {
    let parent = graph_cross_entropy(g, fwd.parent, &ex.parent_target())?;
    let mut total = parent;
    let mut child = [0.0; 2];
    if let Some(cond) = fwd.child_cond {
        let spec = &model.config.hierarchy;
        let targets = [NEAR, FAR].map(|p| ex.child_target(p, spec.children[p]));
        let pit = loss_children_pit([targets[NEAR].as_ref(), targets[FAR].as_ref()], g.value(cond), spec)?;
        for p in [NEAR, FAR] {
            let (Some(t), Some(perm)) = (&targets[p], &pit.perms[p]) else {
                continue;
            };
            // Target slot j is matched with predicted slot perm[j].
            let mut permuted = Tensor::zeros(t.dim());
            for (j, &k) in perm.iter().enumerate() {
                permuted.column_mut(k).assign(&t.column(j));
            }
            let range = spec.leaf_range(p);
            let block = g.cols(cond, range.start, range.end)?;
            let ce = graph_cross_entropy(g, block, &permuted)?;
            child[p] = g.scalar(ce);
            total = g.add(total, ce)?;
        }
    }
    let breakdown = LossBreakdown::new(g.scalar(parent), child[NEAR], child[FAR]);
    Ok((total, breakdown))
}

/// Loss and parameter gradients (store order) of one example.
pub fn example_gradients(
    model: &Model,
    ex: &Example,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let mut g = Graph::new();
    let fwd = model.forward(&mut g, &ex.features, dropout_rng)?;
    let (total, breakdown) = build_loss(model, &mut g, &fwd, ex)?;
    let mut grads = g.backward(total)?;
    Ok((breakdown, fwd.params.iter().map(|&v| grads.take(v)).collect()))
}

/// Eval-mode loss of one example.
pub fn example_loss(model: &Model, ex: &Example) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let fwd = model.forward::<ChaCha8Rng>(&mut g, &ex.features, None)?;
    Ok(build_loss(model, &mut g, &fwd, ex)?.1)
}

/// Mean eval-mode loss over examples.
pub fn dataset_loss(model: &Model, examples: &[Example]) -> Result<LossBreakdown> {
    let losses = par::try_map(examples, |_, ex| example_loss(model, ex))?;
    Ok(LossBreakdown::mean(&losses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Batch 8, at most 50 epochs.
    pub fn desk() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            seed: 0,
            optim: OptimConfig::default(),
        }
    }

    /// Batch 96 with 200 (one-level) or 300 (two-level) epochs.
    pub fn paper(levels: Levels) -> Self {
        Self {
            epochs: match levels {
                Levels::One => 200,
                Levels::Two => 300,
            },
            batch_size: 96,
            seed: 0,
            optim: OptimConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be >= 1".into()));
        }
        self.optim.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,lr,parent,near,far,total,val";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.lr, self.train.parent, self.train.near, self.train.far, self.train.total, self.val
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Parameters at the best validation epoch.
    pub best: Model,
    pub last: Model,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Eval-mode training loss before the first update.
    pub initial: LossBreakdown,
    pub log: Vec<EpochLog>,
}

fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut out = String::from(TRAIN_LOG_HEADER);
    out.push('\n');
    for row in log {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

const DROPOUT_STREAM: u64 = 1 << 50;
const SHUFFLE_STREAM: u64 = 1 << 51;
const REPAIR_STREAM: u64 = 1 << 52;

/// Mini-batch training. Gradients of a batch are computed in parallel, one
/// tape per example, and averaged in batch order. The best-validation model
/// is checkpointed to `<out>/best.json` and the per-epoch log written to
/// `<out>/train_log.csv` when `out` is given.
pub fn train_run(
    mut model: Model,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let kappa = model.curvature().kappa();
    let mut opt = Optimizer::new(&model.params, cfg.optim)?;
    let mut shuffle_rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut repair_rng = stream_rng(cfg.seed, REPAIR_STREAM);
    let initial = dataset_loss(&model, train)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut val_history = Vec::with_capacity(cfg.epochs);
    let mut best = (model.clone(), 0, f64::INFINITY);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = opt.lr;
        let mut epoch_losses = Vec::with_capacity(train.len());
        for batch in order.chunks(cfg.batch_size) {
            let results = par::try_map(batch, |_, &idx| {
                let stream = DROPOUT_STREAM + ((epoch as u64) << 32) + idx as u64;
                let mut rng = stream_rng(cfg.seed, stream);
                example_gradients(&model, &train[idx], Some(&mut rng))
            })?;
            let scale = 1.0 / results.len() as f64;
            let mut grads: Vec<Tensor> = model.params.params.iter().map(|p| Tensor::zeros(p.value.dim())).collect();
            for (loss, g) in &results {
                if !loss.total.is_finite() {
                    log::error!("non-finite loss in epoch {epoch}; keeping the last good checkpoint");
                    return Err(Error::NonFiniteLoss { epoch });
                }
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.scaled_add(scale, gi);
                }
                epoch_losses.push(*loss);
            }
            opt.step(&mut model.params, grads, kappa)?;
            let fixed = model.repair_normals(&mut repair_rng);
            if fixed > 0 {
                log::warn!("re-randomized {fixed} collapsed hyperplane normals");
            }
        }
        let train_loss = LossBreakdown::mean(&epoch_losses);
        let val_loss = if val.is_empty() {
            train_loss.total
        } else {
            dataset_loss(&model, val)?.total
        };
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        val_history.push(val_loss);
        opt.schedule(&val_history);
        log.push(EpochLog {
            epoch,
            lr,
            train: train_loss,
            val: val_loss,
        });
        log::info!(
            "epoch {epoch}: lr {lr:.2e} parent {:.4} near {:.4} far {:.4} total {:.4} val {val_loss:.4}",
            train_loss.parent,
            train_loss.near,
            train_loss.far,
            train_loss.total
        );
        if val_loss < best.2 {
            best = (model.clone(), epoch, val_loss);
            if let Some(dir) = out {
                let rng_state = RngState::capture(cfg.seed, &shuffle_rng);
                Checkpoint::new(&model, Some(&opt), Some(rng_state), epoch).save(&dir.join("best.json"))?;
            }
        }
        if let Some(dir) = out {
            write_log(&dir.join("train_log.csv"), &log)?;
        }
    }
    Ok(TrainOutput {
        best: best.0,
        last: model,
        best_epoch: best.1,
        best_val: best.2,
        initial,
        log,
    })
}

/// Masks applied to the mixture spectrogram, each `T x F`.
#[derive(Debug, Clone)]
pub struct SceneMasks {
    pub parent: [Tensor; 2],
    /// One per leaf slot, near slots first.
    pub leaves: Option<Vec<Tensor>>,
}

/// Source of separation masks for evaluation.
pub trait Masker: Sync {
    fn masks(&self, spectra: &SceneSpectra, hierarchy: &HierarchySpec) -> Result<SceneMasks>;
}

/// Masks predicted by a trained model.
pub struct ModelMasker<'a>(pub &'a Model);

impl Masker for ModelMasker<'_> {
    fn masks(&self, spectra: &SceneSpectra, _hierarchy: &HierarchySpec) -> Result<SceneMasks> {
        let model = self.0;
        let inf = model.infer(&log_magnitude_features(&spectra.mixture))?;
        let leaves = (model.config.levels == Levels::Two).then(|| {
            (0..model.hierarchy().leaves())
                .map(|k| inf.leaf_mask(k, model.config.resynthesis).expect("two-level model"))
                .collect()
        });
        Ok(SceneMasks {
            parent: [inf.parent_mask(NEAR), inf.parent_mask(FAR)],
            leaves,
        })
    }
}

/// Ideal binary masks from the reference sources: the ceiling any model is
/// measured against.
pub struct OracleIbm;

impl Masker for OracleIbm {
    fn masks(&self, spectra: &SceneSpectra, hierarchy: &HierarchySpec) -> Result<SceneMasks> {
        let t = ibm_targets_labeled(&spectra.labeled(), &spectra.labels, hierarchy)?;
        let parent = [t.parent.class_slice(NEAR), t.parent.class_slice(FAR)];
        let mut leaves = Vec::with_capacity(hierarchy.leaves());
        for p in [NEAR, FAR] {
            for j in 0..hierarchy.children[p] {
                leaves.push(match t.child(p) {
                    Some(c) => &c.class_slice(j) * &parent[p],
                    None => Tensor::zeros(parent[p].dim()),
                });
            }
        }
        Ok(SceneMasks {
            parent,
            leaves: Some(leaves),
        })
    }
}

/// Every estimate is the unprocessed mixture.
pub struct PassThrough;

impl Masker for PassThrough {
    fn masks(&self, spectra: &SceneSpectra, hierarchy: &HierarchySpec) -> Result<SceneMasks> {
        let ones = Tensor::ones(spectra.mixture.data.dim());
        Ok(SceneMasks {
            parent: [ones.clone(), ones.clone()],
            leaves: Some(vec![ones; hierarchy.leaves()]),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    SiSdri,
    /// Reported for a silent parent.
    NoiseReduction,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::SiSdri => "si-sdri",
            Metric::NoiseReduction => "noise-reduction†",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scene_id: String,
    pub density: Density,
    pub curvature: f64,
    /// Parent-level dB per parent; see `parent_metric`. In a scene with a
    /// silent parent the other parent's reference is the mixture itself, so
    /// its SI-SDRi is not reported.
    pub parent_db: [Option<f64>; 2],
    pub parent_metric: [Metric; 2],
    /// Mean child SI-SDRi of each non-silent parent under the best slot
    /// assignment.
    pub child_sisdri: [Option<f64>; 2],
}

/// Best mean SI-SDRi over injective assignments of references to slots.
fn best_child_assignment(refs: &[&[f64]], estimates: &[Vec<f64>], mixture: &[f64]) -> Result<f64> {
    let slots = estimates.len();
    let mut scores = vec![vec![0.0; slots]; refs.len()];
    for (i, r) in refs.iter().enumerate() {
        for (j, e) in estimates.iter().enumerate() {
            scores[i][j] = si_sdri(e, r, mixture)?;
        }
    }
    let mut best = f64::NEG_INFINITY;
    for perm in permutations(slots) {
        let total: f64 = (0..refs.len()).map(|i| scores[i][perm[i]]).sum();
        best = best.max(total / refs.len() as f64);
    }
    Ok(best)
}

fn evaluate_scene(
    masker: &dyn Masker,
    engine: &Stft,
    record: &SceneRecord,
    audio: &SceneAudio,
    hierarchy: &HierarchySpec,
    curvature: f64,
) -> Result<EvalRecord> {
    let spectra = SceneSpectra::analyze(engine, record, audio)?;
    let masks = masker.masks(&spectra, hierarchy)?;
    let mix = &audio.mixture;
    let silent = record.density.silent_parent();
    let mut parent_db = [None; 2];
    let mut parent_metric = [Metric::SiSdri; 2];
    let mut child_sisdri = [None, None];
    for p in [NEAR, FAR] {
        let est = apply_mask_and_resynthesize(engine, &spectra.mixture, &masks.parent[p])?;
        if record.density.count(p) == 0 {
            parent_db[p] = Some(noise_reduction(mix, &est));
            parent_metric[p] = Metric::NoiseReduction;
            continue;
        }
        if silent.is_none() {
            parent_db[p] = Some(si_sdri(&est, &audio.parents[p], mix)?);
        }
        if let Some(leaves) = &masks.leaves {
            let refs: Vec<&[f64]> = audio
                .wet
                .iter()
                .zip(&spectra.labels)
                .filter(|(_, &l)| l == p)
                .map(|(w, _)| w.as_slice())
                .collect();
            let estimates = hierarchy
                .leaf_range(p)
                .map(|k| apply_mask_and_resynthesize(engine, &spectra.mixture, &leaves[k]))
                .collect::<Result<Vec<_>>>()?;
            child_sisdri[p] = Some(best_child_assignment(&refs, &estimates, mix)?);
        }
    }
    Ok(EvalRecord {
        scene_id: record.id.clone(),
        density: record.density,
        curvature,
        parent_db,
        parent_metric,
        child_sisdri,
    })
}

/// One row of the aggregate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// Density tag, or `average`.
    pub density: String,
    pub scenes: usize,
    pub parent_db: [Option<f64>; 2],
    pub parent_metric: [Metric; 2],
    pub child_db: [Option<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub curvature: f64,
    pub records: Vec<EvalRecord>,
    pub table: Vec<TableRow>,
}

pub const TABLE_HEADER: &str =
    "curvature,density,scenes,near_db,near_metric,far_db,far_metric,near_child_db,far_child_db";

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

impl Evaluation {
    fn build_table(records: &[EvalRecord]) -> Vec<TableRow> {
        let mut densities: Vec<Density> = Vec::new();
        for r in records {
            if !densities.contains(&r.density) {
                densities.push(r.density);
            }
        }
        let mut rows: Vec<TableRow> = densities
            .iter()
            .map(|&d| {
                let rs: Vec<&EvalRecord> = records.iter().filter(|r| r.density == d).collect();
                TableRow {
                    density: d.to_string(),
                    scenes: rs.len(),
                    parent_db: [NEAR, FAR].map(|p| mean(rs.iter().filter_map(|r| r.parent_db[p]))),
                    parent_metric: rs[0].parent_metric,
                    child_db: [NEAR, FAR].map(|p| mean(rs.iter().filter_map(|r| r.child_sisdri[p]))),
                }
            })
            .collect();
        // The average row covers SI-SDRi only; noise reduction is kept per row.
        rows.push(TableRow {
            density: "average".into(),
            scenes: records.len(),
            parent_db: [NEAR, FAR].map(|p| {
                mean(
                    records
                        .iter()
                        .filter(|r| r.parent_metric[p] == Metric::SiSdri)
                        .filter_map(|r| r.parent_db[p]),
                )
            }),
            parent_metric: [Metric::SiSdri; 2],
            child_db: [NEAR, FAR].map(|p| mean(records.iter().filter_map(|r| r.child_sisdri[p]))),
        });
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for r in &self.table {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                self.curvature,
                r.density,
                r.scenes,
                fmt_opt(r.parent_db[NEAR]),
                r.parent_metric[NEAR].label(),
                fmt_opt(r.parent_db[FAR]),
                r.parent_metric[FAR].label(),
                fmt_opt(r.child_db[NEAR]),
                fmt_opt(r.child_db[FAR]),
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Mean parent SI-SDRi over non-silent parents of all scenes.
    pub fn mean_parent_sisdri(&self) -> Option<f64> {
        mean(self.records.iter().flat_map(|r| {
            [NEAR, FAR]
                .into_iter()
                .filter(|&p| r.parent_metric[p] == Metric::SiSdri)
                .filter_map(|p| r.parent_db[p])
        }))
    }

    /// Mean noise reduction over silent parents.
    pub fn mean_noise_reduction(&self) -> Option<f64> {
        mean(self.records.iter().flat_map(|r| {
            [NEAR, FAR]
                .into_iter()
                .filter(|&p| r.parent_metric[p] == Metric::NoiseReduction)
                .filter_map(|p| r.parent_db[p])
        }))
    }
}

/// Evaluates `masker` on every scene of the manifest. Scenes are processed in
/// parallel; records keep manifest order.
pub fn evaluate(masker: &dyn Masker, manifest: &Manifest, curvature: f64) -> Result<Evaluation> {
    let engine = Stft::new(stft_config_for(manifest)?)?;
    let hierarchy = manifest.hierarchy;
    let records = par::try_map_range(manifest.scenes.len(), |i| {
        let audio = manifest.audio(i)?;
        evaluate_scene(masker, &engine, &manifest.scenes[i], &audio, &hierarchy, curvature)
    })?;
    let table = Evaluation::build_table(&records);
    Ok(Evaluation {
        curvature,
        records,
        table,
    })
}

pub const SWEEP_CURVATURES: [f64; 3] = [0.0, -0.1, -1.0];

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub curvature: f64,
    pub ball_params: usize,
    pub train: TrainOutput,
    pub evaluation: Evaluation,
    pub table_path: Option<PathBuf>,
}

/// Trains and evaluates one model per curvature from the same seed, data and
/// data order. The Euclidean run is checked to hold no ball parameters.
pub fn curvature_sweep(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[Example],
    val: &[Example],
    test: &Manifest,
    curvatures: &[f64],
    out: Option<&Path>,
) -> Result<Vec<SweepRun>> {
    curvatures
        .iter()
        .map(|&c| {
            let mut cfg = base.clone();
            cfg.curvature = crate::manifold::Curvature::new(c)?;
            let mut init_rng = stream_rng(train_cfg.seed, 0);
            let model = Model::new(cfg, &mut init_rng)?;
            let ball_params = model.params.ball_count();
            if c == 0.0 && ball_params != 0 {
                return Err(Error::Invariant(format!(
                    "Euclidean model constructed {ball_params} ball parameters"
                )));
            }
            let run_dir = out.map(|d| d.join(format!("c{c}")));
            let trained = train_run(model, train, val, train_cfg, run_dir.as_deref())?;
            let evaluation = evaluate(&ModelMasker(&trained.best), test, c)?;
            let table_path = match &run_dir {
                Some(dir) => {
                    let p = dir.join("table.csv");
                    evaluation.write_csv(&p)?;
                    Some(p)
                }
                None => None,
            };
            Ok(SweepRun {
                curvature: c,
                ball_params,
                train: trained,
                evaluation,
                table_path,
            })
        })
        .collect()
}
