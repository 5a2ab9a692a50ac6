//! Certainty analysis: norms of per-bin ball embeddings, grouped by the
//! acoustic condition of each scene.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::features::log_magnitude_features;
use crate::nn::Model;
use crate::par;
use crate::scene::{Density, Manifest, SceneRecord};
use crate::signal::Stft;
use crate::train::{stft_config_for, SceneSpectra};

/// Bins more than this many dB below the mixture's peak magnitude are skipped.
pub const ENERGY_FLOOR_DB: f64 = -60.0;

/// How scenes are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    Density,
    /// Equidistant probe: distance between the two sources.
    RelativeDistance,
    /// Mic-distance probe: distance of the near source.
    MicDistance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Density(Density),
    RelativeDistance(f64),
    MicDistance(f64),
}

impl Condition {
    pub fn of(kind: ConditionKind, record: &SceneRecord) -> Result<Self> {
        let value = || {
            record
                .condition
                .ok_or_else(|| Error::Config(format!("scene {} has no probe condition", record.id)))
        };
        Ok(match kind {
            ConditionKind::Density => Condition::Density(record.density),
            ConditionKind::RelativeDistance => Condition::RelativeDistance(value()?),
            ConditionKind::MicDistance => Condition::MicDistance(value()?),
        })
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Density(d) => write!(f, "{d}"),
            Condition::RelativeDistance(v) => write!(f, "delta={v}"),
            Condition::MicDistance(v) => write!(f, "d1={v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSample {
    /// Index into the manifest's scenes.
    pub scene: usize,
    pub frame: u32,
    pub bin: u32,
    /// Source with the largest magnitude in this bin (lower index on ties).
    pub source: u8,
    pub norm: f64,
    pub condition: Condition,
}

fn hyperbolic_kappa(model: &Model) -> Result<f64> {
    let c = model.config.curvature;
    if c.is_euclidean() {
        return Err(Error::EuclideanCheckpoint);
    }
    Ok(c.kappa())
}

/// Index of the source with the largest magnitude at `(t, f)`.
fn dominant_source(spectra: &SceneSpectra, t: usize, f: usize) -> usize {
    let mut best = 0;
    let mut best_mag = f64::NEG_INFINITY;
    for (k, s) in spectra.sources.iter().enumerate() {
        let m = s.data[[t, f]].norm();
        if m > best_mag {
            best = k;
            best_mag = m;
        }
    }
    best
}

/// Bins of the mixture at or above the energy floor, as `(frame, bin)`.
fn active_bins(spectra: &SceneSpectra) -> Vec<(usize, usize)> {
    let data = &spectra.mixture.data;
    let peak = data.iter().fold(0.0f64, |m, c| m.max(c.norm()));
    if peak <= 0.0 {
        return Vec::new();
    }
    let floor = peak * 10f64.powf(ENERGY_FLOOR_DB / 20.0);
    data.indexed_iter()
        .filter(|(_, c)| c.norm() >= floor)
        .map(|((t, f), _)| (t, f))
        .collect()
}

/// One norm sample per active TF bin of every scene, attributed to its
/// dominant source. Scenes are processed in parallel; output order follows
/// the manifest.
pub fn collect_norms(model: &Model, manifest: &Manifest, kind: ConditionKind) -> Result<Vec<NormSample>> {
    let kappa = hyperbolic_kappa(model)?;
    let bound = 1.0 / kappa.sqrt();
    let engine = Stft::new(stft_config_for(manifest)?)?;
    let per_scene = par::try_map_range(manifest.scenes.len(), |i| {
        let record = &manifest.scenes[i];
        let condition = Condition::of(kind, record)?;
        let audio = manifest.audio(i)?;
        let spectra = SceneSpectra::analyze(&engine, record, &audio)?;
        let inf = model.infer(&log_magnitude_features(&spectra.mixture))?;
        let bins = inf.bins;
        active_bins(&spectra)
            .into_iter()
            .map(|(t, f)| {
                let row = inf.embeddings.row(t * bins + f);
                let norm = row.dot(&row).sqrt();
                if !(norm < bound) {
                    return Err(Error::Invariant(format!(
                        "embedding norm {norm} outside the ball (bound {bound}) in scene {}",
                        record.id
                    )));
                }
                Ok(NormSample {
                    scene: i,
                    frame: t as u32,
                    bin: f as u32,
                    source: dominant_source(&spectra, t, f) as u8,
                    norm,
                    condition,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per_scene.into_iter().flatten().collect())
}

/// Raw ball coordinates of one scene's active bins, for scatter plots.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPoint {
    pub frame: usize,
    pub bin: usize,
    pub source: usize,
    pub coords: Vec<f64>,
}

pub fn embedding_points(model: &Model, manifest: &Manifest, scene: usize) -> Result<Vec<EmbeddingPoint>> {
    hyperbolic_kappa(model)?;
    let record = manifest
        .scenes
        .get(scene)
        .ok_or_else(|| Error::Config(format!("scene index {scene} out of range")))?;
    let engine = Stft::new(stft_config_for(manifest)?)?;
    let spectra = SceneSpectra::analyze(&engine, record, &manifest.audio(scene)?)?;
    let inf = model.infer(&log_magnitude_features(&spectra.mixture))?;
    Ok(active_bins(&spectra)
        .into_iter()
        .map(|(t, f)| EmbeddingPoint {
            frame: t,
            bin: f,
            source: dominant_source(&spectra, t, f),
            coords: inf.embeddings.row(t * inf.bins + f).to_vec(),
        })
        .collect())
}

pub fn write_points_csv(path: &Path, points: &[EmbeddingPoint]) -> Result<()> {
    let dim = points.first().map_or(0, |p| p.coords.len());
    let mut out = String::from("frame,bin,source");
    (0..dim).for_each(|j| out.push_str(&format!(",x{j}")));
    out.push('\n');
    for p in points {
        out.push_str(&format!("{},{},{}", p.frame, p.bin, p.source));
        p.coords.iter().for_each(|v| out.push_str(&format!(",{v}")));
        out.push('\n');
    }
    write_file(path, &out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionHistogram {
    pub condition: Condition,
    /// `bins + 1` edges spanning `[0, max_norm]`.
    pub edges: Vec<f64>,
    /// Fraction of samples per bin; sums to 1.
    pub mass: Vec<f64>,
    /// `mass / width`; integrates to 1.
    pub density: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub count: usize,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Per-condition histograms of norms on `[0, max_norm]`, in the order the
/// conditions are given. Conditions without samples are skipped with a
/// warning.
pub fn histogram_by_condition(
    samples: &[NormSample],
    conditions: &[Condition],
    bins: usize,
    max_norm: f64,
) -> Result<Vec<ConditionHistogram>> {
    if samples.is_empty() {
        return Err(Error::Config("no norm samples to histogram".into()));
    }
    if bins == 0 || !(max_norm > 0.0) {
        return Err(Error::Config(format!("histogram needs bins >= 1 and max_norm > 0 (got {bins}, {max_norm})")));
    }
    let width = max_norm / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 * width).collect();
    let mut out = Vec::with_capacity(conditions.len());
    for &condition in conditions {
        let mut norms: Vec<f64> = samples
            .iter()
            .filter(|s| s.condition == condition)
            .map(|s| s.norm)
            .collect();
        if norms.is_empty() {
            log::warn!("condition {condition} has no samples");
            continue;
        }
        norms.sort_by(f64::total_cmp);
        let n = norms.len() as f64;
        let mut counts = vec![0usize; bins];
        for &v in &norms {
            counts[((v / width) as usize).min(bins - 1)] += 1;
        }
        let mass: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        out.push(ConditionHistogram {
            condition,
            edges: edges.clone(),
            density: mass.iter().map(|m| m / width).collect(),
            mass,
            mean: norms.iter().sum::<f64>() / n,
            median: median(&norms),
            count: norms.len(),
        });
    }
    Ok(out)
}

/// Distinct conditions of the samples, in order of first appearance.
pub fn conditions_of(samples: &[NormSample]) -> Vec<Condition> {
    let mut seen: Vec<Condition> = Vec::new();
    for s in samples {
        if !seen.contains(&s.condition) {
            seen.push(s.condition);
        }
    }
    seen
}

pub const HISTOGRAM_HEADER: &str = "condition,bin_left,bin_right,density";
pub const SUMMARY_HEADER: &str = "condition,mean,median,count";

pub fn histogram_csv(hists: &[ConditionHistogram]) -> String {
    let mut out = format!("{HISTOGRAM_HEADER}\n");
    for h in hists {
        for (i, d) in h.density.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", h.condition, h.edges[i], h.edges[i + 1], d));
        }
    }
    out
}

pub fn summary_csv(hists: &[ConditionHistogram]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for h in hists {
        out.push_str(&format!("{},{},{},{}\n", h.condition, h.mean, h.median, h.count));
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes `histogram.csv` and `summary.csv` into `dir`.
pub fn write_histograms(dir: &Path, hists: &[ConditionHistogram]) -> Result<()> {
    write_file(&dir.join("histogram.csv"), &histogram_csv(hists))?;
    write_file(&dir.join("summary.csv"), &summary_csv(hists))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| ranks[k] = r);
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of the average ranks. `None` when either side is
/// constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    pub conditions: Vec<Condition>,
    pub means: Vec<f64>,
    pub rho: f64,
    pub pass: bool,
}

impl fmt::Display for TrendReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "spearman rho = {:.4} ({})", self.rho, if self.pass { "pass" } else { "fail" })?;
        for (c, m) in self.conditions.iter().zip(&self.means) {
            write!(f, "; {c}: {m:.4}")?;
        }
        Ok(())
    }
}

/// Rank correlation between the position of each condition in `order` and
/// its mean norm. Passes when `rho > 0`.
pub fn trend_test(hists: &[ConditionHistogram], order: &[Condition]) -> Result<TrendReport> {
    if order.len() < 3 {
        return Err(Error::Config(format!("trend test needs >= 3 conditions, got {}", order.len())));
    }
    let means = order
        .iter()
        .map(|c| {
            hists
                .iter()
                .find(|h| h.condition == *c)
                .map(|h| h.mean)
                .ok_or_else(|| Error::Config(format!("no samples for condition {c}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let position: Vec<f64> = (0..means.len()).map(|i| i as f64).collect();
    let rho = spearman(&position, &means).unwrap_or(0.0);
    Ok(TrendReport {
        conditions: order.to_vec(),
        means,
        rho,
        pass: rho > 0.0,
    })
}

/// Probe conditions in trend order: relative distance ascending, mic
/// distance descending.
pub fn trend_order(samples: &[NormSample]) -> Vec<Condition> {
    let mut conds = conditions_of(samples);
    let key = |c: &Condition| match c {
        Condition::RelativeDistance(v) => *v,
        Condition::MicDistance(v) => -*v,
        Condition::Density(d) => (d.near * 10 + d.far) as f64,
    };
    conds.sort_by(|a, b| key(a).total_cmp(&key(b)));
    conds
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn samples(norms: &[f64], condition: Condition) -> Vec<NormSample> {
        norms
            .iter()
            .map(|&norm| NormSample {
                scene: 0,
                frame: 0,
                bin: 0,
                source: 0,
                norm,
                condition,
            })
            .collect()
    }

    fn hist(mean: f64, c: Condition) -> ConditionHistogram {
        ConditionHistogram {
            condition: c,
            edges: vec![0.0, 1.0],
            mass: vec![1.0],
            density: vec![1.0],
            mean,
            median: mean,
            count: 1,
        }
    }

    #[test]
    fn equal_norms_fill_one_bin() {
        let c = Condition::MicDistance(0.2);
        let h = histogram_by_condition(&samples(&[0.55; 40], c), &[c], 10, 1.0).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].mass.iter().filter(|&&m| m > 0.0).count(), 1);
        assert_eq!(h[0].mass[5], 1.0);
        assert!((h[0].median - 0.55).abs() < 1e-15);
    }

    #[test]
    fn uniform_norms_give_flat_histogram() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let c = Condition::RelativeDistance(0.5);
        let norms: Vec<f64> = (0..100_000).map(|_| rng.random_range(0.0..1.0)).collect();
        let h = histogram_by_condition(&samples(&norms, c), &[c], 10, 1.0).unwrap();
        for m in &h[0].mass {
            assert!((m - 0.1).abs() < 0.005, "{m}");
        }
        let area: f64 = h[0].density.iter().map(|d| d * 0.1).sum();
        assert!((area - 1.0).abs() < 1e-9);
    }

    #[test]
    fn csv_has_one_row_per_condition_and_bin() {
        let (a, b) = (Condition::MicDistance(0.2), Condition::MicDistance(0.8));
        let mut s = samples(&[0.1, 0.2], a);
        s.extend(samples(&[0.3], b));
        let h = histogram_by_condition(&s, &[a, b, Condition::MicDistance(0.5)], 7, 1.0).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(histogram_csv(&h).lines().count(), 1 + 2 * 7);
        assert_eq!(summary_csv(&h).lines().count(), 3);
    }

    #[test]
    fn spearman_examples() {
        let conds: Vec<Condition> = (0..5).map(|i| Condition::RelativeDistance(i as f64)).collect();
        let report = |means: &[f64]| {
            let hs: Vec<_> = means.iter().zip(&conds).map(|(&m, &c)| hist(m, c)).collect();
            trend_test(&hs, &conds).unwrap()
        };
        assert_eq!(report(&[0.1, 0.2, 0.3, 0.4, 0.5]).rho, 1.0);
        assert_eq!(report(&[0.5, 0.4, 0.3, 0.2, 0.1]).rho, -1.0);
        let r = report(&[0.3, 0.5, 0.4, 0.7, 0.9]);
        assert!((r.rho - 0.9).abs() < 1e-12);
        assert!(r.pass);
        assert!(trend_test(&[], &conds[..2]).is_err());
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0, 3.0]), vec![2.5, 1.0, 2.5, 4.0]);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), None);
    }

    #[test]
    fn trend_order_reverses_mic_distance() {
        let mut s = samples(&[0.1], Condition::MicDistance(0.2));
        s.extend(samples(&[0.1], Condition::MicDistance(0.8)));
        s.extend(samples(&[0.1], Condition::MicDistance(0.5)));
        assert_eq!(
            trend_order(&s),
            vec![Condition::MicDistance(0.8), Condition::MicDistance(0.5), Condition::MicDistance(0.2)]
        );
    }
}
