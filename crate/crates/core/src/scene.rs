//! Acoustic scene simulation: shoebox rooms, distance-labelled source
//! placement, a delay/attenuation/decaying-tail renderer, and datasets of
//! rendered scenes described by JSON manifests.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::head::{HierarchySpec, FAR, NEAR};
use crate::par;
use crate::signal::wav::{read_wav, write_wav, WavFormat};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const ROOM_MIN: [f64; 3] = [3.0, 4.0, 2.13];
pub const ROOM_MAX: [f64; 3] = [7.0, 8.0, 3.03];
pub const RT60_RANGE: (f64, f64) = (0.1, 0.5);
pub const DEFAULT_TAU: f64 = 0.8;
pub const CHUNK_SECONDS: f64 = 6.0;
/// Closest allowed source distance in meters.
pub const D_MIN: f64 = 0.1;
pub const BETA_SHAPE: (f64, f64) = (1.5, 1.5);
pub const MAX_TRIES: usize = 10_000;
/// Fixed far-source distance of the mic-distance probe.
pub const PROBE_FAR_DISTANCE: f64 = 2.9;
/// Most sources a scene may hold.
pub const MAX_SOURCES: usize = 4;

/// Seeded stream for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub dims: [f64; 3],
    pub rt60: f64,
    pub mic: [f64; 3],
}

impl Room {
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        p.iter().zip(&self.dims).all(|(&x, &d)| x > 0.0 && x < d)
    }

    /// Largest distance from the microphone to any of the six walls.
    pub fn max_wall_distance(&self) -> f64 {
        self.mic
            .iter()
            .zip(&self.dims)
            .flat_map(|(&m, &d)| [m, d - m])
            .fold(0.0, f64::max)
    }

    /// Upper end of the source-distance support.
    pub fn d_max(&self) -> f64 {
        0.95 * self.max_wall_distance()
    }
}

pub fn sample_room(rng: &mut impl Rng) -> Room {
    let mut dims = [0.0; 3];
    for i in 0..3 {
        dims[i] = rng.random_range(ROOM_MIN[i]..=ROOM_MAX[i]);
    }
    let rt60 = rng.random_range(RT60_RANGE.0..=RT60_RANGE.1);
    let mut mic = [0.0; 3];
    for i in 0..3 {
        // Open interval: resample the (measure-zero) boundary.
        mic[i] = loop {
            let v = rng.random_range(0.0..dims[i]);
            if v > 0.0 {
                break v;
            }
        };
    }
    Room { dims, rt60, mic }
}

/// Near/far source counts of a scene, written `{near,far}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Density {
    pub near: usize,
    pub far: usize,
}

impl Density {
    pub const fn new(near: usize, far: usize) -> Self {
        Self { near, far }
    }

    pub fn count(&self, parent: usize) -> usize {
        if parent == NEAR {
            self.near
        } else {
            self.far
        }
    }

    pub fn total(&self) -> usize {
        self.near + self.far
    }

    pub fn validate(&self, hierarchy: &HierarchySpec) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::EmptyScene);
        }
        if self.near > hierarchy.children[NEAR] || self.far > hierarchy.children[FAR] || self.total() > MAX_SOURCES
        {
            return Err(Error::Config(format!(
                "density {self} does not fit {:?} child slots",
                hierarchy.children
            )));
        }
        Ok(())
    }

    /// Parent whose group is empty, if any.
    pub fn silent_parent(&self) -> Option<usize> {
        if self.near == 0 {
            Some(NEAR)
        } else if self.far == 0 {
            Some(FAR)
        } else {
            None
        }
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{},{}}}", self.near, self.far)
    }
}

impl FromStr for Density {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("density `{s}` is not of the form {{near,far}}"));
        let inner = s.trim().strip_prefix('{').and_then(|r| r.strip_suffix('}')).ok_or_else(bad)?;
        let (a, b) = inner.split_once(',').ok_or_else(bad)?;
        Ok(Self::new(
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        ))
    }
}

impl Serialize for Density {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Density {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedSource {
    pub position: [f64; 3],
    pub distance: f64,
    /// `NEAR` or `FAR`.
    pub parent: usize,
}

/// Parent label of a source at distance `d`.
pub fn label(d: f64, tau: f64) -> usize {
    if d < tau {
        NEAR
    } else {
        FAR
    }
}

/// Distance drawn from the scaled `Beta(1.5, 1.5)` on `[d_min, d_max]`.
pub fn sample_distance(rng: &mut impl Rng, d_min: f64, d_max: f64) -> f64 {
    let beta = Beta::new(BETA_SHAPE.0, BETA_SHAPE.1).expect("valid shape");
    d_min + (d_max - d_min) * beta.sample(rng)
}

fn unit_vector(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Point at exactly `d` from the microphone in a uniform direction, resampled
/// until it lies inside the room.
pub fn place_at_distance(room: &Room, d: f64, rng: &mut impl Rng) -> Result<PlacedSource> {
    for _ in 0..MAX_TRIES {
        let u = unit_vector(rng);
        let p = std::array::from_fn(|i| room.mic[i] + d * u[i]);
        if room.contains(&p) {
            return Ok(PlacedSource {
                position: p,
                distance: d,
                parent: NEAR,
            });
        }
    }
    Err(Error::Infeasible(format!(
        "no direction puts a source {d:.3} m from the microphone inside the room"
    )))
}

/// Draws sources until every parent has `density` children. A draw whose
/// parent is already full is rejected, as is a draw whose direction search
/// fails.
pub fn place_sources(
    room: &Room,
    hierarchy: &HierarchySpec,
    density: Density,
    tau: f64,
    rng: &mut impl Rng,
) -> Result<Vec<PlacedSource>> {
    density.validate(hierarchy)?;
    let d_max = room.d_max();
    if d_max <= D_MIN {
        return Err(Error::Infeasible("microphone too close to every wall".into()));
    }
    let mut open = [density.near, density.far];
    let mut placed = Vec::with_capacity(density.total());
    let mut rejections = 0;
    while open.iter().sum::<usize>() > 0 {
        let d = sample_distance(rng, D_MIN, d_max);
        let parent = label(d, tau);
        if open[parent] > 0 {
            if let Ok(mut s) = place_at_distance(room, d, rng) {
                s.parent = parent;
                placed.push(s);
                open[parent] -= 1;
                continue;
            }
        }
        rejections += 1;
        if rejections >= MAX_TRIES {
            return Err(Error::Infeasible(format!(
                "could not fill density {density} with tau {tau} in a room with d_max {d_max:.3} m"
            )));
        }
    }
    Ok(placed)
}

/// Harmonic stand-in for a speech utterance: 8 harmonics of a fixed f0 with
/// 1/k roll-off, syllable-rate amplitude modulation, pauses and a
/// band-limited noise floor 20 dB down. Peak is 0.9.
pub fn synth_speech_like(seconds: f64, sample_rate: u32, rng: &mut impl Rng) -> Vec<f64> {
    let fs = sample_rate as f64;
    let n = (seconds * fs).round() as usize;
    let f0 = rng.random_range(100.0..300.0);
    let phases: [f64; 8] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let am_rate = rng.random_range(2.0..8.0);
    let am_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let nyquist = fs / 2.0;
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let tone: f64 = (1..=8)
                .filter(|&k| (k as f64) * f0 < nyquist)
                .map(|k| (std::f64::consts::TAU * k as f64 * f0 * t + phases[k - 1]).sin() / k as f64)
                .sum();
            let am = 0.55 + 0.45 * (std::f64::consts::TAU * am_rate * t + am_phase).sin();
            tone * am
        })
        .collect();

    // Band-limited noise, 20 dB below the harmonic part.
    let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len().max(1) as f64).sqrt();
    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let lp = |v: &[f64], fc: f64| {
        let a = (-std::f64::consts::TAU * fc / fs).exp();
        let mut y = 0.0;
        v.iter()
            .map(|&s| {
                y = (1.0 - a) * s + a * y;
                y
            })
            .collect::<Vec<f64>>()
    };
    let hi = lp(&white, 3400.0_f64.min(0.45 * fs));
    let lo = lp(&white, 300.0);
    let band: Vec<f64> = hi.iter().zip(&lo).map(|(h, l)| h - l).collect();
    let target = rms(&x) * 0.1;
    let scale = target / rms(&band).max(1e-12);
    x.iter_mut().zip(&band).for_each(|(s, b)| *s += scale * b);

    // Pauses with 10 ms ramps, at least one per started 6 s.
    let pauses = (seconds / CHUNK_SECONDS).ceil().max(1.0) as usize + rng.random_range(0..2);
    let ramp = ((0.01 * fs) as usize).max(1);
    for _ in 0..pauses {
        let len = (rng.random_range(0.2..0.6) * fs) as usize;
        if len + 2 * ramp >= n {
            continue;
        }
        let start = rng.random_range(0..n - len);
        for i in start..start + len {
            let edge = (i - start).min(start + len - 1 - i);
            let g = if edge < ramp { 1.0 - edge as f64 / ramp as f64 } else { 0.0 };
            x[i] *= g;
        }
    }

    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= 0.9 / peak);
    }
    x
}

/// Linear convolution truncated to `x.len()`, through the FFT.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        b.resize(n, Complex64::new(0.0, 0.0));
        b
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    a.iter().take(x.len()).map(|c| c.re / n as f64).collect()
}

/// Wet signal of one source: the direct path delayed by `d / c` (nearest
/// sample) with gain `1 / max(d, 0.1)`, plus a noise tail with envelope
/// `10^(-3 t / rt60)` and gain `0.1 sqrt(rt60) min(d, 1)` starting right
/// after the direct path.
pub fn render_source(dry: &[f64], distance: f64, rt60: f64, sample_rate: u32, rng: &mut impl Rng) -> Vec<f64> {
    let fs = sample_rate as f64;
    let delay = (distance / SPEED_OF_SOUND * fs).round() as usize;
    let gain = 1.0 / distance.max(0.1);
    let tail_len = (rt60 * fs).ceil() as usize;
    let g_rev = 0.1 * rt60.sqrt() * distance.min(1.0);
    let mut h = vec![0.0; delay + 1 + tail_len];
    h[delay] = gain;
    for i in 0..tail_len {
        let t = (i + 1) as f64 / fs;
        let env = 10f64.powf(-3.0 * t / rt60);
        let w: f64 = StandardNormal.sample(rng);
        h[delay + 1 + i] = g_rev * env * w;
    }
    fft_convolve(dry, &h)
}

/// Everything needed to re-render a scene bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub density: Density,
    pub room: Room,
    pub sources: Vec<PlacedSource>,
    /// Seeds of each source's dry signal and reverberation tail.
    pub dry_seeds: Vec<u64>,
    pub tail_seeds: Vec<u64>,
    /// Peak-normalization gain applied to every wet signal (1 if none).
    pub gain: f64,
    /// Probe condition (relative or mic distance) when generated by a probe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<SceneFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFiles {
    /// Paths relative to the manifest directory.
    pub mix: PathBuf,
    pub sources: Vec<PathBuf>,
    pub near: PathBuf,
    pub far: PathBuf,
    /// SHA-256 of each written file, keyed by relative path.
    pub sha256: BTreeMap<String, String>,
}

impl SceneRecord {
    pub fn silent_parent(&self) -> Option<usize> {
        self.density.silent_parent()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.sources.iter().map(|s| s.parent).collect()
    }
}

/// Time-domain signals of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneAudio {
    pub wet: Vec<Vec<f64>>,
    pub mixture: Vec<f64>,
    /// Sums of the wet sources per parent (zeros for a silent parent).
    pub parents: [Vec<f64>; 2],
}

impl SceneAudio {
    fn assemble(wet: Vec<Vec<f64>>, labels: &[usize], len: usize) -> Self {
        let mut mixture = vec![0.0; len];
        let mut parents = [vec![0.0; len], vec![0.0; len]];
        for (w, &p) in wet.iter().zip(labels) {
            for i in 0..len {
                mixture[i] += w[i];
                parents[p][i] += w[i];
            }
        }
        Self { wet, mixture, parents }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub sample_rate: u32,
    pub seconds: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            seconds: CHUNK_SECONDS,
        }
    }
}

impl RenderConfig {
    pub fn samples(&self) -> usize {
        (self.seconds * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || !(self.seconds > 0.0) {
            return Err(Error::Config(format!("invalid render settings {self:?}")));
        }
        Ok(())
    }
}

fn render_wet(record: &SceneRecord, cfg: &RenderConfig) -> Vec<Vec<f64>> {
    record
        .sources
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let dry = synth_speech_like(cfg.seconds, cfg.sample_rate, &mut ChaCha8Rng::seed_from_u64(record.dry_seeds[k]));
            let mut tail_rng = ChaCha8Rng::seed_from_u64(record.tail_seeds[k]);
            render_source(&dry, s.distance, record.room.rt60, cfg.sample_rate, &mut tail_rng)
        })
        .collect()
}

/// Renders a scene from its record. The recorded gain is applied to every
/// wet signal before they are summed, so the mixture is exactly their sum.
pub fn render(record: &SceneRecord, cfg: &RenderConfig) -> SceneAudio {
    let mut wet = render_wet(record, cfg);
    if record.gain != 1.0 {
        wet.iter_mut().flatten().for_each(|v| *v *= record.gain);
    }
    SceneAudio::assemble(wet, &record.labels(), cfg.samples())
}

/// Peak-normalization gain that keeps the mixture within [-1, 1]. The target
/// peak sits slightly below 1 so rounding in the rescaled sum cannot cross it.
fn clip_gain(record: &SceneRecord, cfg: &RenderConfig) -> f64 {
    let audio = SceneAudio::assemble(render_wet(record, cfg), &record.labels(), cfg.samples());
    let peak = audio.mixture.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        log::warn!("scene {} clips (peak {peak:.3}); peak-normalizing", record.id);
        (1.0 - 1e-9) / peak
    } else {
        1.0
    }
}

/// Draws room, placements and per-source seeds for one scene from its own
/// stream, then fixes the clipping gain.
pub fn generate_scene(
    id: String,
    seed: u64,
    stream: u64,
    density: Density,
    hierarchy: &HierarchySpec,
    tau: f64,
    cfg: &RenderConfig,
) -> Result<SceneRecord> {
    let mut rng = stream_rng(seed, stream);
    let mut last_err = None;
    for _ in 0..100 {
        let room = sample_room(&mut rng);
        match place_sources(&room, hierarchy, density, tau, &mut rng) {
            Ok(sources) => {
                let dry_seeds = (0..sources.len()).map(|_| rng.next_u64()).collect();
                let tail_seeds = (0..sources.len()).map(|_| rng.next_u64()).collect();
                let mut record = SceneRecord {
                    id,
                    density,
                    room,
                    sources,
                    dry_seeds,
                    tail_seeds,
                    gain: 1.0,
                    condition: None,
                    files: None,
                };
                record.gain = clip_gain(&record, cfg);
                return Ok(record);
            }
            Err(e @ Error::Infeasible(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("loop ran"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Probe,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Probe => "probe",
        }
    }

    fn stream_base(self) -> u64 {
        (self as u64) << 40
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub split: Split,
    pub seed: u64,
    pub render: RenderConfig,
    pub tau: f64,
    pub hierarchy: HierarchySpec,
    /// Scene count per density tag.
    pub counts: BTreeMap<String, usize>,
    pub scenes: Vec<SceneRecord>,
    /// Directory the manifest was loaded from; relative file paths resolve
    /// against it.
    #[serde(skip)]
    pub root: Option<PathBuf>,
}

impl Manifest {
    pub fn density_histogram(&self) -> BTreeMap<String, usize> {
        let mut h = BTreeMap::new();
        for s in &self.scenes {
            *h.entry(s.density.to_string()).or_insert(0) += 1;
        }
        h
    }

    /// Audio of scene `i`: read from disk when the manifest carries files,
    /// rendered from the record otherwise.
    pub fn audio(&self, i: usize) -> Result<SceneAudio> {
        let record = &self.scenes[i];
        match (&record.files, &self.root) {
            (Some(files), Some(root)) => {
                let sr = self.render.sample_rate;
                let wet = files
                    .sources
                    .iter()
                    .map(|p| read_wav(&root.join(p), sr))
                    .collect::<Result<Vec<_>>>()?;
                let mixture = read_wav(&root.join(&files.mix), sr)?;
                let near = read_wav(&root.join(&files.near), sr)?;
                let far = read_wav(&root.join(&files.far), sr)?;
                Ok(SceneAudio {
                    wet,
                    mixture,
                    parents: [near, far],
                })
            }
            _ => Ok(render(record, &self.render)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_vec_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_slice(&bytes).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        m.root = path.parent().map(Path::to_path_buf);
        Ok(m)
    }
}

/// Scene counts of one density across the three splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySplit {
    pub density: Density,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DensitySplit {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
            Split::Probe => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityPreset {
    /// Two children per parent, desk-scale counts.
    Table1Desk,
    /// Two children per parent, full published counts.
    Table1Paper,
    ThreeChildDesk,
    ThreeChildPaper,
    /// Two-source scenes for the one-level near/far task.
    Pair,
}

impl FromStr for DensityPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown density preset `{s}`")))
    }
}

pub const TABLE1_TRAIN: [usize; 5] = [3156, 8217, 28059, 71152, 89416];
pub const TABLE1_VAL: [usize; 5] = [45, 101, 321, 916, 1117];
pub const TABLE1_TEST: usize = 400;
pub const TWO_CHILD_DENSITIES: [Density; 5] = [
    Density::new(2, 0),
    Density::new(2, 1),
    Density::new(2, 2),
    Density::new(1, 2),
    Density::new(0, 2),
];
pub const THREE_CHILD_DENSITIES: [Density; 5] = [
    Density::new(3, 0),
    Density::new(3, 1),
    Density::new(2, 2),
    Density::new(1, 3),
    Density::new(0, 3),
];

/// Splits `total` in proportion to `weights` (largest remainder), giving every
/// entry at least one.
pub fn proportional_counts(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    let k = weights.len();
    let total = total.max(k);
    let spare = total - k;
    let exact: Vec<f64> = weights.iter().map(|&w| spare as f64 * w as f64 / sum as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = spare - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts.iter().map(|c| c + 1).collect()
}

impl DensityPreset {
    pub fn hierarchy(self) -> HierarchySpec {
        match self {
            DensityPreset::ThreeChildDesk | DensityPreset::ThreeChildPaper => HierarchySpec::new(3),
            _ => HierarchySpec::new(2),
        }
        .expect("valid preset hierarchy")
    }

    /// Per-density split counts. Desk presets keep the published train and
    /// validation proportions at `desk_train` / `desk_val` scenes in total and
    /// `desk_test` test scenes per density.
    pub fn splits(self, desk_train: usize, desk_val: usize, desk_test: usize) -> Vec<DensitySplit> {
        let densities = match self {
            DensityPreset::ThreeChildDesk | DensityPreset::ThreeChildPaper => THREE_CHILD_DENSITIES.to_vec(),
            DensityPreset::Table1Desk | DensityPreset::Table1Paper => TWO_CHILD_DENSITIES.to_vec(),
            DensityPreset::Pair => vec![Density::new(1, 1), Density::new(2, 0), Density::new(0, 2)],
        };
        let (train, val, test): (Vec<usize>, Vec<usize>, usize) = match self {
            DensityPreset::Table1Paper | DensityPreset::ThreeChildPaper => {
                (TABLE1_TRAIN.to_vec(), TABLE1_VAL.to_vec(), TABLE1_TEST)
            }
            DensityPreset::Table1Desk | DensityPreset::ThreeChildDesk => (
                proportional_counts(&TABLE1_TRAIN, desk_train),
                proportional_counts(&TABLE1_VAL, desk_val),
                desk_test,
            ),
            DensityPreset::Pair => (
                proportional_counts(&[2, 1, 1], desk_train),
                proportional_counts(&[2, 1, 1], desk_val),
                desk_test,
            ),
        };
        densities
            .iter()
            .enumerate()
            .map(|(i, &density)| DensitySplit {
                density,
                train: train[i],
                val: val[i],
                test,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub tau: f64,
    pub hierarchy: HierarchySpec,
    pub render: RenderConfig,
    pub densities: Vec<DensitySplit>,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > D_MIN) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must exceed {D_MIN} m, got {}", self.tau)));
        }
        self.hierarchy.validate()?;
        self.render.validate()?;
        for d in &self.densities {
            d.density.validate(&self.hierarchy)?;
        }
        Ok(())
    }
}

/// Generates the records of one split. Scene `i` uses stream
/// `split_base + i` of the global seed, so splits never share streams.
pub fn generate_split(cfg: &DatasetConfig, split: Split) -> Result<Manifest> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for ds in &cfg.densities {
        for _ in 0..ds.count(split) {
            jobs.push(ds.density);
        }
    }
    let scenes = par::try_map(&jobs, |i, &density| {
        generate_scene(
            format!("{}-{i:05}", split.name()),
            cfg.seed,
            split.stream_base() + i as u64,
            density,
            &cfg.hierarchy,
            cfg.tau,
            &cfg.render,
        )
    })?;
    let mut manifest = Manifest {
        split,
        seed: cfg.seed,
        render: cfg.render,
        tau: cfg.tau,
        hierarchy: cfg.hierarchy,
        counts: BTreeMap::new(),
        scenes,
        root: None,
    };
    manifest.counts = manifest.density_histogram();
    Ok(manifest)
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Renders every scene of `manifest` to `<out>/<split>/<scene_id>/` as 32-bit
/// float WAVs, records paths and checksums, and writes
/// `<out>/<split>/manifest.json`.
pub fn write_split(manifest: &mut Manifest, out: &Path) -> Result<PathBuf> {
    let split_dir = out.join(manifest.split.name());
    let render_cfg = manifest.render;
    let files = par::try_map(&manifest.scenes, |_, record| -> Result<SceneFiles> {
        let audio = render(record, &render_cfg);
        let rel_dir = PathBuf::from(&record.id);
        let mut sha256 = BTreeMap::new();
        let mut put = |name: String, signal: &[f64]| -> Result<PathBuf> {
            let rel = rel_dir.join(name);
            let path = split_dir.join(&rel);
            write_wav(&path, signal, render_cfg.sample_rate, WavFormat::Float32)?;
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            sha256.insert(rel.to_string_lossy().into_owned(), sha256_hex(&bytes));
            Ok(rel)
        };
        let mix = put("mix.wav".into(), &audio.mixture)?;
        let sources = audio
            .wet
            .iter()
            .enumerate()
            .map(|(k, w)| put(format!("src{k}.wav"), w))
            .collect::<Result<Vec<_>>>()?;
        let near = put("near.wav".into(), &audio.parents[NEAR])?;
        let far = put("far.wav".into(), &audio.parents[FAR])?;
        Ok(SceneFiles {
            mix,
            sources,
            near,
            far,
            sha256,
        })
    })?;
    for (record, f) in manifest.scenes.iter_mut().zip(files) {
        record.files = Some(f);
    }
    let path = split_dir.join("manifest.json");
    manifest.save(&path)?;
    manifest.root = Some(split_dir);
    Ok(path)
}

/// Generates and writes train, validation and test splits.
pub fn build_dataset(cfg: &DatasetConfig, out: &Path) -> Result<Vec<Manifest>> {
    [Split::Train, Split::Val, Split::Test]
        .into_iter()
        .map(|split| {
            let mut m = generate_split(cfg, split)?;
            write_split(&mut m, out)?;
            Ok(m)
        })
        .collect()
}

fn probe_manifest(cfg: &DatasetConfig, scenes: Vec<SceneRecord>) -> Manifest {
    let mut m = Manifest {
        split: Split::Probe,
        seed: cfg.seed,
        render: cfg.render,
        tau: cfg.tau,
        hierarchy: cfg.hierarchy,
        counts: BTreeMap::new(),
        scenes,
        root: None,
    };
    m.counts = m.density_histogram();
    m
}

fn probe_scene(
    id: String,
    mut rng: ChaCha8Rng,
    distances: [f64; 2],
    condition: f64,
    cfg: &DatasetConfig,
) -> Result<SceneRecord> {
    for _ in 0..MAX_TRIES {
        let room = sample_room(&mut rng);
        if room.d_max() < distances[FAR] {
            continue;
        }
        let placed: Result<Vec<PlacedSource>> = [NEAR, FAR]
            .into_iter()
            .map(|p| {
                let mut s = place_at_distance(&room, distances[p], &mut rng)?;
                s.parent = p;
                Ok(s)
            })
            .collect();
        let Ok(sources) = placed else { continue };
        let dry_seeds = vec![rng.next_u64(), rng.next_u64()];
        let tail_seeds = vec![rng.next_u64(), rng.next_u64()];
        let mut record = SceneRecord {
            id,
            density: Density::new(1, 1),
            room,
            sources,
            dry_seeds,
            tail_seeds,
            gain: 1.0,
            condition: Some(condition),
            files: None,
        };
        record.gain = clip_gain(&record, &cfg.render);
        return Ok(record);
    }
    Err(Error::Infeasible(format!(
        "no sampled room fits a source at {:.2} m",
        distances[FAR]
    )))
}

/// One near and one far source placed symmetrically about `tau`, at
/// `tau - Δ/2` and `tau + Δ/2`, for every relative distance `Δ` and
/// `rooms_per_condition` rooms. Labels are (near, far) by construction.
pub fn probe_equidistant(cfg: &DatasetConfig, deltas: &[f64], rooms_per_condition: usize) -> Result<Manifest> {
    cfg.validate()?;
    for &delta in deltas {
        if !(0.0..=1.4 + 1e-12).contains(&delta) {
            return Err(Error::Config(format!("relative distance {delta} outside [0, 1.4]")));
        }
        if cfg.tau - delta / 2.0 < D_MIN - 1e-12 {
            return Err(Error::Config(format!(
                "relative distance {delta} puts the near source closer than {D_MIN} m"
            )));
        }
    }
    let jobs: Vec<(usize, f64)> = deltas
        .iter()
        .enumerate()
        .flat_map(|(c, &d)| (0..rooms_per_condition).map(move |r| (c * rooms_per_condition + r, d)))
        .collect();
    let scenes = par::try_map(&jobs, |_, &(i, delta)| {
        let near = (cfg.tau - delta / 2.0).max(D_MIN);
        let far = cfg.tau + delta / 2.0;
        probe_scene(
            format!("equidistant-{i:05}"),
            stream_rng(cfg.seed, Split::Probe.stream_base() + i as u64),
            [near, far],
            delta,
            cfg,
        )
    })?;
    Ok(probe_manifest(cfg, scenes))
}

/// Far source pinned at 2.9 m, near source at each requested distance in
/// [0.2, 0.8]. Rooms too small for the far source are resampled.
pub fn probe_mic_distance(cfg: &DatasetConfig, near_distances: &[f64], rooms_per_condition: usize) -> Result<Manifest> {
    cfg.validate()?;
    for &d in near_distances {
        if !(0.2..=0.8).contains(&d) {
            return Err(Error::Config(format!("near distance {d} outside [0.2, 0.8]")));
        }
    }
    let jobs: Vec<(usize, f64)> = near_distances
        .iter()
        .enumerate()
        .flat_map(|(c, &d)| (0..rooms_per_condition).map(move |r| (c * rooms_per_condition + r, d)))
        .collect();
    let scenes = par::try_map(&jobs, |_, &(i, d)| {
        probe_scene(
            format!("micdist-{i:05}"),
            stream_rng(cfg.seed, (Split::Probe.stream_base() | 1 << 39) + i as u64),
            [d, PROBE_FAR_DISTANCE],
            d,
            cfg,
        )
    })?;
    Ok(probe_manifest(cfg, scenes))
}
