//! Ideal binary mask targets and mask-based resynthesis.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::head::{HierarchySpec, FAR, NEAR};

use super::stft::{Spectrogram, Stft};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskLevel {
    Parent,
    NearChild,
    FarChild,
    LeafJoint,
}

/// Real-valued masks with rows indexed by `t * bins + f`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTensor {
    pub frames: usize,
    pub bins: usize,
    pub level: MaskLevel,
    pub data: Array2<f64>,
}

impl MaskTensor {
    pub fn classes(&self) -> usize {
        self.data.ncols()
    }

    /// `T x F` slice for class `k`.
    pub fn class_slice(&self, k: usize) -> Array2<f64> {
        let col: Vec<f64> = self.data.column(k).to_vec();
        Array2::from_shape_vec((self.frames, self.bins), col).expect("row-major layout")
    }

    /// Class index of the one-hot row, `None` for all-zero rows.
    pub fn argmax_row(&self, row: usize) -> Option<usize> {
        let r = self.data.row(row);
        let (k, v) = r
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
        (v > 0.0).then_some(k)
    }
}

/// A source with its distance to the microphone.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSource<'a> {
    pub spectrogram: &'a Spectrogram,
    pub distance: f64,
}

/// One-hot targets at both levels. A silent parent has no child targets.
#[derive(Debug, Clone)]
pub struct IbmTargets {
    pub parent: MaskTensor,
    pub near: Option<MaskTensor>,
    pub far: Option<MaskTensor>,
    /// Input index of the source filling each leaf slot (near slots first).
    pub slot_sources: Vec<Option<usize>>,
}

impl IbmTargets {
    pub fn child(&self, parent: usize) -> Option<&MaskTensor> {
        if parent == NEAR {
            self.near.as_ref()
        } else {
            self.far.as_ref()
        }
    }
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, v) in values.enumerate() {
        if v > best_v {
            best = k;
            best_v = v;
        }
    }
    best
}

/// Dominance targets. Sources are assigned to near (`d < tau`) or far and
/// fill that parent's slots in input order. Ties go to the lower index.
pub fn ibm_targets(
    sources: &[LabeledSource<'_>],
    hierarchy: &HierarchySpec,
    tau: f64,
) -> Result<IbmTargets> {
    let labels: Vec<usize> = sources
        .iter()
        .map(|s| if s.distance < tau { NEAR } else { FAR })
        .collect();
    ibm_targets_labeled(sources, &labels, hierarchy)
}

/// As [`ibm_targets`] with explicit parent labels.
pub fn ibm_targets_labeled(
    sources: &[LabeledSource<'_>],
    labels: &[usize],
    hierarchy: &HierarchySpec,
) -> Result<IbmTargets> {
    let first = sources.first().ok_or(Error::EmptyScene)?.spectrogram;
    let (frames, bins) = first.data.dim();
    if sources.iter().any(|s| s.spectrogram.data.dim() != (frames, bins)) {
        return Err(Error::shape("ibm_targets", "source spectrograms differ in shape"));
    }
    let mut groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    for side in [NEAR, FAR] {
        if groups[side].len() > hierarchy.children[side] {
            return Err(Error::Config(format!(
                "{} sources on parent {side} exceed its {} slots",
                groups[side].len(),
                hierarchy.children[side]
            )));
        }
    }
    let n = frames * bins;
    let mut parent = Array2::zeros((n, 2));
    let mut child: [Option<Array2<f64>>; 2] = [None, None];
    for side in [NEAR, FAR] {
        if !groups[side].is_empty() {
            child[side] = Some(Array2::zeros((n, hierarchy.children[side])));
        }
    }
    for t in 0..frames {
        for f in 0..bins {
            let row = t * bins + f;
            let group_mag = |side: usize| {
                groups[side]
                    .iter()
                    .map(|&i| sources[i].spectrogram.data[[t, f]])
                    .sum::<rustfft::num_complex::Complex64>()
                    .norm()
            };
            let p = argmax_first([group_mag(NEAR), group_mag(FAR)].into_iter());
            parent[[row, p]] = 1.0;
            for side in [NEAR, FAR] {
                if let Some(m) = child[side].as_mut() {
                    let k = argmax_first(
                        groups[side]
                            .iter()
                            .map(|&i| sources[i].spectrogram.data[[t, f]].norm()),
                    );
                    m[[row, k]] = 1.0;
                }
            }
        }
    }
    let mut slot_sources = vec![None; hierarchy.leaves()];
    for side in [NEAR, FAR] {
        for (j, &i) in groups[side].iter().enumerate() {
            slot_sources[hierarchy.leaf_range(side).start + j] = Some(i);
        }
    }
    let wrap = |data, level| MaskTensor {
        frames,
        bins,
        level,
        data,
    };
    let [near, far] = child;
    Ok(IbmTargets {
        parent: wrap(parent, MaskLevel::Parent),
        near: near.map(|d| wrap(d, MaskLevel::NearChild)),
        far: far.map(|d| wrap(d, MaskLevel::FarChild)),
        slot_sources,
    })
}

/// `istft(X ⊙ mask)` with the mixture phase.
pub fn apply_mask_and_resynthesize(
    engine: &Stft,
    mixture: &Spectrogram,
    mask: &Array2<f64>,
) -> Result<Vec<f64>> {
    if mask.dim() != mixture.data.dim() {
        return Err(Error::shape(
            "apply_mask",
            format!("mask {:?} vs spectrogram {:?}", mask.dim(), mixture.data.dim()),
        ));
    }
    let mut masked = mixture.clone();
    masked
        .data
        .zip_mut_with(mask, |c, &m| *c *= m);
    engine.synthesize(&masked)
}

/// Checks that every row of `data` sums to one within each column group.
pub fn check_groups_normalized(
    data: &Array2<f64>,
    groups: &[std::ops::Range<usize>],
    what: &str,
    tol: f64,
) -> Result<()> {
    for (row, r) in data.rows().into_iter().enumerate() {
        for g in groups {
            let s: f64 = r.slice(ndarray::s![g.clone()]).sum();
            if !((s - 1.0).abs() <= tol) {
                return Err(Error::Invariant(format!(
                    "{what} row {row} columns {g:?} sum to {s}"
                )));
            }
        }
    }
    Ok(())
}

/// Every row of a parent, child or joint-leaf mask sums to one.
pub fn check_normalized(mask: &MaskTensor, tol: f64) -> Result<()> {
    check_groups_normalized(
        &mask.data,
        &[0..mask.classes()],
        &format!("{:?} mask", mask.level),
        tol,
    )
}
