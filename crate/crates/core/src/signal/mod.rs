//! Time-frequency analysis, mask targets, metrics and audio files.

pub mod masks;
pub mod metrics;
pub mod stft;
pub mod wav;

pub use masks::{
    apply_mask_and_resynthesize, ibm_targets, IbmTargets, LabeledSource, MaskLevel, MaskTensor,
};
pub use metrics::{noise_reduction, si_sdr, si_sdri};
pub use stft::{istft, stft, Spectrogram, Stft, StftConfig};
pub use wav::{read_wav, write_wav, WavFormat};
