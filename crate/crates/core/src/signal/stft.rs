use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analysis/synthesis settings: square-root Hann window, 50% overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
}

impl StftConfig {
    /// 32 ms window (rounded to an even length) with half-window hop.
    pub fn for_rate(sample_rate: u32) -> Result<Self> {
        let mut window = (0.032 * sample_rate as f64).round() as usize;
        window += window % 2;
        let cfg = Self {
            sample_rate,
            window,
            hop: window / 2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.window < 4 || !self.window.is_multiple_of(2) || self.hop != self.window / 2
        {
            return Err(Error::Config(format!(
                "STFT needs an even window >= 4 with 50% hop, got window {} hop {}",
                self.window, self.hop
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }

    /// Frame count for a signal of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        (len + self.window - self.hop).div_ceil(self.hop)
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::for_rate(16_000).expect("valid default")
    }
}

/// Complex `T x F` spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array2<Complex64>,
    pub config: StftConfig,
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn bins(&self) -> usize {
        self.data.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.data.mapv(|c| c.norm())
    }
}

/// Periodic square-root Hann window; its square sums to one at 50% overlap.
pub fn sqrt_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
            w.sqrt()
        })
        .collect()
}

/// Reusable STFT engine with planned FFTs.
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            config,
            window: sqrt_hann(config.window),
            forward: planner.plan_fft_forward(config.window),
            inverse: planner.plan_fft_inverse(config.window),
        })
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    /// Signal is padded with `window - hop` zeros in front so that every
    /// sample is covered by the full set of overlapping frames.
    pub fn analyze(&self, x: &[f64]) -> Result<Spectrogram> {
        let StftConfig { window, hop, .. } = self.config;
        if x.len() < window {
            return Err(Error::TooShort {
                len: x.len(),
                window,
            });
        }
        let pad = window - hop;
        let frames = self.config.frames(x.len());
        let bins = self.config.bins();
        let mut data = Array2::zeros((frames, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); window];
        for t in 0..frames {
            let start = t * hop;
            for (n, b) in buf.iter_mut().enumerate() {
                let idx = (start + n).checked_sub(pad);
                let s = idx.and_then(|i| x.get(i)).copied().unwrap_or(0.0);
                *b = Complex64::new(s * self.window[n], 0.0);
            }
            self.forward.process(&mut buf);
            for f in 0..bins {
                data[[t, f]] = buf[f];
            }
        }
        Ok(Spectrogram {
            data,
            config: self.config,
            signal_len: x.len(),
        })
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`].
    pub fn synthesize(&self, spec: &Spectrogram) -> Result<Vec<f64>> {
        let StftConfig { window, hop, .. } = self.config;
        if spec.config != self.config || spec.bins() != self.config.bins() {
            return Err(Error::shape("istft", "spectrogram was made with another config"));
        }
        let pad = window - hop;
        let frames = spec.frames();
        let total = (frames - 1) * hop + window;
        let mut out = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); window];
        let half = window / 2;
        for t in 0..frames {
            for k in 0..=half {
                buf[k] = spec.data[[t, k]];
            }
            for k in 1..half {
                buf[window - k] = spec.data[[t, k]].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * hop;
            for n in 0..window {
                let w = self.window[n];
                out[start + n] += buf[n].re / window as f64 * w;
                norm[start + n] += w * w;
            }
        }
        Ok((0..spec.signal_len)
            .map(|i| {
                let j = i + pad;
                if norm[j] > 1e-12 {
                    out[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect())
    }
}

pub fn stft(x: &[f64], config: StftConfig) -> Result<Spectrogram> {
    Stft::new(config)?.analyze(x)
}

pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    Stft::new(spec.config)?.synthesize(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_rms(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn default_config_is_32ms_at_16k() {
        let c = StftConfig::default();
        assert_eq!((c.window, c.hop, c.bins()), (512, 256, 257));
        assert_eq!(StftConfig::for_rate(8000).unwrap().window, 256);
    }

    #[test]
    fn window_squares_sum_to_one() {
        let w = sqrt_hann(512);
        for n in 0..256 {
            assert!((w[n] * w[n] + w[n + 256] * w[n + 256] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_round_trip() {
        let x = vec![0.0; 2000];
        let s = stft(&x, StftConfig::default()).unwrap();
        assert!(s.data.iter().all(|c| c.norm() == 0.0));
        assert_eq!(istft(&s).unwrap(), x);
    }

    #[test]
    fn impulse_round_trip() {
        let mut x = vec![0.0; 4000];
        x[1234] = 1.0;
        let y = istft(&stft(&x, StftConfig::default()).unwrap()).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(rel_rms(&y, &x) <= 1e-8);
    }

    #[test]
    fn tone_peaks_at_expected_bin() {
        let fs = 16_000.0;
        let x: Vec<f64> = (0..16_000)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / fs).sin())
            .collect();
        let s = stft(&x, StftConfig::default()).unwrap();
        let mag = s.magnitude();
        let mid = mag.row(s.frames() / 2);
        let peak = (0..mid.len()).max_by(|&a, &b| mid[a].total_cmp(&mid[b])).unwrap();
        assert_eq!(peak, (1000.0f64 / (16000.0 / 512.0)).round() as usize);
    }

    #[test]
    fn too_short_input_is_rejected() {
        assert!(matches!(
            stft(&[0.0; 100], StftConfig::default()),
            Err(Error::TooShort { len: 100, window: 512 })
        ));
    }
}
