//! Scale-invariant SDR and the silent-source noise-reduction measure.

use crate::error::{Error, Result};

/// Floor on energies in dB ratios.
pub const ENERGY_FLOOR: f64 = 1e-12;

/// Reported SI-SDR when the estimate has no component along the reference;
/// mirrors the 120 dB cap of a perfect estimate.
pub const SI_SDR_FLOOR_DB: f64 = -120.0;

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `10 log10(|αs|² / |αs - ŝ|²)` with `α = <ŝ, s>/|s|²`.
///
/// The residual energy is floored at `ENERGY_FLOOR * |αs|²`, which caps a
/// perfect estimate at 120 dB without breaking scale invariance.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::shape(
            "si_sdr",
            format!("estimate {} vs reference {} samples", estimate.len(), reference.len()),
        ));
    }
    let ref_energy = energy(reference);
    if ref_energy <= 0.0 {
        return Err(Error::SilentReference);
    }
    let alpha = estimate.iter().zip(reference).map(|(e, s)| e * s).sum::<f64>() / ref_energy;
    let target = alpha * alpha * ref_energy;
    if target <= 0.0 {
        // Estimate orthogonal to (or absent from) the reference.
        return Ok(SI_SDR_FLOOR_DB);
    }
    let residual: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, s)| {
            let r = alpha * s - e;
            r * r
        })
        .sum();
    Ok(10.0 * (target / residual.max(ENERGY_FLOOR * target)).log10())
}

/// SI-SDR of the estimate minus SI-SDR of the unprocessed mixture.
pub fn si_sdri(estimate: &[f64], reference: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(si_sdr(estimate, reference)? - si_sdr(mixture, reference)?)
}

/// Energy ratio in dB between the mixture and the estimate of a silent source.
pub fn noise_reduction(mixture: &[f64], silent_estimate: &[f64]) -> f64 {
    10.0 * (energy(mixture) / energy(silent_estimate).max(ENERGY_FLOOR)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_estimate_is_capped_high() {
        let s = [0.3, -0.2, 0.9, 0.1];
        assert!(si_sdr(&s, &s).unwrap() >= 100.0);
    }

    #[test]
    fn zero_estimate_hits_the_floor() {
        let s = [0.3, -0.2, 0.9, 0.1];
        assert_eq!(si_sdr(&[0.0; 4], &s).unwrap(), SI_SDR_FLOOR_DB);
        assert_eq!(si_sdr(&[0.2, 0.3, 0.0, 0.0], &s).unwrap(), SI_SDR_FLOOR_DB);
        assert!(matches!(si_sdr(&s, &[0.0; 4]), Err(Error::SilentReference)));
    }

    #[test]
    fn hand_computed_zero_db() {
        assert_abs_diff_eq!(si_sdr(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn scale_invariance() {
        let s = [0.3, -0.2, 0.9, 0.1, -0.5];
        let e = [0.25, -0.1, 0.7, 0.3, -0.6];
        let base = si_sdr(&e, &s).unwrap();
        for beta in [1e-3, 0.5, 2.0, 1e3] {
            let scaled: Vec<f64> = e.iter().map(|v| beta * v).collect();
            assert_abs_diff_eq!(si_sdr(&scaled, &s).unwrap(), base, epsilon = 1e-9);
        }
    }

    #[test]
    fn mixture_improvement_over_itself_is_zero() {
        let s = [0.3, -0.2, 0.9];
        let x = [0.5, 0.1, 0.7];
        assert_eq!(si_sdri(&x, &s, &x).unwrap(), 0.0);
    }

    #[test]
    fn silent_reference_is_rejected() {
        assert!(matches!(si_sdr(&[1.0, 0.0], &[0.0, 0.0]), Err(Error::SilentReference)));
    }

    #[test]
    fn noise_reduction_examples() {
        let x = [0.5, -0.5, 0.25];
        let e: f64 = x.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(noise_reduction(&x, &[0.0; 3]), 10.0 * (e / 1e-12).log10(), epsilon = 1e-9);
        assert_abs_diff_eq!(noise_reduction(&x, &x), 0.0, epsilon = 1e-12);
        let tenth: Vec<f64> = x.iter().map(|v| v / 10.0).collect();
        assert_abs_diff_eq!(noise_reduction(&x, &tenth), 20.0, epsilon = 1e-9);
    }
}
