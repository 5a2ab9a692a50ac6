use ndarray::Axis;

use crate::diffkit::Tensor;
use crate::signal::Spectrogram;

/// `log(1 + |X|)`, normalized to zero mean and unit variance over the utterance.
pub fn log_magnitude_features(spec: &Spectrogram) -> Tensor {
    let mut x = spec.data.mapv(|c| c.norm().ln_1p());
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    x.mapv_inplace(|v| (v - mean) / std);
    x
}

/// Concatenates each frame with `radius` neighbours on both sides,
/// zero-padded at the edges: `T x F -> T x (2 radius + 1) F`.
pub fn stack_context(features: &Tensor, radius: usize) -> Tensor {
    let (t, f) = features.dim();
    let width = 2 * radius + 1;
    let mut out = Tensor::zeros((t, width * f));
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        for j in 0..width {
            let src = i as isize + j as isize - radius as isize;
            if src >= 0 && (src as usize) < t {
                row.slice_mut(ndarray::s![j * f..(j + 1) * f])
                    .assign(&features.row(src as usize));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn context_stacking_pads_with_zeros() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let s = stack_context(&x, 1);
        assert_eq!(s.row(0).to_vec(), vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.row(2).to_vec(), vec![3.0, 4.0, 5.0, 6.0, 0.0, 0.0]);
    }
}
