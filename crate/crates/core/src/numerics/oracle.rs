//! Slow reference implementations used to cross-check the fast kernels.

use ndarray::ArrayD;
use rustfft::num_complex::Complex64;

/// Orthonormal 2D DFT by direct summation, `O((hw)²)`.
pub fn dft2_brute(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![Complex64::default(); h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::default();
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    acc += Complex64::from_polar(plane[y * w + x], phase);
                }
            }
            out[u * w + v] = acc * norm;
        }
    }
    out
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference(x: &ArrayD<f64>, step: f64, f: impl Fn(&ArrayD<f64>) -> f64) -> ArrayD<f64> {
    let mut probe = x.clone();
    let mut grad = ArrayD::zeros(x.raw_dim());
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = x.as_slice().expect("standard layout")[i];
        probe.as_slice_mut().expect("standard layout")[i] = orig + step;
        let up = f(&probe);
        probe.as_slice_mut().expect("standard layout")[i] = orig - step;
        let down = f(&probe);
        probe.as_slice_mut().expect("standard layout")[i] = orig;
        *g = (up - down) / (2.0 * step);
    }
    grad
}

/// `‖a − b‖ / max(‖b‖, tiny)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(f64::MIN_POSITIVE)
}
