use ndarray::{Array2, ArrayD, ArrayView2, ArrayViewD, IxDyn};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::flow_matching::{flow_matching_loss, predicted_target, Reduction};
use super::{all_finite, same_shape, NumericsError};

/// How the loss gradient treats the frequency weights, which themselves
/// depend on the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightGradient {
    /// Weights are constants; the chain rule runs through the spectrum only.
    #[default]
    StopGradient,
    /// Differentiate through the weights as well, including the max
    /// normalizer (subgradient at ties: the first maximal bin).
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralLossConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub eps_w: f64,
    pub weight_gradient: WeightGradient,
}

impl Default for SpectralLossConfig {
    fn default() -> Self {
        Self {
            alpha_min: 0.2,
            alpha_max: 1.2,
            gamma: 2.0,
            lambda: 1.0,
            eps_w: 1e-8,
            weight_gradient: WeightGradient::StopGradient,
        }
    }
}

impl SpectralLossConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        let ok = 0.0 <= self.alpha_min
            && self.alpha_min <= self.alpha_max
            && self.alpha_max.is_finite()
            && self.gamma > 0.0
            && self.gamma.is_finite()
            && self.lambda >= 0.0
            && self.lambda.is_finite()
            && self.eps_w > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NumericsError::Domain(format!("spectral loss config {self:?}")))
        }
    }
}

fn fft2(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in data.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut buf = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            buf[y] = data[y * w + x];
        }
        col.process(&mut buf);
        for y in 0..h {
            data[y * w + x] = buf[y];
        }
    }
    let norm = 1.0 / ((h * w) as f64).sqrt();
    data.iter_mut().for_each(|z| *z *= norm);
}

/// Orthonormal 2D DFT of a row-major `h × w` real plane.
pub fn dft2_ortho(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    assert_eq!(plane.len(), h * w, "plane size");
    let mut data: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut data, h, w, false);
    data
}

/// Inverse of [`dft2_ortho`] (the adjoint, since the transform is unitary).
pub fn idft2_ortho(spectrum: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    assert_eq!(spectrum.len(), h * w, "spectrum size");
    let mut data = spectrum.to_vec();
    fft2(&mut data, h, w, true);
    data
}

/// Row-major `(channels, h, w)` view of the difference of two tensors whose
/// last two axes are spatial.
fn difference_planes(a: &ArrayViewD<f64>, b: &ArrayViewD<f64>) -> Result<(Vec<f64>, usize, usize, usize), NumericsError> {
    same_shape(a.shape(), b.shape())?;
    let shape = a.shape();
    if shape.len() < 2 {
        return Err(NumericsError::Domain(format!("need at least 2 axes, got {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h == 0 || w == 0 {
        return Err(NumericsError::Empty);
    }
    all_finite(a.iter().chain(b.iter()))?;
    let diff: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    let c = diff.len() / (h * w);
    Ok((diff, c, h, w))
}

struct Spectra {
    per_channel: Vec<Vec<Complex64>>,
    delta: Array2<f64>,
}

fn spectra(yhat: &ArrayViewD<f64>, y: &ArrayViewD<f64>) -> Result<(Spectra, usize, usize, usize), NumericsError> {
    let (diff, c, h, w) = difference_planes(yhat, y)?;
    let per_channel: Vec<Vec<Complex64>> = diff.chunks_exact(h * w).map(|p| dft2_ortho(p, h, w)).collect();
    let mut delta = Array2::zeros((h, w));
    for s in &per_channel {
        for (d, z) in delta.iter_mut().zip(s) {
            *d += z.norm();
        }
    }
    delta.mapv_inplace(|v| v / c as f64);
    Ok((Spectra { per_channel, delta }, c, h, w))
}

/// `|DFT(ŷ) − DFT(y)|` under the orthonormal transform, averaged over
/// channels into a single `H × W` map.
pub fn spectral_discrepancy(yhat: ArrayViewD<f64>, y: ArrayViewD<f64>) -> Result<Array2<f64>, NumericsError> {
    Ok(spectra(&yhat, &y)?.0.delta)
}

/// `α_min + (α_max − α_min)(1 − t)^γ`.
pub fn focus_intensity(t: f64, cfg: &SpectralLossConfig) -> Result<f64, NumericsError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(NumericsError::Domain(format!("t = {t} outside [0, 1]")));
    }
    cfg.validate()?;
    Ok(cfg.alpha_min + (cfg.alpha_max - cfg.alpha_min) * (1.0 - t).powf(cfg.gamma))
}

/// `(ΔF + ε)^α / max(ΔF + ε)^α`, so the largest discrepancy gets weight 1.
pub fn frequency_weights(delta: ArrayView2<f64>, alpha: f64, eps_w: f64) -> Result<Array2<f64>, NumericsError> {
    if delta.is_empty() {
        return Err(NumericsError::Empty);
    }
    all_finite(delta.iter())?;
    if delta.iter().any(|&v| v < 0.0) || !(eps_w > 0.0) || !alpha.is_finite() {
        return Err(NumericsError::Domain("weights need ΔF ≥ 0 and ε > 0".into()));
    }
    let powered = delta.mapv(|v| (v + eps_w).powf(alpha));
    let max = powered.iter().copied().fold(f64::MIN, f64::max);
    Ok(powered.mapv(|p| p / max))
}

/// `mean(W ⊙ ΔF(ŷ, y))` for externally fixed weights. Its derivative is what
/// the stop-gradient policy returns, evaluated where `W` was computed.
pub fn fixed_weight_loss(yhat: ArrayViewD<f64>, y: ArrayViewD<f64>, weights: ArrayView2<f64>) -> Result<f64, NumericsError> {
    let delta = spectral_discrepancy(yhat, y)?;
    same_shape(delta.shape(), weights.shape())?;
    Ok((&weights * &delta).sum() / delta.len() as f64)
}

/// Weights `frequency_loss` would use for this pair at time `t`.
pub fn loss_weights(yhat: ArrayViewD<f64>, y: ArrayViewD<f64>, t: f64, cfg: &SpectralLossConfig) -> Result<Array2<f64>, NumericsError> {
    let alpha = focus_intensity(t, cfg)?;
    frequency_weights(spectral_discrepancy(yhat, y)?.view(), alpha, cfg.eps_w)
}

/// Frequency-focused loss `mean(W ⊙ ΔF)` and its gradient with respect to ŷ.
pub fn frequency_loss(
    yhat: ArrayViewD<f64>,
    y: ArrayViewD<f64>,
    t: f64,
    cfg: &SpectralLossConfig,
) -> Result<(f64, ArrayD<f64>), NumericsError> {
    let alpha = focus_intensity(t, cfg)?;
    let (Spectra { per_channel, delta }, c, h, w) = spectra(&yhat, &y)?;
    let weights = frequency_weights(delta.view(), alpha, cfg.eps_w)?;
    let n = (h * w) as f64;
    let loss = (&weights * &delta).sum() / n;

    // dL/dΔF
    let mut g = weights.mapv(|v| v / n);
    if cfg.weight_gradient == WeightGradient::Full {
        let powered = delta.mapv(|v| (v + cfg.eps_w).powf(alpha));
        let (arg, max) = powered
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        let dpow = delta.mapv(|v| alpha * (v + cfg.eps_w).powf(alpha - 1.0));
        let weighted_sum = (&weights * &delta).sum();
        for ((gi, &d), &dp) in g.iter_mut().zip(delta.iter()).zip(dpow.iter()) {
            *gi += d * dp / max / n;
        }
        let dp_arg = dpow.iter().nth(arg).copied().unwrap_or(0.0);
        if let Some(ga) = g.iter_mut().nth(arg) {
            *ga -= dp_arg / max * weighted_sum / n;
        }
    }

    let mut grad = Vec::with_capacity(c * h * w);
    for s in &per_channel {
        let scaled: Vec<Complex64> = s
            .iter()
            .zip(g.iter())
            .map(|(z, &gi)| {
                let m = z.norm();
                if m == 0.0 {
                    Complex64::default()
                } else {
                    z * (gi / (c as f64 * m))
                }
            })
            .collect();
        grad.extend(idft2_ortho(&scaled, h, w).into_iter().map(|z| z.re));
    }
    let grad = ArrayD::from_shape_vec(IxDyn(yhat.shape()), grad).expect("shape preserved");
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub flow_matching: f64,
    pub frequency: f64,
    pub total: f64,
}

/// `L_FM + λ·L_freq` with `ŷ = ε − ν`.
pub fn total_loss(
    nu: ArrayViewD<f64>,
    eps: ArrayViewD<f64>,
    y: ArrayViewD<f64>,
    t: f64,
    cfg: &SpectralLossConfig,
    reduction: Reduction,
) -> Result<LossParts, NumericsError> {
    let flow_matching = flow_matching_loss(nu.view(), eps.view(), y.view(), reduction)?;
    let yhat = predicted_target(eps, nu)?;
    let (frequency, _) = frequency_loss(yhat.view(), y, t, cfg)?;
    Ok(LossParts {
        flow_matching,
        frequency,
        total: flow_matching + cfg.lambda * frequency,
    })
}

#[cfg(test)]
mod tests {
    use super::super::oracle;
    use super::*;
    use ndarray::Array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        Array::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matches_brute_force_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for h in 1..=16 {
            for w in [1, 3, 7, 8, 13, 16] {
                let x: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
                let fast = dft2_ortho(&x, h, w);
                let slow = oracle::dft2_brute(&x, h, w);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).norm() < 1e-9, "{h}x{w}");
                }
                let energy: f64 = fast.iter().map(|z| z.norm_sqr()).sum();
                let x2: f64 = x.iter().map(|v| v * v).sum();
                assert!((energy - x2).abs() < 1e-9);
                let back = idft2_ortho(&fast, h, w);
                assert!(back.iter().zip(&x).all(|(z, v)| (z.re - v).abs() < 1e-12 && z.im.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn discrepancy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = random(&mut rng, &[6, 10]);
        assert!(spectral_discrepancy(y.view(), y.view()).unwrap().iter().all(|&v| v == 0.0));

        let shifted = &y + 0.7;
        let d = spectral_discrepancy(shifted.view(), y.view()).unwrap();
        assert!((d[[0, 0]] - 0.7 * 60f64.sqrt()).abs() < 1e-12);
        assert!(d.iter().skip(1).all(|&v| v < 1e-12));

        let cosine = Array::from_shape_fn(IxDyn(&[8, 8]), |i| (2.0 * std::f64::consts::PI * (2 * i[0] + 3 * i[1]) as f64 / 8.0).cos());
        let zero = Array::zeros(IxDyn(&[8, 8]));
        let d = spectral_discrepancy(cosine.view(), zero.view()).unwrap();
        let nonzero: Vec<(usize, usize)> = d.indexed_iter().filter(|(_, &v)| v > 1e-9).map(|(i, _)| i).collect();
        assert_eq!(nonzero, vec![(2, 3), (6, 5)]);
        assert!((d[[2, 3]] - d[[6, 5]]).abs() < 1e-12);
    }

    #[test]
    fn channels_are_averaged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random(&mut rng, &[3, 5, 4]), random(&mut rng, &[3, 5, 4]));
        let all = spectral_discrepancy(a.view(), b.view()).unwrap();
        let mut mean = Array2::zeros((5, 4));
        for c in 0..3 {
            let ac = a.index_axis(ndarray::Axis(0), c).to_owned();
            let bc = b.index_axis(ndarray::Axis(0), c).to_owned();
            mean += &spectral_discrepancy(ac.view(), bc.view()).unwrap();
        }
        mean /= 3.0;
        assert!(all.iter().zip(mean.iter()).all(|(x, y)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn focus_schedule() {
        let cfg = SpectralLossConfig::default();
        assert_eq!(focus_intensity(1.0, &cfg).unwrap(), 0.2);
        assert_eq!(focus_intensity(0.0, &cfg).unwrap(), 1.2);
        assert!((focus_intensity(0.5, &cfg).unwrap() - 0.45).abs() < 1e-15);
        assert!(focus_intensity(-0.1, &cfg).is_err());
        assert!(focus_intensity(1.1, &cfg).is_err());
        let ts: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let a: Vec<f64> = ts.iter().map(|&t| focus_intensity(t, &cfg).unwrap()).collect();
        assert!(a.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn weights_examples() {
        let d = ndarray::array![[0.1, 3.0], [0.0, 1.0]];
        let w = frequency_weights(d.view(), 0.7, 1e-8).unwrap();
        assert_eq!(w[[0, 1]], 1.0);
        assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!(frequency_weights(Array2::from_elem((3, 3), 0.4).view(), 1.2, 1e-8).unwrap().iter().all(|&v| v == 1.0));
        assert!(frequency_weights(d.view(), 0.0, 1e-8).unwrap().iter().all(|&v| v == 1.0));
        assert_eq!(frequency_weights(Array2::zeros((0, 3)).view(), 1.0, 1e-8), Err(NumericsError::Empty));
    }

    #[test]
    fn loss_examples() {
        let cfg = SpectralLossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = random(&mut rng, &[8, 8]);
        let (l, g) = frequency_loss(y.view(), y.view(), 0.3, &cfg).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));

        // a spectrum that is flat in modulus: a unit impulse scaled so every bin is c
        let c = 0.25;
        let mut imp = Array::zeros(IxDyn(&[4, 4]));
        imp[[1, 2]] = c * 4.0;
        let zero = Array::zeros(IxDyn(&[4, 4]));
        let (l, _) = frequency_loss(imp.view(), zero.view(), 0.6, &cfg).unwrap();
        assert!((l - c).abs() < 1e-12);

        let mut bad = y.clone();
        bad[[0, 0]] = f64::NAN;
        assert_eq!(frequency_loss(bad.view(), y.view(), 0.5, &cfg).unwrap_err(), NumericsError::NonFinite);
    }

    fn check_gradient(seed: u64, shape: &[usize], policy: WeightGradient) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (yhat, y) = (random(&mut rng, shape), random(&mut rng, shape));
        let t = rng.random_range(0.0..1.0);
        let cfg = SpectralLossConfig {
            weight_gradient: policy,
            ..Default::default()
        };
        let (_, g) = frequency_loss(yhat.view(), y.view(), t, &cfg).unwrap();
        let fd = match policy {
            WeightGradient::Full => oracle::central_difference(&yhat, 1e-6, |x| frequency_loss(x.view(), y.view(), t, &cfg).unwrap().0),
            WeightGradient::StopGradient => {
                let w = loss_weights(yhat.view(), y.view(), t, &cfg).unwrap();
                oracle::central_difference(&yhat, 1e-6, |x| fixed_weight_loss(x.view(), y.view(), w.view()).unwrap())
            }
        };
        oracle::relative_error(g.as_slice().unwrap(), fd.as_slice().unwrap())
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let e = check_gradient(seed, &[8, 8], WeightGradient::StopGradient);
            assert!(e <= 1e-5, "seed {seed}: {e}");
        }
        for seed in 0..5 {
            let e = check_gradient(100 + seed, &[2, 5, 6], WeightGradient::StopGradient);
            assert!(e <= 1e-5, "multi-channel seed {seed}: {e}");
        }
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let e = check_gradient(200 + seed, &[8, 8], WeightGradient::Full);
            assert!(e <= 1e-5, "seed {seed}: {e}");
        }
    }

    #[test]
    fn total_loss_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (nu, eps, y) = (random(&mut rng, &[6, 6]), random(&mut rng, &[6, 6]), random(&mut rng, &[6, 6]));
        let zero = SpectralLossConfig {
            lambda: 0.0,
            ..Default::default()
        };
        let fm = flow_matching_loss(nu.view(), eps.view(), y.view(), Reduction::Mean).unwrap();
        assert_eq!(total_loss(nu.view(), eps.view(), y.view(), 0.4, &zero, Reduction::Mean).unwrap().total, fm);

        let cfg = SpectralLossConfig::default();
        let yhat = &eps - &nu;
        let (fl, _) = frequency_loss(yhat.view(), y.view(), 0.4, &cfg).unwrap();
        let parts = total_loss(nu.view(), eps.view(), y.view(), 0.4, &cfg, Reduction::Mean).unwrap();
        assert_eq!(parts.total, fm + fl);

        let exact = &eps - &y;
        assert_eq!(total_loss(exact.view(), eps.view(), y.view(), 0.4, &cfg, Reduction::Mean).unwrap().total, 0.0);
    }

    proptest! {
        #[test]
        fn weights_are_bounded(vals in proptest::collection::vec(0.0f64..100.0, 1..40), alpha in 0.0f64..3.0) {
            let d = Array2::from_shape_vec((1, vals.len()), vals).unwrap();
            let w = frequency_weights(d.view(), alpha, 1e-8).unwrap();
            prop_assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
            prop_assert_eq!(w.iter().copied().fold(0.0, f64::max), 1.0);
        }

        #[test]
        fn schedule_monotone(t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0, gamma in 0.1f64..5.0, lo in 0.0f64..1.0, span in 0.0f64..2.0) {
            let cfg = SpectralLossConfig { alpha_min: lo, alpha_max: lo + span, gamma, ..Default::default() };
            let (a, b) = (t1.min(t2), t1.max(t2));
            prop_assert!(focus_intensity(b, &cfg).unwrap() <= focus_intensity(a, &cfg).unwrap());
        }
    }
}
