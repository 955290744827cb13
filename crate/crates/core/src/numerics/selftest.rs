//! Invariant suite for the numerics kernels on seeded random instances.

use ndarray::{Array, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::*;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfTestReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
    Array::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
}

fn random2(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}

/// Largest observed error for a check that must stay under `tol`.
fn bounded(name: &'static str, worst: f64, tol: f64) -> Check {
    Check {
        name,
        passed: worst.is_finite() && worst <= tol,
        detail: format!("max error {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn flag(name: &'static str, ok: bool, detail: impl Into<String>) -> Check {
    Check {
        name,
        passed: ok,
        detail: detail.into(),
    }
}

fn try_check(name: &'static str, f: impl FnOnce() -> Result<Check, NumericsError>) -> Check {
    f().unwrap_or_else(|e| flag(name, false, format!("error: {e}")))
}

pub fn run(seed: u64) -> SelfTestReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    checks.push(try_check("rope_frequencies", || {
        let th = rope_frequencies(&RopeConfig::new(4, 10000.0))?;
        let err = (th[0] - 0.01).abs().max((th[1] - 1e-4).abs());
        Ok(bounded("rope_frequencies", err, 1e-15))
    }));

    checks.push(try_check("rope_base_rescale", || {
        let b = rescale_rope_base(10000.0, 16, 1)?;
        Ok(flag("rope_base_rescale", b == 40000.0, format!("b' = {b}")))
    }));

    checks.push(try_check("rope_isometry", || {
        let cfg = RopeConfig::new(16, 10000.0);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let t = random2(&mut rng, 4, 16) * 10.0;
            let pos: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..5000.0)).collect();
            let out = apply_rope(t.view(), &pos, &cfg)?;
            for (a, b) in t.rows().into_iter().zip(out.rows()) {
                for k in 0..8 {
                    worst = worst.max((a[2 * k].hypot(a[2 * k + 1]) - b[2 * k].hypot(b[2 * k + 1])).abs());
                }
            }
        }
        Ok(bounded("rope_isometry", worst, 1e-12))
    }));

    checks.push(try_check("rope_compression", || {
        let (d, b) = (64, 10000.0);
        let mut worst: f64 = 0.0;
        let mut grew = false;
        for ratio in [1usize, 4, 16, 64] {
            let b2 = rescale_rope_base(b, ratio * 4096, 4096)?;
            let s = (ratio as f64).sqrt();
            let th = rope_frequencies(&RopeConfig::new(d, b))?;
            let th2 = rope_frequencies(&RopeConfig::new(d, b2))?;
            grew |= th.iter().zip(&th2).any(|(a, c)| c > a);
            for p in [1.0, 17.0, 1023.0] {
                worst = worst.max((th2[d / 2 - 1] * s * p - th[d / 2 - 1] * p).abs());
            }
        }
        Ok(flag("rope_compression", !grew && worst <= 1e-12, format!("max angle error {worst:.3e}")))
    }));

    checks.push(try_check("attention_temperature", || {
        let a = attention_temperature(16, 1)?;
        let b = attention_temperature(7, 7)?;
        Ok(flag("attention_temperature", (a - 4f64.ln()).abs() < 1e-15 && b == 1.0, format!("τ(16) = {a}, τ(1) = {b}")))
    }));

    checks.push(try_check("attention_row_stochastic", || {
        let mut worst: f64 = 0.0;
        for _ in 0..30 {
            let tau = rng.random_range(0.1..10.0);
            let (q, k, v) = (random2(&mut rng, 9, 8), random2(&mut rng, 13, 8) * 4.0, random2(&mut rng, 13, 4));
            let (_, w) = scaled_attention(q.view(), k.view(), v.view(), tau)?;
            for row in w.rows() {
                worst = worst.max((row.sum() - 1.0).abs());
            }
        }
        Ok(bounded("attention_row_stochastic", worst, 1e-9))
    }));

    checks.push(try_check("attention_entropy_shift", || {
        let mut ok = true;
        for _ in 0..30 {
            let (q, k, v) = (random2(&mut rng, 8, 8), random2(&mut rng, 8, 8), random2(&mut rng, 8, 2));
            let t1 = rng.random_range(1.0..3.0);
            let t2 = t1 + rng.random_range(0.1..3.0);
            let (_, w1) = scaled_attention(q.view(), k.view(), v.view(), t1)?;
            let (_, w2) = scaled_attention(q.view(), k.view(), v.view(), t2)?;
            let h1: f64 = attention_entropy(w1.view())?.iter().sum();
            let h2: f64 = attention_entropy(w2.view())?.iter().sum();
            ok &= h2 < h1;
        }
        Ok(flag("attention_entropy_shift", ok, "mean entropy strictly decreases with τ"))
    }));

    checks.push({
        let mut worst: f64 = 0.0;
        for h in 1..=16 {
            for w in 1..=16 {
                let x: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
                let fast = dft2_ortho(&x, h, w);
                for (a, b) in fast.iter().zip(oracle::dft2_brute(&x, h, w)) {
                    worst = worst.max((a - b).norm());
                }
            }
        }
        bounded("dft_oracle", worst, 1e-9)
    });

    checks.push({
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let (h, w) = (rng.random_range(1..33), rng.random_range(1..33));
            let x: Vec<f64> = (0..h * w).map(|_| rng.random_range(-3.0..3.0)).collect();
            let e: f64 = dft2_ortho(&x, h, w).iter().map(|z| z.norm_sqr()).sum();
            worst = worst.max((e - x.iter().map(|v| v * v).sum::<f64>()).abs());
        }
        bounded("parseval", worst, 1e-9)
    });

    checks.push(try_check("focus_schedule", || {
        let cfg = SpectralLossConfig::default();
        let a: Vec<f64> = (0..=200).map(|i| focus_intensity(i as f64 / 200.0, &cfg)).collect::<Result<_, _>>()?;
        let ok = a[0] == cfg.alpha_max && a[200] == cfg.alpha_min && a.windows(2).all(|w| w[1] <= w[0]);
        Ok(flag("focus_schedule", ok, format!("α(0) = {}, α(1) = {}", a[0], a[200])))
    }));

    checks.push(try_check("frequency_weight_bounds", || {
        let mut ok = true;
        for _ in 0..30 {
            let d = random2(&mut rng, 6, 6).mapv(f64::abs) * 5.0;
            let w = frequency_weights(d.view(), rng.random_range(0.0..2.0), 1e-8)?;
            ok &= w.iter().all(|&v| v > 0.0 && v <= 1.0) && w.iter().copied().fold(0.0, f64::max) == 1.0;
        }
        Ok(flag("frequency_weight_bounds", ok, "weights in (0, 1] with max 1"))
    }));

    for (name, policy) in [
        ("gradient_stop_weights", WeightGradient::StopGradient),
        ("gradient_full", WeightGradient::Full),
    ] {
        checks.push(try_check(name, || {
            let cfg = SpectralLossConfig {
                weight_gradient: policy,
                ..Default::default()
            };
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let (yhat, y) = (random(&mut rng, &[8, 8]), random(&mut rng, &[8, 8]));
                let t = rng.random_range(0.0..1.0);
                let (_, g) = frequency_loss(yhat.view(), y.view(), t, &cfg)?;
                let fd = match policy {
                    WeightGradient::Full => oracle::central_difference(&yhat, 1e-6, |x| {
                        frequency_loss(x.view(), y.view(), t, &cfg).map(|r| r.0).unwrap_or(f64::NAN)
                    }),
                    WeightGradient::StopGradient => {
                        let w = loss_weights(yhat.view(), y.view(), t, &cfg)?;
                        oracle::central_difference(&yhat, 1e-6, |x| fixed_weight_loss(x.view(), y.view(), w.view()).unwrap_or(f64::NAN))
                    }
                };
                worst = worst.max(oracle::relative_error(g.as_slice().unwrap_or(&[]), fd.as_slice().unwrap_or(&[])));
            }
            Ok(bounded(name, worst, 1e-5))
        }));
    }

    checks.push(try_check("flow_matching", || {
        let (eps, y) = (random(&mut rng, &[4, 5]), random(&mut rng, &[4, 5]));
        let exact = &eps - &y;
        let off = &exact + 0.5;
        let zero = flow_matching_loss(exact.view(), eps.view(), y.view(), Reduction::Mean)?;
        let quarter = flow_matching_loss(off.view(), eps.view(), y.view(), Reduction::Mean)?;
        let yhat = predicted_target(eps.view(), exact.view())?;
        let rec = yhat.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok(flag(
            "flow_matching",
            zero == 0.0 && (quarter - 0.25).abs() < 1e-14 && rec < 1e-15,
            format!("offset loss {quarter}"),
        ))
    }));

    checks.push(try_check("total_loss", || {
        let (nu, eps, y) = (random(&mut rng, &[3, 6, 6]), random(&mut rng, &[3, 6, 6]), random(&mut rng, &[3, 6, 6]));
        let cfg = SpectralLossConfig::default();
        let parts = total_loss(nu.view(), eps.view(), y.view(), 0.5, &cfg, Reduction::Mean)?;
        let fm = flow_matching_loss(nu.view(), eps.view(), y.view(), Reduction::Mean)?;
        let yhat = &eps - &nu;
        let (fl, _) = frequency_loss(yhat.view(), y.view(), 0.5, &cfg)?;
        Ok(flag("total_loss", parts.total == fm + cfg.lambda * fl, format!("{parts:?}")))
    }));

    SelfTestReport { seed, checks }
}
