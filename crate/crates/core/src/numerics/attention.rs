use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{all_finite, NumericsError};
use crate::par::{self, Execution};

/// Logarithm used for the temperature. Natural by default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
    Ten,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
            LogBase::Ten => x.log10(),
        }
    }
}

/// `max(1, ln sqrt(n_uhr / n_nhr))`.
pub fn attention_temperature(n_uhr: usize, n_nhr: usize) -> Result<f64, NumericsError> {
    attention_temperature_with(n_uhr, n_nhr, LogBase::Natural)
}

pub fn attention_temperature_with(n_uhr: usize, n_nhr: usize, base: LogBase) -> Result<f64, NumericsError> {
    if n_nhr == 0 || n_uhr < n_nhr {
        return Err(NumericsError::Domain(format!("token counts {n_uhr} / {n_nhr}")));
    }
    Ok(base.log((n_uhr as f64 / n_nhr as f64).sqrt()).max(1.0))
}

/// Softmax attention with logits `τ · q·k / sqrt(d)`. Returns the output and
/// the row-stochastic weights.
pub fn scaled_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    tau: f64,
) -> Result<(Array2<f64>, Array2<f64>), NumericsError> {
    scaled_attention_with(q, k, v, tau, Execution::default())
}

pub fn scaled_attention_with(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    tau: f64,
    mode: Execution,
) -> Result<(Array2<f64>, Array2<f64>), NumericsError> {
    let (n, d) = q.dim();
    let (m, dk) = k.dim();
    let (mv, dv) = v.dim();
    if dk != d || mv != m {
        return Err(NumericsError::Shape(vec![n, d, m, dk], vec![mv, dv]));
    }
    if n == 0 || m == 0 || d == 0 {
        return Err(NumericsError::Empty);
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(NumericsError::Domain(format!("temperature {tau}")));
    }
    all_finite(q.iter().chain(k.iter()).chain(v.iter()))?;

    let scale = (d as f64).sqrt();
    let rows = par::map_range(mode, n, |i| {
        let qi = q.row(i);
        let mut w: Vec<f64> = k.rows().into_iter().map(|kj| qi.dot(&kj) / scale).collect();
        softmax_in_place(&mut w, tau);
        let mut o = vec![0.0; dv];
        for (wj, vj) in w.iter().zip(v.rows()) {
            for (acc, &x) in o.iter_mut().zip(vj) {
                *acc += wj * x;
            }
        }
        (o, w)
    });
    let mut out = Array2::zeros((n, dv));
    let mut weights = Array2::zeros((n, m));
    for (i, (o, w)) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&o));
        weights.row_mut(i).assign(&ndarray::ArrayView1::from(&w));
    }
    Ok((out, weights))
}

/// `softmax(τ·x)` with the row maximum subtracted first.
fn softmax_in_place(row: &mut [f64], tau: f64) {
    for x in row.iter_mut() {
        *x *= tau;
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

/// Row-wise tempered softmax of a logit matrix.
pub fn softmax_rows(logits: ArrayView2<f64>, tau: f64, mode: Execution) -> Result<Array2<f64>, NumericsError> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(NumericsError::Domain(format!("temperature {tau}")));
    }
    all_finite(logits.iter())?;
    let rows = par::map_range(mode, logits.nrows(), |i| {
        let mut r = logits.row(i).to_vec();
        softmax_in_place(&mut r, tau);
        r
    });
    let mut out = Array2::zeros(logits.dim());
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&r));
    }
    Ok(out)
}

/// Shannon entropy (nats) of each row, with `0 ln 0 = 0`.
pub fn attention_entropy(weights: ArrayView2<f64>) -> Result<Vec<f64>, NumericsError> {
    all_finite(weights.iter())?;
    weights
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&w| w < 0.0) {
                return Err(NumericsError::NotStochastic(i));
            }
            Ok(-row.iter().filter(|&&w| w > 0.0).map(|&w| w * w.ln()).sum::<f64>())
        })
        .collect()
}
