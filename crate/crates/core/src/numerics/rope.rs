use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Where the channel-pair index `i` in `θ_i = b^(-2i/d)` starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexOrigin {
    /// `i = 1..=d/2`, so the slowest channel is exactly `1/b`.
    #[default]
    One,
    /// `i = 0..d/2`, the common implementation convention (fastest channel is 1).
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub base: f64,
    #[serde(default)]
    pub index_origin: IndexOrigin,
}

impl RopeConfig {
    pub fn new(head_dim: usize, base: f64) -> Self {
        Self {
            head_dim,
            base,
            index_origin: IndexOrigin::One,
        }
    }

    fn validate(&self) -> Result<(), NumericsError> {
        if self.head_dim == 0 || !self.head_dim.is_multiple_of(2) {
            return Err(NumericsError::HeadDim(self.head_dim));
        }
        if !(self.base.is_finite() && self.base > 0.0) {
            return Err(NumericsError::Domain(format!("rope base {} must be positive", self.base)));
        }
        Ok(())
    }
}

/// Per-pair angular frequencies, length `head_dim / 2`.
pub fn rope_frequencies(cfg: &RopeConfig) -> Result<Vec<f64>, NumericsError> {
    cfg.validate()?;
    let d = cfg.head_dim as f64;
    let first = match cfg.index_origin {
        IndexOrigin::One => 1,
        IndexOrigin::Zero => 0,
    };
    Ok((0..cfg.head_dim / 2)
        .map(|k| cfg.base.powf(-2.0 * (k + first) as f64 / d))
        .collect())
}

/// NTK-style base rescaling: `b · sqrt(n_uhr / n_nhr)`.
pub fn rescale_rope_base(base: f64, n_uhr: usize, n_nhr: usize) -> Result<f64, NumericsError> {
    if n_nhr == 0 || n_uhr < n_nhr {
        return Err(NumericsError::Domain(format!("token counts {n_uhr} / {n_nhr}")));
    }
    if !(base.is_finite() && base > 0.0) {
        return Err(NumericsError::Domain(format!("rope base {base} must be positive")));
    }
    Ok(base * (n_uhr as f64 / n_nhr as f64).sqrt())
}

fn rotate_into(out: &mut [f64], row: &[f64], theta: &[f64], p: f64) {
    for (k, &th) in theta.iter().enumerate() {
        let (s, c) = (th * p).sin_cos();
        let (a, b) = (row[2 * k], row[2 * k + 1]);
        out[2 * k] = a * c - b * s;
        out[2 * k + 1] = a * s + b * c;
    }
}

/// Rotate each token's channel pairs by `θ_i · p` where `p` is the token's
/// (possibly fractional) position on a single axis.
pub fn apply_rope(tokens: ArrayView2<f64>, positions: &[f64], cfg: &RopeConfig) -> Result<Array2<f64>, NumericsError> {
    let theta = rope_frequencies(cfg)?;
    let (n, d) = tokens.dim();
    if d != cfg.head_dim || positions.len() != n {
        return Err(NumericsError::Shape(vec![n, d], vec![positions.len(), cfg.head_dim]));
    }
    let mut out = Array2::zeros((n, d));
    for ((row, mut dst), &p) in tokens.rows().into_iter().zip(out.rows_mut()).zip(positions) {
        let src = row.to_vec();
        rotate_into(dst.as_slice_mut().expect("standard layout"), &src, &theta, p);
    }
    Ok(out)
}

/// Tokens with integer `(row, col)` grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub tokens: Array2<f64>,
    pub positions: Vec<(usize, usize)>,
}

impl TokenGrid {
    /// Row-major dense grid of `rows × cols` tokens.
    pub fn dense(tokens: Array2<f64>, rows: usize, cols: usize) -> Result<Self, NumericsError> {
        if tokens.nrows() != rows * cols {
            return Err(NumericsError::Shape(vec![tokens.nrows()], vec![rows * cols]));
        }
        let positions = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect();
        Ok(Self { tokens, positions })
    }
}

/// Factorized 2D rotary encoding: the first half of the channels encode the
/// row coordinate and the second half the column, each with its own
/// `head_dim / 2` frequency ladder. `cfg.head_dim` is the full token width.
pub fn apply_rope_2d(grid: &TokenGrid, cfg: &RopeConfig) -> Result<Array2<f64>, NumericsError> {
    let d = cfg.head_dim;
    if !d.is_multiple_of(4) || d == 0 {
        return Err(NumericsError::HeadDim(d));
    }
    let (n, width) = grid.tokens.dim();
    if width != d || grid.positions.len() != n {
        return Err(NumericsError::Shape(vec![n, width], vec![grid.positions.len(), d]));
    }
    let half = RopeConfig { head_dim: d / 2, ..*cfg };
    let theta = rope_frequencies(&half)?;
    let mut out = Array2::zeros((n, d));
    for ((row, mut dst), &(pr, pc)) in grid.tokens.rows().into_iter().zip(out.rows_mut()).zip(&grid.positions) {
        let src = row.to_vec();
        let dst = dst.as_slice_mut().expect("standard layout");
        let (lo, hi) = dst.split_at_mut(d / 2);
        rotate_into(lo, &src[..d / 2], &theta, pr as f64);
        rotate_into(hi, &src[d / 2..], &theta, pc as f64);
    }
    Ok(out)
}
