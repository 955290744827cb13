use serde::{Deserialize, Serialize};

use super::CurationError;
use crate::image::{GrayImage, ImageTensor};
use crate::quality::to_grayscale;

/// Dense displacement field; `u` is horizontal, `v` vertical, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            u: vec![0.0; height * width],
            v: vec![0.0; height * width],
        }
    }

    pub fn mean(&self) -> (f64, f64) {
        let n = self.u.len().max(1) as f64;
        (self.u.iter().sum::<f64>() / n, self.v.iter().sum::<f64>() / n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub pyramid_levels: usize,
    /// Odd side length of the square aggregation window.
    pub window: usize,
    /// Warp/solve iterations per pyramid level.
    pub iterations: usize,
    /// Frames are area-downscaled so their longer side is at most this before
    /// estimation; magnitudes are reported in native pixels.
    pub max_side: usize,
    /// Windows whose smaller structure-tensor eigenvalue (on mean squared
    /// gradients) falls below this are treated as textureless.
    pub min_eigen: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 5,
            window: 15,
            iterations: 5,
            max_side: 1024,
            min_eigen: 1e-6,
        }
    }
}

/// Mean per-pixel magnitude `√(u² + v²)`.
pub fn motion_score(flow: &FlowField) -> f64 {
    if flow.u.is_empty() {
        return 0.0;
    }
    let total: f64 = flow.u.iter().zip(&flow.v).map(|(u, v)| u.hypot(*v)).sum();
    total / flow.u.len() as f64
}

/// Pyramidal Lucas–Kanade flow from `a` to `b` with default iteration
/// settings: `b(p + d(p)) ≈ a(p)`.
pub fn optical_flow(a: &GrayImage, b: &GrayImage, pyramid_levels: usize, window: usize) -> Result<FlowField, CurationError> {
    let cfg = FlowConfig {
        pyramid_levels,
        window,
        ..FlowConfig::default()
    };
    optical_flow_with(a, b, &cfg)
}

pub fn optical_flow_with(a: &GrayImage, b: &GrayImage, cfg: &FlowConfig) -> Result<FlowField, CurationError> {
    let (h, w) = (a.height(), a.width());
    if (h, w) != (b.height(), b.width()) {
        return Err(CurationError::Mismatch((h, w), (b.height(), b.width())));
    }
    let window = cfg.window.max(1) | 1;
    if h.min(w) < window {
        return Err(CurationError::TooSmall {
            height: h,
            width: w,
            window,
        });
    }
    let mut pa = vec![a.clone()];
    let mut pb = vec![b.clone()];
    while pa.len() < cfg.pyramid_levels.max(1) {
        let last = pa.last().unwrap();
        let (nh, nw) = (last.height() / 2, last.width() / 2);
        if nh.min(nw) < window {
            break;
        }
        pa.push(last.resize_area(nh, nw));
        let lb = pb.last().unwrap().resize_area(nh, nw);
        pb.push(lb);
    }

    let radius = window / 2;
    let mut flow: Option<FlowField> = None;
    for (ia, ib) in pa.iter().zip(&pb).rev() {
        let init = match flow.take() {
            Some(coarse) => upsample_flow(&coarse, ia.height(), ia.width()),
            None => FlowField::zeros(ia.height(), ia.width()),
        };
        flow = Some(refine_level(ia, ib, init, radius, cfg.iterations, cfg.min_eigen));
    }
    Ok(flow.expect("at least one pyramid level"))
}

/// Flow between two color or gray images, evaluated on frames downscaled to
/// `cfg.max_side` and rescaled to native-pixel magnitudes.
pub fn optical_flow_scaled(a: &ImageTensor, b: &ImageTensor, cfg: &FlowConfig) -> Result<FlowField, CurationError> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(CurationError::Mismatch(
            (a.height(), a.width()),
            (b.height(), b.width()),
        ));
    }
    let ga = to_grayscale(a).expect("ImageTensor holds 1 or 3 channels");
    let gb = to_grayscale(b).expect("ImageTensor holds 1 or 3 channels");
    let long = a.height().max(a.width());
    let (ga, gb, scale) = if cfg.max_side > 0 && long > cfg.max_side {
        let s = cfg.max_side as f64 / long as f64;
        let nh = ((a.height() as f64 * s).round() as usize).max(1);
        let nw = ((a.width() as f64 * s).round() as usize).max(1);
        (ga.resize_area(nh, nw), gb.resize_area(nh, nw), (a.width() as f64 / nw as f64, a.height() as f64 / nh as f64))
    } else {
        (ga, gb, (1.0, 1.0))
    };
    let mut f = optical_flow_with(&ga, &gb, cfg)?;
    if scale != (1.0, 1.0) {
        f.u.iter_mut().for_each(|u| *u *= scale.0);
        f.v.iter_mut().for_each(|v| *v *= scale.1);
    }
    Ok(f)
}

fn upsample_flow(coarse: &FlowField, h: usize, w: usize) -> FlowField {
    let sy = coarse.height as f64 / h as f64;
    let sx = coarse.width as f64 / w as f64;
    let sample = |plane: &[f64], y: f64, x: f64| {
        let y = y.clamp(0.0, (coarse.height - 1) as f64);
        let x = x.clamp(0.0, (coarse.width - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(coarse.height - 1), (x0 + 1).min(coarse.width - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let at = |yy: usize, xx: usize| plane[yy * coarse.width + xx];
        (at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx) * (1.0 - fy) + (at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx) * fy
    };
    let mut out = FlowField::zeros(h, w);
    for y in 0..h {
        let cy = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..w {
            let cx = (x as f64 + 0.5) * sx - 0.5;
            out.u[y * w + x] = sample(&coarse.u, cy, cx) / sx;
            out.v[y * w + x] = sample(&coarse.v, cy, cx) / sy;
        }
    }
    out
}

/// Window means via a summed-area table; windows are clipped at the border.
fn box_mean(data: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += data[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] + sat[y0 * (w + 1) + x0];
            out[y * w + x] = s / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

fn refine_level(a: &GrayImage, b: &GrayImage, mut flow: FlowField, r: usize, iterations: usize, min_eigen: f64) -> FlowField {
    let (h, w) = (a.height(), a.width());
    let mut ix = vec![0.0; h * w];
    let mut iy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            ix[y * w + x] = 0.5 * (a.get_clamped(yi, xi + 1) - a.get_clamped(yi, xi - 1));
            iy[y * w + x] = 0.5 * (a.get_clamped(yi + 1, xi) - a.get_clamped(yi - 1, xi));
        }
    }
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).collect::<Vec<_>>();
    let sxx = box_mean(&prod(&ix, &ix), h, w, r);
    let sxy = box_mean(&prod(&ix, &iy), h, w, r);
    let syy = box_mean(&prod(&iy, &iy), h, w, r);
    let valid: Vec<bool> = (0..h * w)
        .map(|i| {
            let tr = sxx[i] + syy[i];
            let disc = ((sxx[i] - syy[i]).powi(2) + 4.0 * sxy[i] * sxy[i]).sqrt();
            0.5 * (tr - disc) > min_eigen
        })
        .collect();

    let mut it = vec![0.0; h * w];
    for _ in 0..iterations {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                it[i] = b.sample_bilinear(y as f64 + flow.v[i], x as f64 + flow.u[i]) - a.get(y, x);
            }
        }
        let bx = box_mean(&prod(&ix, &it), h, w, r);
        let by = box_mean(&prod(&iy, &it), h, w, r);
        let mut max_step: f64 = 0.0;
        for i in 0..h * w {
            if !valid[i] {
                continue;
            }
            let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
            let du = -(syy[i] * bx[i] - sxy[i] * by[i]) / det;
            let dv = -(sxx[i] * by[i] - sxy[i] * bx[i]) / det;
            flow.u[i] += du;
            flow.v[i] += dv;
            max_step = max_step.max(du.abs()).max(dv.abs());
        }
        if max_step < 1e-3 {
            break;
        }
    }
    flow
}
