//! Synthetic fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uhr_core::image::ImageTensor;
use uhr_core::pipeline::TripletRecord;

/// Smooth multi-sinusoid RGB scene in `[0.2, 0.8]` plus uniform noise of
/// half-width `noise`.
pub fn scene(h: usize, w: usize, seed: u64, noise: f64) -> Vec<f64> {
    scene_at(h, w, seed, noise, 0.0, 0.0)
}

fn hash_unit(mut z: u64) -> f64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
}

/// [`scene`] sampled at `(y + dy, x + dx)`. Noise is attached to integer scene
/// coordinates, so integer offsets give exactly shifted frames.
pub fn scene_at(h: usize, w: usize, seed: u64, noise: f64, dy: f64, dx: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[f64; 5]> = (0..6)
        .map(|_| {
            [
                rng.random_range(0.01..0.06),
                rng.random_range(0.01..0.06),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.5..1.0),
                rng.random_range(0.0..3.0),
            ]
        })
        .collect();
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = (y as f64 + dy, x as f64 + dx);
            for c in 0..3 {
                let mut v = 0.0;
                for wv in &waves {
                    let phase = wv[2] + wv[4] * c as f64;
                    v += wv[3] * (wv[0] * sx + wv[1] * sy + phase).sin();
                }
                let n = if noise > 0.0 {
                    let key = ((sy.round() as i64 as u64) << 32) ^ (sx.round() as i64 as u64) ^ ((c as u64) << 60) ^ seed.rotate_left(17);
                    noise * (2.0 * hash_unit(key) - 1.0)
                } else {
                    0.0
                };
                out.push((0.5 + 0.3 * v / 6.0 + n).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Gray texture with mid-frequency content, sampled at `(y + dy, x + dx)`;
/// fractional offsets shift it exactly.
pub fn texture_at(h: usize, w: usize, seed: u64, dy: f64, dx: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[f64; 4]> = (0..12)
        .map(|_| {
            [
                rng.random_range(-0.35..0.35),
                rng.random_range(-0.35..0.35),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.3..1.0),
            ]
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w[3]).sum();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = (y as f64 + dy, x as f64 + dx);
            let v: f64 = waves.iter().map(|wv| wv[3] * (wv[0] * sx + wv[1] * sy + wv[2]).sin()).sum();
            out.push(0.5 + 0.4 * v / norm);
        }
    }
    out
}

pub fn tensor(h: usize, w: usize, data: Vec<f64>) -> ImageTensor {
    ImageTensor::from_unit(h, w, 3, data).unwrap()
}

/// Per-channel box blur with clamped borders.
pub fn box_blur(data: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let r = r as isize;
    let mut out = vec![0.0; data.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            for c in 0..3 {
                let mut s = 0.0;
                let mut n = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                        let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                        s += data[(yy * w + xx) * 3 + c];
                        n += 1.0;
                    }
                }
                out[(y as usize * w + x as usize) * 3 + c] = s / n;
            }
        }
    }
    out
}

/// Add uniform noise of half-width `amp`, clamped to `[0, 1]`.
pub fn jitter(data: &mut [f64], amp: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in data {
        *v = (*v + rng.random_range(-amp..amp)).clamp(0.0, 1.0);
    }
}

/// Shift every channel of the square `[y0, y0+s) × [x0, x0+s)` by ±0.3,
/// toward the middle of the range.
pub fn paint_block(data: &mut [f64], w: usize, y0: usize, x0: usize, s: usize) {
    for y in y0..y0 + s {
        for x in x0..x0 + s {
            for c in 0..3 {
                let v = &mut data[(y * w + x) * 3 + c];
                *v = if *v < 0.5 { *v + 0.3 } else { *v - 0.3 };
            }
        }
    }
}

/// What is wrong with a planted triplet, if anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Defect {
    Clean,
    Blur,
    Dark,
    Duplicate,
    NoEdit,
}

pub const SIDE: usize = 192;

fn defect_for(i: usize) -> Defect {
    match i % 20 {
        3 => Defect::Blur,
        7 => Defect::Dark,
        11 => Defect::Duplicate,
        15 => Defect::NoEdit,
        _ => Defect::Clean,
    }
}

/// Write `n` triplets into `dir` with relative paths, and return the records
/// with their planted defect. Every twentieth record carries each defect;
/// duplicates point at the files of the record just before them.
pub fn planted_corpus(dir: &Path, n: usize, seed: u64) -> Vec<(TripletRecord, Defect)> {
    let (h, w) = (SIDE, SIDE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(TripletRecord, Defect)> = Vec::with_capacity(n);
    for i in 0..n {
        let defect = defect_for(i);
        let id = format!("r{i:03}");
        let laion = rng.random_range(0.0..10.0);
        let (ip, ep) = if defect == Defect::Duplicate {
            let prev = &out[i - 1].0;
            (prev.input_path.clone(), prev.edited_path.clone())
        } else {
            let s = seed.wrapping_mul(1000).wrapping_add(i as u64);
            let mut input = scene(h, w, s, 0.08);
            if defect == Defect::Dark {
                input.iter_mut().for_each(|v| *v *= 0.1);
                jitter(&mut input, 0.03, s ^ 0xd);
            }
            let edited = match defect {
                Defect::NoEdit => input.clone(),
                Defect::Blur => {
                    let mut b = box_blur(&input, h, w, 4);
                    jitter(&mut b, 3.0 / 255.0, s ^ 0xb);
                    input = b.clone();
                    paint_block(&mut b, w, 40, 50, 48);
                    b
                }
                _ => {
                    let mut e = input.clone();
                    let (y0, x0) = (rng.random_range(8..h - 72), rng.random_range(8..w - 72));
                    paint_block(&mut e, w, y0, x0, 56);
                    e
                }
            };
            let ip = format!("{id}_in.png");
            let ep = format!("{id}_out.png");
            tensor(h, w, input).save_png(&dir.join(&ip)).unwrap();
            tensor(h, w, edited).save_png(&dir.join(&ep)).unwrap();
            (ip.into(), ep.into())
        };
        let mut r = TripletRecord::new(id, ip, ep, "recolor the highlighted region");
        r.edit_type = "color_alteration".into();
        r.scores.insert("aesthetic_laion".into(), laion);
        out.push((r, defect));
    }
    out
}
