//! Seeded synthetic stand-in datasets.
//!
//! `synth_images` produces a 10-class image set in the Fashion-MNIST
//! format envelope: every class shares one bright central anchor disk
//! (so activity onset carries no class information), class identity lives
//! in bright blob patterns, and dim background clutter is drawn the same
//! way for every class. `synth_events` produces a 2-class audio-like
//! event set over 700 channels (rising vs falling frequency sweeps).
//!
//! Both exist so the full pipeline can run on machines without the real
//! datasets; loaders and formats are identical either way.

use crate::encode::{ImageSample, SpikeEventSet};
use crate::error::Result;
use crate::rng::{self, derive};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const IMG_SIDE: usize = 28;
pub const IMG_CLASSES: usize = 10;
pub const EVENT_UNITS: u32 = 700;
pub const EVENT_CLASSES: usize = 2;
const EVENT_DURATION: f64 = 0.8;

/// Class prototypes: per-class bright pixel sets with intensities in
/// [0.7, 1.0]. The anchor disk is brightest in every class.
fn prototypes(proto_seed: u64) -> Vec<Vec<f64>> {
    let side = IMG_SIDE;
    let n_bright = 110usize;
    let mut prng = rng::rng_from(proto_seed);
    let mut protos = Vec::with_capacity(IMG_CLASSES);
    for _ in 0..IMG_CLASSES {
        let mut field = vec![0.0f64; side * side];
        let k = 3 + prng.random_range(0..3usize);
        for _ in 0..k {
            let cy: f64 = prng.random_range(4.0..(side as f64 - 4.0));
            let cx: f64 = prng.random_range(4.0..(side as f64 - 4.0));
            let s: f64 = prng.random_range(2.0..5.0);
            let amp: f64 = prng.random_range(0.5..1.0);
            for y in 0..side {
                for x in 0..side {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    field[y * side + x] += amp * (-d2 / (2.0 * s * s)).exp();
                }
            }
        }
        let peak = field.iter().cloned().fold(0.0f64, f64::max);
        // the shared anchor outshines every blob
        let c = (side as f64 - 1.0) / 2.0;
        for y in 0..side {
            for x in 0..side {
                if (y as f64 - c).powi(2) + (x as f64 - c).powi(2) <= 9.0 {
                    field[y * side + x] = peak * 2.0;
                }
            }
        }
        let mut order: Vec<usize> = (0..side * side).collect();
        order.sort_by(|&a, &b| field[b].partial_cmp(&field[a]).unwrap().then(a.cmp(&b)));
        order.truncate(n_bright);
        let sel: Vec<f64> = order.iter().map(|&i| field[i]).collect();
        let lo = sel.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = sel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        let mut img = vec![0.0f64; side * side];
        for (&i, &v) in order.iter().zip(&sel) {
            img[i] = 0.7 + 0.3 * (v - lo) / span;
        }
        protos.push(img);
    }
    protos
}

fn roll(img: &[f64], side: usize, dy: i64, dx: i64) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let ny = (y as i64 + dy).rem_euclid(side as i64) as usize;
            let nx = (x as i64 + dx).rem_euclid(side as i64) as usize;
            out[ny * side + nx] = img[y * side + x];
        }
    }
    out
}

/// Generate `n` synthetic image samples. Prototype shapes are fixed by
/// `proto_seed` (use the same value for train and test splits); sample
/// variation comes from `seed`.
pub fn synth_images(n: usize, seed: u64, proto_seed: u64) -> Vec<ImageSample> {
    let side = IMG_SIDE;
    let protos = prototypes(proto_seed);
    let mut rng = rng::rng_from(seed);
    let n_clutter = 100usize;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..IMG_CLASSES);
        let dy = rng.random_range(-2i64..=2);
        let dx = rng.random_range(-2i64..=2);
        let mut img = roll(&protos[c], side, dy, dx);
        let brightness: f64 = rng.random_range(0.85..1.0);
        for v in &mut img {
            *v *= brightness;
        }
        // class-independent dim clutter on background pixels
        let mut bg: Vec<usize> = (0..side * side).filter(|&i| img[i] == 0.0).collect();
        for k in 0..n_clutter.min(bg.len()) {
            let pick = rng.random_range(k..bg.len());
            bg.swap(k, pick);
            img[bg[k]] = rng.random_range(0.05..0.45);
        }
        for v in &mut img {
            *v = v.clamp(0.0, 1.0);
        }
        samples.push(ImageSample {
            pixels: img,
            label: c,
        });
    }
    samples
}

/// Generate `n` synthetic 2-class event recordings: class 0 sweeps the
/// active channel band upward over the recording, class 1 downward, plus
/// uniform background events.
pub fn synth_events(n: usize, seed: u64) -> Result<Vec<SpikeEventSet>> {
    let mut rng = rng::rng_from(derive(seed, 0xE57));
    let unit_jitter = Normal::new(0.0, 35.0).unwrap();
    let time_jitter = Normal::new(0.0, 0.004).unwrap();
    let n_sweep = 60usize;
    let n_noise = 250usize;
    let mut sets = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..EVENT_CLASSES) as u32;
        let mut events: Vec<(u32, f64)> = Vec::with_capacity(n_sweep * 6 + n_noise);
        for k in 0..n_sweep {
            let frac = k as f64 / (n_sweep - 1) as f64;
            let t = frac * EVENT_DURATION;
            let center = if class == 0 {
                80.0 + 540.0 * frac
            } else {
                620.0 - 540.0 * frac
            };
            for _ in 0..6 {
                let u = (center + unit_jitter.sample(&mut rng))
                    .clamp(0.0, (EVENT_UNITS - 1) as f64) as u32;
                let tt = (t + time_jitter.sample(&mut rng)).clamp(0.0, EVENT_DURATION - 1e-9);
                events.push((u, tt));
            }
        }
        for _ in 0..n_noise {
            events.push((
                rng.random_range(0..EVENT_UNITS),
                rng.random_range(0.0..EVENT_DURATION),
            ));
        }
        events.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        sets.push(SpikeEventSet::new(events, class, EVENT_UNITS, EVENT_DURATION)?);
    }
    Ok(sets)
}
