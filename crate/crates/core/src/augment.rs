//! Multi-crop augmentation: `n_global` large-area and `n_local` small-area
//! views of one image, each randomly flipped and grayscaled, resized to a
//! common size and standardized per channel.
//!
//! Randomness is counter based. Every crop draws from its own generator seeded
//! by `(seed, epoch, image_index, crop_index)`, so a crop can be replayed in
//! isolation and batches can be built in any order or in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Variance floor for per-channel standardization.
pub const STD_EPS: f64 = 1e-12;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
const CROP_ATTEMPTS: usize = 10;
/// Smallest local crop must cover at least this many source pixels.
const MIN_CROP_AREA: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CropConfig {
    pub n_global: usize,
    pub n_local: usize,
    /// `(lo, hi)` fraction of the source area.
    pub global_scale: (f64, f64),
    pub local_scale: (f64, f64),
    pub out_size: usize,
    pub flip_prob: f64,
    pub grayscale_prob: f64,
    pub seed: u64,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            n_global: 2,
            n_local: 6,
            global_scale: (0.4, 1.0),
            local_scale: (0.05, 0.4),
            out_size: 64,
            flip_prob: 0.5,
            grayscale_prob: 0.2,
            seed: 0,
        }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, (lo, hi)) in [("global_scale", self.global_scale), ("local_scale", self.local_scale)] {
            if !(0.0 < lo && lo <= hi && hi <= 1.0) {
                return bad(format!("crop.{name} must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"));
            }
        }
        if self.local_scale.1 > self.global_scale.0 {
            return bad(format!(
                "local scale upper bound {} exceeds global lower bound {}",
                self.local_scale.1, self.global_scale.0
            ));
        }
        if self.n_global == 0 || self.n_local == 0 {
            return bad("crop.n_global and crop.n_local must be >= 1".into());
        }
        for (name, p) in [("flip_prob", self.flip_prob), ("grayscale_prob", self.grayscale_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("crop.{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.out_size == 0 {
            return bad("crop.out_size must be positive".into());
        }
        Ok(())
    }

    /// Rejects sources too small for the smallest local crop.
    pub fn check_source(&self, channels: usize, height: usize, width: usize) -> Result<()> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Input(format!("empty image {channels}x{height}x{width}")));
        }
        let smallest = self.local_scale.0 * (height * width) as f64;
        if smallest < MIN_CROP_AREA {
            return Err(Error::Input(format!(
                "image {height}x{width} is too small: smallest local crop covers {smallest:.2} px (< {MIN_CROP_AREA})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentOp {
    /// Source rectangle, resized to `out_size` after the remaining ops.
    Crop {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        out_size: usize,
    },
    Hflip,
    Grayscale,
    Normalize,
}

#[derive(Clone, Debug)]
pub struct View {
    pub image: Tensor,
    pub ops: Vec<AugmentOp>,
}

#[derive(Clone, Debug)]
pub struct CropSet {
    pub globals: Vec<View>,
    pub locals: Vec<View>,
}

impl CropSet {
    pub fn global_images(&self) -> impl Iterator<Item = &Tensor> {
        self.globals.iter().map(|v| &v.image)
    }

    pub fn local_images(&self) -> impl Iterator<Item = &Tensor> {
        self.locals.iter().map(|v| &v.image)
    }

    pub fn bits_eq(&self, other: &CropSet) -> bool {
        let eq = |a: &[View], b: &[View]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.ops == y.ops && x.image.bits_eq(&y.image))
        };
        eq(&self.globals, &other.globals) && eq(&self.locals, &other.locals)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one crop's generator.
pub fn crop_seed(seed: u64, epoch: u64, image_index: u64, crop_index: u64) -> u64 {
    [epoch, image_index, crop_index]
        .iter()
        .fold(splitmix64(seed), |acc, &v| splitmix64(acc ^ splitmix64(v)))
}

fn dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match image.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::shape(format!("expected an image [C, H, W], got {s:?}"))),
    }
}

/// Mirrors columns.
pub fn hflip(image: &Tensor) -> Result<Tensor> {
    let (_, _, w) = dims(image)?;
    let data = image
        .data()
        .chunks_exact(w)
        .flat_map(|row| row.iter().rev().copied())
        .collect();
    Tensor::new(image.shape(), data)
}

/// Luma `0.299 R + 0.587 G + 0.114 B` replicated across the three channels.
/// Single-channel input is returned unchanged.
pub fn to_grayscale(image: &Tensor) -> Result<Tensor> {
    let (c, h, w) = dims(image)?;
    match c {
        1 => Ok(image.clone()),
        3 => {
            let plane = h * w;
            let d = image.data();
            let luma: Vec<f64> = (0..plane)
                .map(|i| LUMA[0] * d[i] + LUMA[1] * d[plane + i] + LUMA[2] * d[2 * plane + i])
                .collect();
            let data = luma.iter().chain(&luma).chain(&luma).copied().collect();
            Tensor::new(image.shape(), data)
        }
        _ => Err(Error::shape(format!("grayscale expects 1 or 3 channels, got {c}"))),
    }
}

/// Bilinear resize with half-pixel centers (align-corners false), edge clamped.
pub fn bilinear_resize(image: &Tensor, out_size: usize) -> Result<Tensor> {
    resize_to(image, out_size, out_size)
}

pub fn resize_to(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = dims(image)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize to an empty image"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Per-channel `(x - mean) / sqrt(max(var, STD_EPS))`.
pub fn standardize(image: &Tensor) -> Result<Tensor> {
    let (c, h, w) = dims(image)?;
    let plane = h * w;
    let mut out = image.data().to_vec();
    for ch in out.chunks_exact_mut(plane).take(c) {
        let mean = ch.iter().sum::<f64>() / plane as f64;
        let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
        let inv = 1.0 / var.max(STD_EPS).sqrt();
        ch.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    Tensor::new(image.shape(), out)
}

fn extract(image: &Tensor, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor> {
    let (c, h, w) = dims(image)?;
    if top + height > h || left + width > w || height == 0 || width == 0 {
        return Err(Error::Input(format!(
            "crop {height}x{width}+{top}+{left} outside {h}x{w} image"
        )));
    }
    let src = image.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        for y in top..top + height {
            let row = (ch * h + y) * w;
            out.extend_from_slice(&src[row + left..row + left + width]);
        }
    }
    Tensor::new(&[c, height, width], out)
}

/// Deterministic eval-time transform: full-image resize plus standardization.
pub fn eval_transform(image: &Tensor, out_size: usize) -> Result<Tensor> {
    standardize(&bilinear_resize(image, out_size)?)
}

/// Applies a recorded op sequence to `image`.
pub fn replay(image: &Tensor, ops: &[AugmentOp]) -> Result<Tensor> {
    let mut cur = image.clone();
    let mut resize = None;
    for op in ops {
        match *op {
            AugmentOp::Crop {
                top,
                left,
                height,
                width,
                out_size,
            } => {
                cur = extract(&cur, top, left, height, width)?;
                resize = Some(out_size);
            }
            AugmentOp::Hflip => cur = hflip(&cur)?,
            AugmentOp::Grayscale => cur = to_grayscale(&cur)?,
            AugmentOp::Normalize => {
                if let Some(s) = resize.take() {
                    cur = bilinear_resize(&cur, s)?;
                }
                cur = standardize(&cur)?;
            }
        }
    }
    if let Some(s) = resize {
        cur = bilinear_resize(&cur, s)?;
    }
    Ok(cur)
}

fn sample_rect<R: Rng>(rng: &mut R, h: usize, w: usize, scale: (f64, f64)) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let (log_lo, log_hi) = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    let frac = if scale.0 < scale.1 {
        rng.random_range(scale.0..scale.1)
    } else {
        scale.0
    };
    let target = frac * area;
    let mut size = None;
    for _ in 0..CROP_ATTEMPTS {
        let ratio = rng.random_range(log_lo..log_hi).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if (1..=w).contains(&cw) && (1..=h).contains(&ch) {
            size = Some((ch, cw));
            break;
        }
    }
    let (ch, cw) = size.unwrap_or_else(|| {
        let ch = (target.sqrt().round() as usize).clamp(1, h);
        let cw = ((target / ch as f64).round() as usize).clamp(1, w);
        (ch, cw)
    });
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    (top, left, ch, cw)
}

fn make_view(image: &Tensor, config: &CropConfig, scale: (f64, f64), seed: u64) -> Result<View> {
    let (_, h, w) = dims(image)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (top, left, height, width) = sample_rect(&mut rng, h, w, scale);
    let mut ops = vec![AugmentOp::Crop {
        top,
        left,
        height,
        width,
        out_size: config.out_size,
    }];
    if rng.random::<f64>() < config.flip_prob {
        ops.push(AugmentOp::Hflip);
    }
    if rng.random::<f64>() < config.grayscale_prob {
        ops.push(AugmentOp::Grayscale);
    }
    ops.push(AugmentOp::Normalize);
    let image = replay(image, &ops)?;
    Ok(View { image, ops })
}

/// Crop set for `image` in epoch 0.
pub fn build_crop_set(image: &Tensor, config: &CropConfig, image_index: u64) -> Result<CropSet> {
    build_crop_set_for_epoch(image, config, 0, image_index)
}

/// Globals use crop indices `0..n_global`, locals `n_global..n_global + n_local`.
pub fn build_crop_set_for_epoch(
    image: &Tensor,
    config: &CropConfig,
    epoch: u64,
    image_index: u64,
) -> Result<CropSet> {
    config.validate()?;
    let (c, h, w) = dims(image)?;
    config.check_source(c, h, w)?;
    let seed = |crop: usize| crop_seed(config.seed, epoch, image_index, crop as u64);
    let globals = (0..config.n_global)
        .map(|i| make_view(image, config, config.global_scale, seed(i)))
        .collect::<Result<Vec<_>>>()?;
    let locals = (0..config.n_local)
        .map(|i| make_view(image, config, config.local_scale, seed(config.n_global + i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CropSet { globals, locals })
}

/// Crop sets for a batch of `(image_index, image)` pairs, built with
/// [`par::map_range`]; output order follows the input.
pub fn build_batch(batch: &[(u64, &Tensor)], config: &CropConfig, epoch: u64) -> Result<Vec<CropSet>> {
    par::map_range(batch.len(), |i| {
        let (idx, img) = batch[i];
        build_crop_set_for_epoch(img, config, epoch, idx)
    })
    .into_iter()
    .collect()
}

pub fn build_batch_seq(batch: &[(u64, &Tensor)], config: &CropConfig, epoch: u64) -> Result<Vec<CropSet>> {
    par::map_range_seq(batch.len(), |i| {
        let (idx, img) = batch[i];
        build_crop_set_for_epoch(img, config, epoch, idx)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        let data = (0..c * h * w).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        Tensor::new(&[c, h, w], data).unwrap()
    }

    #[test]
    fn hflip_examples() {
        let x = Tensor::new(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(hflip(&x).unwrap().data(), &[2.0, 1.0, 4.0, 3.0]);
        let img = ramp(3, 5, 7);
        assert!(hflip(&hflip(&img).unwrap()).unwrap().bits_eq(&img));
        let cols = Tensor::new(&[1, 3, 2], vec![1.0, 1.0, 2.0, 2.0, 5.0, 5.0]).unwrap();
        assert!(hflip(&cols).unwrap().bits_eq(&cols));
    }

    #[test]
    fn grayscale_examples() {
        let red = Tensor::new(&[3, 1, 1], vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(to_grayscale(&red).unwrap().data(), &[0.299, 0.299, 0.299]);
        let img = ramp(3, 4, 4);
        let g1 = to_grayscale(&img).unwrap();
        let g2 = to_grayscale(&g1).unwrap();
        assert!(g1.max_abs_diff(&g2) <= 1e-12);
        let single = ramp(1, 3, 3);
        assert!(to_grayscale(&single).unwrap().bits_eq(&single));
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ramp(3, 6, 6);
        assert!(bilinear_resize(&img, 6).unwrap().bits_eq(&img));
        let flat = Tensor::full(&[3, 5, 7], 0.25);
        let up = resize_to(&flat, 11, 3).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn config_validation() {
        let mut c = CropConfig::default();
        assert!(c.validate().is_ok());
        c.local_scale = (0.05, 0.5);
        assert!(c.validate().is_err());
        let c = CropConfig {
            n_local: 0,
            ..CropConfig::default()
        };
        assert!(c.validate().is_err());
        let c = CropConfig {
            flip_prob: 1.5,
            ..CropConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn tiny_source_is_input_error() {
        let img = ramp(3, 4, 4);
        let err = build_crop_set(&img, &CropConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Input(_)), "{err}");
    }

    #[test]
    fn replay_reproduces_each_view() {
        let img = ramp(3, 40, 48);
        let cfg = CropConfig {
            out_size: 16,
            flip_prob: 0.5,
            grayscale_prob: 0.5,
            ..CropConfig::default()
        };
        let set = build_crop_set(&img, &cfg, 3).unwrap();
        for v in set.globals.iter().chain(&set.locals) {
            assert!(replay(&img, &v.ops).unwrap().bits_eq(&v.image));
        }
    }
}
