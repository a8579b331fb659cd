//! Fundus-like synthetic images.
//!
//! Each image is a bright disc on a dark background with a sinusoidal
//! vessel-like texture whose frequency and orientation depend on the class,
//! a brighter optic-disc spot, 0 to 3 bright lesion blobs whose count
//! distribution shifts with the class, and Gaussian pixel noise.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::augment::crop_seed;
use crate::data_io::dataset::{IMAGES_DIR, LABELS_FILE};
use crate::data_io::pnm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.per_class == 0 || self.image_size < 8 {
            return Err(Error::Config(format!(
                "synthetic data needs classes >= 2, per_class >= 1, size >= 8 (got {self:?})"
            )));
        }
        Ok(())
    }
}

pub fn file_name(class: usize, index: usize) -> String {
    format!("c{class:02}_{index:05}.ppm")
}

/// Lesion count probabilities for `class`: mass centred on `3·class/(C-1)`.
fn lesion_weights(class: usize, classes: usize) -> [f64; 4] {
    let centre = 3.0 * class as f64 / (classes - 1) as f64;
    let mut w = [0.0; 4];
    for (j, v) in w.iter_mut().enumerate() {
        *v = (-(j as f64 - centre).powi(2) / 0.8).exp();
    }
    w
}

/// Renders one image as a `[3 × S × S]` tensor in `[0, 1]` (already quantized to 8 bits).
pub fn render_synthetic(spec: &SynthSpec, class: usize, index: usize) -> Result<Tensor> {
    spec.validate()?;
    if class >= spec.classes {
        return Err(Error::Input(format!("class {class} >= {}", spec.classes)));
    }
    let s = spec.image_size;
    let sf = s as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(crop_seed(spec.seed, class as u64, index as u64, 0x5e7));
    let noise = Normal::new(0.0, 0.03).expect("valid std");

    let cx = sf * (0.5 + rng.random_range(-0.05..0.05));
    let cy = sf * (0.5 + rng.random_range(-0.05..0.05));
    let radius = sf * (0.42 + rng.random_range(-0.03..0.03));
    let brightness = rng.random_range(0.9..1.1);
    let base = [0.78 * brightness, 0.38 * brightness, 0.16 * brightness];

    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let (ox, oy, orad) = (cx + side * 0.45 * radius, cy, 0.14 * radius);

    let freq = 2.0 + 1.5 * class as f64;
    let theta = class as f64 * PI / spec.classes as f64 + rng.random_range(-0.1..0.1);
    let phase = rng.random_range(0.0..2.0 * PI);
    let (ct, st) = (theta.cos(), theta.sin());

    let weights = lesion_weights(class, spec.classes);
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    let mut count = 3;
    for (j, w) in weights.iter().enumerate() {
        if u < *w {
            count = j;
            break;
        }
        u -= w;
    }
    let lesions: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            let r = 0.7 * radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..2.0 * PI);
            (cx + r * a.cos(), cy + r * a.sin(), sf * rng.random_range(0.03..0.06))
        })
        .collect();

    let plane = s * s;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..s {
        for x in 0..s {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
            let mask = ((radius - d) / 1.5).clamp(0.0, 1.0);
            let falloff = 1.0 - 0.35 * (d / radius).min(1.0).powi(2);
            let v = 0.5 + 0.5 * (2.0 * PI * freq * (px * ct + py * st) / sf + phase).sin();
            let vessel = 1.0 - 0.3 * v * v;
            let od = (-((px - ox).powi(2) + (py - oy).powi(2)) / (2.0 * orad * orad)).exp();
            let lesion: f64 = lesions
                .iter()
                .map(|&(lx, ly, lr)| (-((px - lx).powi(2) + (py - ly).powi(2)) / (2.0 * lr * lr)).exp())
                .sum::<f64>()
                .min(1.0);
            for c in 0..3 {
                let mut val = base[c] * falloff * vessel;
                val += od * [0.2, 0.25, 0.15][c];
                val = val * (1.0 - lesion) + lesion * [0.97, 0.92, 0.45][c];
                let pixel = mask * val + (1.0 - mask) * 0.03 + noise.sample(&mut rng);
                data[c * plane + y * s + x] = (pixel.clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
    }
    Tensor::new(&[3, s, s], data)
}

/// Writes `images/*.ppm` and `labels.csv` under `out_dir`.
pub fn generate_synthetic(out_dir: &Path, spec: &SynthSpec) -> Result<()> {
    spec.validate()?;
    let images = out_dir.join(IMAGES_DIR);
    fs::create_dir_all(&images)?;
    let mut labels = csv::Writer::from_path(out_dir.join(LABELS_FILE))?;
    labels.write_record(["filename", "label"])?;
    for class in 0..spec.classes {
        for index in 0..spec.per_class {
            let img = render_synthetic(spec, class, index)?;
            let name = file_name(class, index);
            fs::write(images.join(&name), pnm::from_tensor(&img)?.encode())?;
            labels.write_record([name, class.to_string()])?;
        }
    }
    labels.flush()?;
    Ok(())
}
