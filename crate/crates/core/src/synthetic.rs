//! Procedural textured-shape corpus for smoke training.
//!
//! Each class pairs one shape with one texture; position, size, colours and
//! pixel noise vary per image.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub const SIZE: u32 = 32;

/// Class directory names in label order.
pub const CLASSES: [&str; 4] = ["disk-stripes", "square-columns", "triangle-checker", "cross-diagonal"];

fn inside(class: usize, dx: f64, dy: f64, r: f64) -> bool {
    match class {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
        2 => dy <= r * 0.8 && dy >= -r && dx.abs() <= (dy + r) * 0.6,
        _ => (dx.abs() <= r * 0.35 && dy.abs() <= r) || (dy.abs() <= r * 0.35 && dx.abs() <= r),
    }
}

fn texture(class: usize, x: u32, y: u32, period: u32) -> bool {
    match class {
        0 => (y / period) % 2 == 0,
        1 => (x / period) % 2 == 0,
        2 => ((x / period) + (y / period)) % 2 == 0,
        _ => ((x + y) / period) % 2 == 0,
    }
}

fn colour(rng: &mut ChaCha8Rng, lo: u8, hi: u8) -> [f64; 3] {
    [0; 3].map(|_: u8| rng.gen_range(lo..=hi) as f64)
}

/// One `32 x 32` image of `class`.
pub fn render(class: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let class = class % CLASSES.len();
    let bg = colour(rng, 0, 90);
    let fg_a = colour(rng, 150, 255);
    let fg_b = colour(rng, 60, 140);
    let r = rng.gen_range(8.0..12.0);
    let cx = rng.gen_range(12.0..20.0);
    let cy = rng.gen_range(12.0..20.0);
    let period = rng.gen_range(2..=3);
    RgbImage::from_fn(SIZE, SIZE, |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        let base = if inside(class, dx, dy, r) {
            if texture(class, x, y, period) {
                fg_a
            } else {
                fg_b
            }
        } else {
            bg
        };
        Rgb(base.map(|c| (c + rng.gen_range(-12.0..12.0)).clamp(0.0, 255.0) as u8))
    })
}

/// Writes `per_class` PNGs for every class under `root/<class>/`.
pub fn write_corpus(root: &Path, per_class: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (label, name) in CLASSES.iter().enumerate() {
        let dir = root.join(name);
        fs::create_dir_all(&dir)?;
        for i in 0..per_class {
            let img = render(label, &mut rng);
            img.save(dir.join(format!("{i:04}.png"))).map_err(|e| crate::error::Error::Image {
                path: dir.join(format!("{i:04}.png")),
                reason: e.to_string(),
            })?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_seeded() {
        let a = render(2, &mut ChaCha8Rng::seed_from_u64(4));
        let b = render(2, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_eq!(a.dimensions(), (SIZE, SIZE));
    }

    #[test]
    fn corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), 3, 1).unwrap();
        for name in CLASSES {
            assert_eq!(fs::read_dir(dir.path().join(name)).unwrap().count(), 3);
        }
    }

    #[test]
    fn shapes_cover_the_centre() {
        for class in 0..4 {
            assert!(inside(class, 0.0, 0.0, 10.0));
            assert!(!inside(class, 11.0, 11.0, 10.0));
        }
    }
}
