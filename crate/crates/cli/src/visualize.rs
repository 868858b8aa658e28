//! Attention heatmaps and region boxes for one image.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde_json::json;
use sglanet::training::dataset::{decode, resize_and_crop, to_tensor, Normalization};
use sglanet::Graph;

use crate::commands::{load_model, output_path, resolve_config};
use crate::failure::{Context, ExitCode, Failure};
use crate::{emit, ConfigArgs};

const PALETTE: [[u8; 3]; 6] = [[255, 64, 64], [64, 255, 64], [64, 128, 255], [255, 220, 0], [255, 0, 255], [0, 255, 255]];

pub fn sca_file(stage: usize) -> String {
    format!("sca-stage{stage}.png")
}

pub fn st_file(stage: usize) -> String {
    format!("st-stage{stage}.png")
}

/// Min-max normalized `map` (`h x w`), nearest-upsampled to `base` and blended at 50%.
/// A constant map renders as mid gray.
pub fn heatmap(base: &RgbImage, map: &[f32], h: usize, w: usize) -> RgbImage {
    let lo = map.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = map.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let (bw, bh) = base.dimensions();
    RgbImage::from_fn(bw, bh, |x, y| {
        let sy = y as usize * h / bh as usize;
        let sx = x as usize * w / bw as usize;
        let v = map[sy * w + sx];
        let level = if hi > lo { ((v - lo) / (hi - lo)) as f64 } else { 0.5 };
        let px = base.get_pixel(x, y);
        Rgb(px.0.map(|c| (0.5 * c as f64 + 0.5 * 255.0 * level).round() as u8))
    })
}

/// Rounds a fractional pixel rectangle onto a `w x h` image.
pub fn snap(rect: (f64, f64, f64, f64), w: u32, h: u32) -> [u32; 4] {
    let clamp = |v: f64, extent: u32| v.round().clamp(0.0, (extent - 1) as f64) as u32;
    [clamp(rect.0, w), clamp(rect.1, h), clamp(rect.2, w), clamp(rect.3, h)]
}

/// One-pixel outline of `[x0, y0, x1, y1]`, inclusive.
pub fn draw_rect(img: &mut RgbImage, [x0, y0, x1, y1]: [u32; 4], colour: [u8; 3]) {
    for x in x0..=x1 {
        img.put_pixel(x, y0, Rgb(colour));
        img.put_pixel(x, y1, Rgb(colour));
    }
    for y in y0..=y1 {
        img.put_pixel(x0, y, Rgb(colour));
        img.put_pixel(x1, y, Rgb(colour));
    }
}

fn save(img: &RgbImage, out: &Path, name: &str) -> Result<(), Failure> {
    let path = output_path(out, name)?;
    img.save(&path).map_err(|e| Failure::new(ExitCode::Data, format!("cannot write {}: {e}", path.display())))
}

pub fn run(checkpoint: &Path, image: &Path, args: &ConfigArgs, out: &Path) -> Result<(), Failure> {
    let config = resolve_config(args, Some(checkpoint))?;
    if config.model.in_channels != 3 {
        return Err(Failure::new(ExitCode::Config, "visualize needs a model with in_channels = 3"));
    }
    let trainer = load_model(config, checkpoint)?;
    let r = trainer.config.model.resolution;
    let input = resize_and_crop(&decode(image).or_exit(ExitCode::Data)?, r);
    let norm = Normalization { mean: trainer.config.train.mean, std: trainer.config.train.std };
    let tensor = to_tensor(&input, &norm, false).reshape([1, 3, r, r]).or_exit(ExitCode::Data)?;

    let mut g = Graph::new();
    let p = trainer.store.bind_frozen(&mut g);
    let x = g.input(tensor);
    let outputs = trainer.net.forward(&mut g, &p, x).or_exit(ExitCode::Config)?;
    for (i, &stage) in trainer.config.model.tapped.iter().enumerate() {
        let spatial = g.value(outputs.attention[i].spatial);
        let (h, w) = (spatial.shape()[2], spatial.shape()[3]);
        save(&heatmap(&input, spatial.data(), h, w), out, &sca_file(stage))?;

        let mut boxes = input.clone();
        for (k, params) in outputs.regions[i].params[0].iter().enumerate() {
            let rect = params.pixel_rect(r, r);
            draw_rect(&mut boxes, snap(rect, r as u32, r as u32), PALETTE[k % PALETTE.len()]);
            let line = json!({ "stage": stage, "region": k, "x0": rect.0, "y0": rect.1, "x1": rect.2, "y1": rect.3 });
            emit(&line);
        }
        save(&boxes, out, &st_file(stage))?;
    }
    Ok(())
}
