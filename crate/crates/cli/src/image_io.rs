//! 8-bit PNG/PGM/PPM images as `1 × C × H × W` tensors in `[0, 1]`.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use irfusion_core::metrics;
use irfusion_core::{Shape, Tensor};

use crate::error::{CliError, CliResult};

pub const EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

fn fail(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {what}", path.display()))
}

/// Grayscale files load as one channel, colour files as three (alpha dropped).
pub fn load_image(path: &Path) -> CliResult<Tensor> {
    let img = image::open(path).map_err(|e| fail(path, e))?;
    let gray = !img.color().has_color();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(fail(path, "empty image"));
    }
    let (c, raw) = if gray {
        (1, img.into_luma8().into_raw())
    } else {
        (3, img.into_rgb8().into_raw())
    };
    Ok(Tensor::from_fn(Shape::new(1, c, h, w), |_, ch, y, x| {
        raw[(y * w + x) * c + ch] as f64 / 255.0
    }))
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves a 1- or 3-channel `[0, 1]` image; the format follows the extension.
pub fn save_image(img: &Tensor, path: &Path) -> CliResult<()> {
    let s = img.shape();
    let (w, h) = (s.w() as u32, s.h() as u32);
    let pixels = |c: usize| {
        let mut out = Vec::with_capacity(s.h() * s.w() * c);
        for y in 0..s.h() {
            for x in 0..s.w() {
                for ch in 0..c {
                    out.push(to_u8(img.at(0, ch, y, x)));
                }
            }
        }
        out
    };
    let dynamic = match s.c() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, pixels(1)).expect("sized buffer")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, pixels(3)).expect("sized buffer")),
        c => return Err(fail(path, format!("cannot save a {c}-channel image"))),
    };
    dynamic.save(path).map_err(|e| fail(path, e))
}

/// Visible input as three channels: grayscale is replicated.
pub fn as_visible(img: Tensor) -> CliResult<Tensor> {
    match img.shape().c() {
        3 => Ok(img),
        1 => {
            let two = Tensor::concat_channels(&img, &img)?;
            Ok(Tensor::concat_channels(&two, &img)?)
        }
        c => Err(CliError::Data(format!("visible image has {c} channels"))),
    }
}

/// Infrared input as one channel: colour files are reduced to luminance.
pub fn as_infrared(img: Tensor) -> CliResult<Tensor> {
    match img.shape().c() {
        1 => Ok(img),
        3 => Ok(metrics::luminance(&img)?),
        c => Err(CliError::Data(format!("infrared image has {c} channels"))),
    }
}

/// Files in `dir` with a supported extension, keyed by stem, sorted.
pub fn images_by_stem(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| fail(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| fail(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.push((stem.to_string(), path.clone()));
        }
    }
    out.sort();
    Ok(out)
}
