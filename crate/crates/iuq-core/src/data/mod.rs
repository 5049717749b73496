//! Dataset ingestion: derivation of intrinsic triples from rendered layers
//! and a procedural synthetic generator with exact ground truth.

pub mod photos;
pub mod sintel;
pub mod synthetic;

pub use sintel::{
    derive_nonlambertian, derive_shading, load_sintel_frame, scan_sintel_root,
    SintelDerivationConfig,
};
pub use synthetic::{
    generate_synthetic_dataset, save_synthetic_dataset, SyntheticDataset, SyntheticSceneConfig,
};

use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, Rgb, Rgb32FImage};
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::types::ImageTensor;

/// Decodes an image file into a float RGB tensor in [0,1], resized to
/// `resolution` x `resolution` with an antialiased bilinear filter.
/// Grayscale inputs are replicated to three channels; 8-bit and 16-bit
/// depths are normalized by their maximum code value.
pub fn load_image_tensor(path: &Path, resolution: usize) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let float = to_rgb_f32(&img);
    let resized = if (float.width() as usize, float.height() as usize) == (resolution, resolution)
    {
        float
    } else {
        image::imageops::resize(
            &float,
            resolution as u32,
            resolution as u32,
            FilterType::Triangle,
        )
    };
    let mut data = Array3::<f32>::zeros((3, resolution, resolution));
    for (x, y, px) in resized.enumerate_pixels() {
        for c in 0..3 {
            data[[c, y as usize, x as usize]] = px.0[c];
        }
    }
    ImageTensor::new(data)
}

fn to_rgb_f32(img: &DynamicImage) -> Rgb32FImage {
    let mut out = Rgb32FImage::new(img.width(), img.height());
    match img {
        DynamicImage::ImageRgb32F(buf) => return buf.clone(),
        DynamicImage::ImageLuma16(buf) => {
            for (x, y, px) in buf.enumerate_pixels() {
                let v = px.0[0] as f32 / 65535.0;
                out.put_pixel(x, y, Rgb([v, v, v]));
            }
        }
        DynamicImage::ImageRgb16(buf) => {
            for (x, y, px) in buf.enumerate_pixels() {
                let p = px.0;
                out.put_pixel(
                    x,
                    y,
                    Rgb([
                        p[0] as f32 / 65535.0,
                        p[1] as f32 / 65535.0,
                        p[2] as f32 / 65535.0,
                    ]),
                );
            }
        }
        DynamicImage::ImageRgba16(buf) => {
            for (x, y, px) in buf.enumerate_pixels() {
                let p = px.0;
                out.put_pixel(
                    x,
                    y,
                    Rgb([
                        p[0] as f32 / 65535.0,
                        p[1] as f32 / 65535.0,
                        p[2] as f32 / 65535.0,
                    ]),
                );
            }
        }
        other => {
            // 8-bit and exotic variants go through the rgb8 path
            let rgb = other.to_rgb8();
            for (x, y, px) in rgb.enumerate_pixels() {
                let p = px.0;
                out.put_pixel(
                    x,
                    y,
                    Rgb([p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0]),
                );
            }
        }
    }
    out
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

/// Writes a [0,1] tensor as a 16-bit RGB PNG.
pub fn save_image_tensor_png16(img: &ImageTensor, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let (h, w) = (img.height(), img.width());
    let mut buf = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = img.data()[[c, y as usize, x as usize]].clamp(0.0, 1.0);
            px.0[c] = (v * 65535.0).round() as u16;
        }
    }
    buf.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: format!("png encode: {e}"),
    })
}

/// Writes a [0,1] tensor as an 8-bit RGB PNG (figure panels).
pub fn save_image_tensor_png8(img: &ImageTensor, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let (h, w) = (img.height(), img.width());
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = img.data()[[c, y as usize, x as usize]].clamp(0.0, 1.0);
            px.0[c] = (v * 255.0).round() as u8;
        }
    }
    buf.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: format!("png encode: {e}"),
    })
}
