use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, GrayImage, ImageEncoder, ImageFormat, Luma};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads a PNG or PGM raster as `[H, W]` values in `[0, 1]`. Colour images
/// are reduced to the mean of their red, green and blue channels.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match &img {
        DynamicImage::ImageLuma8(g) => g.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(g) => g.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        _ => img
            .to_rgb16()
            .pixels()
            .map(|p| (p.0[0] as f64 + p.0[1] as f64 + p.0[2] as f64) / (3.0 * 65535.0))
            .collect(),
    };
    Tensor::new(vec![h, w], data)
}

/// Writes `[H, W]` values in `[0, 1]` as 8-bit grayscale; the format follows
/// the extension (`.png` or `.pgm`).
pub fn write_image(path: &Path, pixels: &Tensor) -> Result<()> {
    let [h, w] = *pixels.shape() else {
        return Err(Error::contract(format!("image must be [H, W], got {:?}", pixels.shape())));
    };
    let ext = path.extension().and_then(|e| e.to_str());
    if !matches!(ext, Some("png" | "pgm" | "pnm")) {
        return Err(Error::Image(format!("{}: use a .png or .pgm extension", path.display())));
    }
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = pixels.data()[y as usize * w + x as usize];
        Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    let err = |e: image::ImageError| Error::Image(format!("{}: {e}", path.display()));
    if ext == Some("png") {
        return img.save_with_format(path, ImageFormat::Png).map_err(err);
    }
    // binary P5 graymap; the generic PNM writer would emit a P7 PAM header
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), w as u32, h as u32, ExtendedColorType::L8)
        .map_err(err)?;
    std::fs::write(path, buf).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
