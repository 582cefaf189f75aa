//! PNG encoding for rasters and masks, plus the base64 transport form used
//! by the remote adapters.

use std::io::Cursor;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, ImageBuffer};

pub fn image_to_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let rgb = RgbImage::from_raw(img.width(), img.height(), img.as_raw().to_vec())
        .ok_or_else(|| Error::Codec("raster size".into()))?;
    let mut out = Cursor::new(Vec::new());
    rgb.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn image_from_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let rgb = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageBuffer::from_raw(w, h, rgb.into_raw())
}

/// Single-channel 0/255 PNG.
pub fn mask_to_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let data = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let gray = GrayImage::from_raw(mask.width(), mask.height(), data)
        .ok_or_else(|| Error::Codec("mask size".into()))?;
    let mut out = Cursor::new(Vec::new());
    gray.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Decodes any PNG as a mask, thresholding luma at 0.5.
pub fn mask_from_png(bytes: &[u8]) -> Result<BinaryMask> {
    let gray = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
    let (w, h) = gray.dimensions();
    BinaryMask::from_bits(w, h, gray.into_raw().into_iter().map(|v| v >= 128).collect())
}

pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    image_from_png(&std::fs::read(path)?)
}

pub fn write_image(path: &Path, img: &ImageBuffer) -> Result<()> {
    std::fs::write(path, image_to_png(img)?)?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    mask_from_png(&std::fs::read(path)?)
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    std::fs::write(path, mask_to_png(mask)?)?;
    Ok(())
}

pub fn image_to_b64(img: &ImageBuffer) -> Result<String> {
    Ok(STANDARD.encode(image_to_png(img)?))
}

pub fn image_from_b64(s: &str) -> Result<ImageBuffer> {
    image_from_png(&decode_b64(s)?)
}

pub fn mask_to_b64(mask: &BinaryMask) -> Result<String> {
    Ok(STANDARD.encode(mask_to_png(mask)?))
}

pub fn mask_from_b64(s: &str) -> Result<BinaryMask> {
    mask_from_png(&decode_b64(s)?)
}

pub fn decode_b64(s: &str) -> Result<Vec<u8>> {
    STANDARD
        .decode(s)
        .map_err(|e| Error::Codec(format!("base64: {e}")))
}

pub fn encode_b64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

/// Writes a label grid as an 8-bit indexed PNG with a fixed palette.
pub fn write_label_png(path: &Path, width: u32, height: u32, labels: &[u8]) -> Result<()> {
    if labels.len() != width as usize * height as usize {
        return Err(Error::Codec("label grid size".into()));
    }
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(label_palette());
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Codec(e.to_string()))?;
    writer
        .write_image_data(labels)
        .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(())
}

fn label_palette() -> Vec<u8> {
    // Distinct hues for the first labels, then a deterministic spread.
    const BASE: [[u8; 3]; 8] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
    ];
    (0..256u32)
        .flat_map(|i| {
            if (i as usize) < BASE.len() {
                BASE[i as usize]
            } else {
                [(i * 37 % 256) as u8, (i * 91 % 256) as u8, (i * 53 % 256) as u8]
            }
        })
        .collect()
}
