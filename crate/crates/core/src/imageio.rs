//! PNG input and output. Only lossless PNG is supported so that pixel
//! equality survives a round trip through the file system.

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::model::{BinaryMask, Image};

fn codec_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let dynamic = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| codec_err(path, e))?;
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    match dynamic {
        DynamicImage::ImageLuma8(buf) => Image::new(width, height, 1, buf.into_raw()),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            Image::new(width, height, 1, dynamic.to_luma8().into_raw())
        }
        other => Image::new(width, height, 3, other.to_rgb8().into_raw()),
    }
}

/// Reads a PNG as grey (1 channel) or RGB (3 channels); alpha is dropped.
pub fn read_png(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|source| Error::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })?;
    decode_png(&bytes, path)
}

pub fn encode_png(image: &Image) -> Vec<u8> {
    let mut out = Vec::new();
    let color = if image.channels() == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    PngEncoder::new_with_quality(Cursor::new(&mut out), CompressionType::Fast, FilterType::Sub)
        .write_image(image.data(), image.width() as u32, image.height() as u32, color)
        .expect("in-memory PNG encoding of a valid image cannot fail");
    out
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    write_bytes(path, &encode_png(image))
}

/// Non-zero pixels are set.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    Ok(BinaryMask::from_image(&read_png(path)?))
}

/// Single-channel PNG with 0 / 255 samples.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_png(path, &mask.to_image())
}
