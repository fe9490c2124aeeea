//! Minimal PNG reading/writing used by the mock synthesizer and depth
//! ingestion. Everything decodes to plain buffers; no color management.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png decode error: {0}")]
    Decode(String),
    #[error("png encode error: {0}")]
    Encode(String),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
}

pub struct Rgba8Image {
    pub width: u32,
    pub height: u32,
    /// Row-major RGBA, 4 bytes per pixel.
    pub data: Vec<u8>,
}

fn decode_rgba8_from(
    reader: impl std::io::BufRead + std::io::Seek,
) -> Result<Rgba8Image, ImageIoError> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut png_reader = decoder.read_info().map_err(|e| ImageIoError::Decode(e.to_string()))?;
    let size = png_reader
        .output_buffer_size()
        .ok_or_else(|| ImageIoError::Decode("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = png_reader
        .next_frame(&mut buf)
        .map_err(|e| ImageIoError::Decode(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let (width, height) = (info.width, info.height);
    let pixels = (width as usize) * (height as usize);
    let data = match info.color_type {
        png::ColorType::Rgba => buf,
        png::ColorType::Rgb => {
            let mut out = Vec::with_capacity(pixels * 4);
            for px in buf.chunks_exact(3) {
                out.extend_from_slice(px);
                out.push(255);
            }
            out
        }
        png::ColorType::Grayscale => {
            let mut out = Vec::with_capacity(pixels * 4);
            for &g in &buf {
                out.extend_from_slice(&[g, g, g, 255]);
            }
            out
        }
        png::ColorType::GrayscaleAlpha => {
            let mut out = Vec::with_capacity(pixels * 4);
            for px in buf.chunks_exact(2) {
                out.extend_from_slice(&[px[0], px[0], px[0], px[1]]);
            }
            out
        }
        other => return Err(ImageIoError::Unsupported(format!("{other:?}"))),
    };
    Ok(Rgba8Image { width, height, data })
}

pub fn load_rgba8(path: &Path) -> Result<Rgba8Image, ImageIoError> {
    decode_rgba8_from(BufReader::new(File::open(path)?))
}

/// Validates that `bytes` decode as a PNG; returns the decoded image.
pub fn decode_rgba8(bytes: &[u8]) -> Result<Rgba8Image, ImageIoError> {
    decode_rgba8_from(Cursor::new(bytes))
}

/// Writes an RGBA8 PNG with optional tEXt chunks. Output bytes are
/// deterministic for identical inputs.
pub fn save_rgba8_with_text(
    path: &Path,
    image: &Rgba8Image,
    text_chunks: &[(String, String)],
) -> Result<(), ImageIoError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width, image.height);
    encoder.set_color(png::ColorType::Rgba);
    encoder.set_depth(png::BitDepth::Eight);
    for (keyword, text) in text_chunks {
        encoder
            .add_text_chunk(keyword.clone(), text.clone())
            .map_err(|e| ImageIoError::Encode(e.to_string()))?;
    }
    let mut writer = encoder.write_header().map_err(|e| ImageIoError::Encode(e.to_string()))?;
    writer
        .write_image_data(&image.data)
        .map_err(|e| ImageIoError::Encode(e.to_string()))?;
    Ok(())
}

/// Reads just the PNG header for (width, height).
pub fn png_dimensions(path: &Path) -> Result<(u32, u32), ImageIoError> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let reader = decoder.read_info().map_err(|e| ImageIoError::Decode(e.to_string()))?;
    let info = reader.info();
    Ok((info.width, info.height))
}

/// Reads the tEXt chunks of a PNG (keyword, text) pairs.
pub fn read_png_text(path: &Path) -> Result<Vec<(String, String)>, ImageIoError> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let reader = decoder.read_info().map_err(|e| ImageIoError::Decode(e.to_string()))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|c| (c.keyword.clone(), c.text.clone()))
        .collect())
}

/// Loads a 16-bit grayscale PNG as raw u16 samples (big-endian in the file).
pub fn load_gray16(path: &Path) -> Result<(u32, u32, Vec<u16>), ImageIoError> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| ImageIoError::Decode(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageIoError::Decode("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ImageIoError::Decode(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(ImageIoError::Unsupported(format!(
            "expected 16-bit grayscale, got {:?}/{:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    let samples = buf
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((info.width, info.height, samples))
}

/// Writes a 16-bit grayscale PNG; used by tests and fixture generation.
pub fn save_gray16(path: &Path, width: u32, height: u32, samples: &[u16]) -> Result<(), ImageIoError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let mut writer = encoder.write_header().map_err(|e| ImageIoError::Encode(e.to_string()))?;
    let mut bytes = Vec::with_capacity(samples.len() * 2);
    for s in samples {
        bytes.extend_from_slice(&s.to_be_bytes());
    }
    writer
        .write_image_data(&bytes)
        .map_err(|e| ImageIoError::Encode(e.to_string()))?;
    Ok(())
}
