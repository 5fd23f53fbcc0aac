use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

/// Smallest height/width accepted at the file boundary.
pub const MIN_IO_EXTENT: usize = 8;

/// Reads an 8-bit grayscale or RGB PNG into `[0, 1]` samples (`v / 255`).
///
/// Palette, 16-bit and alpha-carrying files are rejected.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if depth != png::BitDepth::Eight {
        return Err(Error::format(path, format!("bit depth {depth:?} (only 8-bit is supported)")));
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::format(path, format!("color type {other:?} (expected gray or RGB)"))),
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    if h < MIN_IO_EXTENT || w < MIN_IO_EXTENT {
        return Err(Error::format(path, format!("{w}x{h} is below the {MIN_IO_EXTENT}px minimum")));
    }
    let stride = frame.line_size;
    let mut img = Image::zeros(h, w, channels);
    for y in 0..h {
        let row = &buf[y * stride..y * stride + w * channels];
        for x in 0..w {
            for c in 0..channels {
                img.set(c, y, x, row[x * channels + c] as f64 / 255.0);
            }
        }
    }
    Ok(img)
}

/// Writes an image as an 8-bit PNG, rounding `v * 255` to nearest after clamping to `[0, 1]`.
pub fn write_png(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = image.extent();
    if h < MIN_IO_EXTENT || w < MIN_IO_EXTENT {
        return Err(Error::Contract(format!("{w}x{h} is below the {MIN_IO_EXTENT}px minimum")));
    }
    let color = match image.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::Contract(format!("cannot write a {c}-channel PNG"))),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    let ch = image.channels();
    let mut buf = vec![0u8; h * w * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                buf[(y * w + x) * ch + c] = quantize(image.get(c, y, x));
            }
        }
    }
    writer
        .write_image_data(&buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    writer.finish().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(())
}

#[inline]
fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}
