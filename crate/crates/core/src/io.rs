//! Frame loading and PGM output.

use std::io::Write;
use std::path::{Path, PathBuf};

use image::DynamicImage;

use crate::error::{Error, Result};
use crate::imgcore::Frame;

/// Loads a PNG or PGM/PPM file as a grayscale frame.
///
/// Color images are reduced with [`crate::imgcore::luma`]; 16-bit inputs are
/// first narrowed to 8 bits by the decoder.
pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(frame_from_image(img))
}

pub fn frame_from_image(img: DynamicImage) -> Frame {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => Frame::new(w, h, g.into_raw()),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            Frame::new(w, h, img.to_luma8().into_raw())
        }
        other => Frame::from_rgb(w, h, other.to_rgb8().as_raw()),
    }
    .expect("decoder produced consistent dimensions")
}

/// Writes 8-bit binary PGM (`P5`).
pub fn write_pgm(mut out: impl Write, width: usize, height: usize, pixels: &[u8]) -> std::io::Result<()> {
    assert_eq!(pixels.len(), width * height);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(pixels)
}

pub fn save_frame_pgm(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_pgm(
        std::io::BufWriter::new(file),
        frame.width(),
        frame.height(),
        frame.data(),
    )
    .map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Default frame file patterns.
pub const DEFAULT_PATTERNS: &[&str] = &["*.png", "*.pgm"];

/// Files directly inside `dir` whose names match any of `patterns`, in
/// lexicographic order.
pub fn list_frames(dir: impl AsRef<Path>, patterns: &[&str]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let compiled = patterns
        .iter()
        .map(|p| glob::Pattern::new(p).map_err(|e| Error::InvalidParameter(format!("bad pattern {p:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let io_err = |source| Error::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if entry.path().is_file() && compiled.iter().any(|p| p.matches(name)) {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}
