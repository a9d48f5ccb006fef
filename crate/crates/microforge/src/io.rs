//! Image, patch-set and checkpoint files.
//!
//! Images are 8-bit grayscale PNG or binary PGM (P5, maxval 255); anything
//! else is rejected. Masks are stored as images with solid = 255 and
//! pore = 0.

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use microforge_core::train::{Checkpoint, CheckpointError};
use microforge_core::{BinaryMask, GrayImage, ImageError, PatchSet};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{path}: unsupported image ({what})")]
    Unsupported { path: PathBuf, what: String },
    #[error("{path}: malformed file ({what})")]
    Malformed { path: PathBuf, what: String },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: ImageError },
    #[error("{path}: {source}")]
    Checkpoint { path: PathBuf, source: CheckpointError },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs { path: path.to_path_buf(), source }
}

pub(crate) fn malformed(path: &Path, what: impl Into<String>) -> IoError {
    IoError::Malformed { path: path.to_path_buf(), what: what.into() }
}

/// Write through a temporary sibling and rename, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(fs_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp).map_err(fs_err(&tmp))?;
        f.write_all(bytes).map_err(fs_err(&tmp))?;
        f.sync_all().map_err(fs_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(fs_err(path))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(fs_err(path))
}

// ---------------------------------------------------------------------------
// Images

fn is_pgm(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Read an 8-bit grayscale PNG or a P5 PGM, chosen by extension.
pub fn read_image(path: &Path) -> Result<GrayImage, IoError> {
    if is_pgm(path) {
        return decode_pgm(&read_bytes(path)?).map_err(|what| malformed(path, what))?.map_err(|source| {
            IoError::Image { path: path.to_path_buf(), source }
        });
    }
    let file = File::open(path).map_err(fs_err(path))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| malformed(path, e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(IoError::Unsupported {
            path: path.to_path_buf(),
            what: format!("{:?} at {:?} bits; expected 8-bit grayscale", info.color_type, info.bit_depth),
        });
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| malformed(path, e.to_string()))?;
    buf.truncate(frame.buffer_size());
    GrayImage::new(frame.width as usize, frame.height as usize, buf)
        .map_err(|source| IoError::Image { path: path.to_path_buf(), source })
}

/// Write as PNG, or as PGM when the extension is `.pgm`.
pub fn write_image(path: &Path, img: &GrayImage) -> Result<(), IoError> {
    let bytes = if is_pgm(path) { encode_pgm(img) } else { encode_png(img).map_err(|e| malformed(path, e))? };
    write_atomic(path, &bytes)
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| e.to_string())?;
        w.write_image_data(img.data()).map_err(|e| e.to_string())?;
    }
    Ok(out)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

/// Parse a P5 PGM. The outer error is a format problem, the inner one an
/// invalid image.
pub fn decode_pgm(bytes: &[u8]) -> Result<Result<GrayImage, ImageError>, String> {
    let mut pos = 0;
    let mut token = || -> Result<String, String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval != 255 {
        return Err(format!("maxval {maxval}; only 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let need = width * height;
    if bytes.len() < start + need {
        return Err("truncated raster".into());
    }
    Ok(GrayImage::new(width, height, bytes[start..start + need].to_vec()))
}

/// Read a mask image whose pixels are all 0 or 255.
pub fn read_mask(path: &Path) -> Result<BinaryMask, IoError> {
    let img = read_image(path)?;
    if let Some(v) = img.data().iter().find(|&&v| v != 0 && v != 255) {
        return Err(IoError::Unsupported { path: path.to_path_buf(), what: format!("pixel value {v} in a binary mask") });
    }
    BinaryMask::from_fn(img.width(), img.height(), |r, c| img.get(r, c) == 255)
        .map_err(|source| IoError::Image { path: path.to_path_buf(), source })
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), IoError> {
    write_image(path, &mask.to_gray())
}

/// Image files (`.png`, `.pgm`) directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(fs_err(dir))? {
        let p = entry.map_err(fs_err(dir))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if p.is_file() && matches!(ext.as_deref(), Some("png") | Some("pgm")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Patch sets

pub const PATCH_MAGIC: &[u8; 4] = b"MGPT";
pub const PATCH_VERSION: u32 = 1;

pub fn encode_patches(p: &PatchSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + p.raw().len());
    out.extend_from_slice(PATCH_MAGIC);
    out.extend_from_slice(&PATCH_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.patch_size() as u32).to_le_bytes());
    out.extend_from_slice(&(p.len() as u32).to_le_bytes());
    out.extend_from_slice(&p.seed().to_le_bytes());
    out.extend_from_slice(p.raw());
    out
}

pub fn decode_patches(bytes: &[u8]) -> Result<Result<PatchSet, ImageError>, String> {
    if bytes.len() < 24 || &bytes[..4] != PATCH_MAGIC {
        return Err("missing MGPT header".into());
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != PATCH_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let (size, count) = (u32_at(8) as usize, u32_at(12) as usize);
    let seed = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let body = &bytes[24..];
    if body.len() != size * size * count {
        return Err(format!("expected {} pixel bytes, found {}", size * size * count, body.len()));
    }
    Ok(PatchSet::from_raw(size, count, seed, body.to_vec()))
}

pub fn read_patches(path: &Path) -> Result<PatchSet, IoError> {
    decode_patches(&read_bytes(path)?)
        .map_err(|what| malformed(path, what))?
        .map_err(|source| IoError::Image { path: path.to_path_buf(), source })
}

pub fn write_patches(path: &Path, p: &PatchSet) -> Result<(), IoError> {
    write_atomic(path, &encode_patches(p))
}

// ---------------------------------------------------------------------------
// Checkpoints

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    Checkpoint::from_bytes(&read_bytes(path)?).map_err(|source| IoError::Checkpoint { path: path.to_path_buf(), source })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), IoError> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn create_dir(dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(fs_err(dir))
}
