//! Image and ground-truth files.
//!
//! Images are written either as 16-bit binary PGM (big-endian samples) or
//! as a raw little-endian dump behind an 8-byte header holding the width
//! and height as little-endian `u32`. Ground truth is a JSON document with
//! sorted keys.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cameras::ImageU16;
use crate::experiment::{GroundTruth, SiteTruth};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {format} data: {reason}")]
    Malformed { format: &'static str, reason: String },
    #[error("malformed ground truth: {0}")]
    Json(#[from] serde_json::Error),
}

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm16,
    Raw,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm16 => "pgm",
            ImageFormat::Raw => "raw",
        }
    }

    fn label(self) -> &'static str {
        match self {
            ImageFormat::Pgm16 => "pgm16",
            ImageFormat::Raw => "raw",
        }
    }

    /// Format implied by a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "pgm" => Some(ImageFormat::Pgm16),
            "raw" => Some(ImageFormat::Raw),
            _ => None,
        }
    }
}

impl std::str::FromStr for ImageFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pgm16" => Ok(ImageFormat::Pgm16),
            "raw" => Ok(ImageFormat::Raw),
            other => Err(format!("unknown image format `{other}`; expected `pgm16` or `raw`")),
        }
    }
}

pub fn encode_image(img: &ImageU16, format: ImageFormat) -> Vec<u8> {
    let samples = img.as_slice();
    match format {
        ImageFormat::Pgm16 => {
            let header = format!("P5\n{} {}\n65535\n", img.width(), img.height());
            let mut out = Vec::with_capacity(header.len() + 2 * samples.len());
            out.extend_from_slice(header.as_bytes());
            for v in samples {
                out.extend_from_slice(&v.to_be_bytes());
            }
            out
        }
        ImageFormat::Raw => {
            let mut out = Vec::with_capacity(8 + 2 * samples.len());
            out.extend_from_slice(&(img.width() as u32).to_le_bytes());
            out.extend_from_slice(&(img.height() as u32).to_le_bytes());
            for v in samples {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out
        }
    }
}

pub fn decode_image(bytes: &[u8], format: ImageFormat) -> Result<ImageU16, IoError> {
    let malformed = |reason: &str| IoError::Malformed {
        format: format.label(),
        reason: reason.to_string(),
    };
    let (width, height, body, big_endian) = match format {
        ImageFormat::Raw => {
            if bytes.len() < 8 {
                return Err(malformed("shorter than the 8-byte header"));
            }
            let w = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
            let h = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
            (w, h, &bytes[8..], false)
        }
        ImageFormat::Pgm16 => {
            let (fields, offset) = pgm_header(bytes).ok_or_else(|| malformed("bad header"))?;
            if fields[2] != 65535 {
                return Err(malformed("maxval must be 65535"));
            }
            (fields[0], fields[1], &bytes[offset..], true)
        }
    };
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| malformed("dimensions overflow"))?;
    if body.len() != expected {
        return Err(malformed(&format!("expected {expected} sample bytes, found {}", body.len())));
    }
    let data = body
        .chunks_exact(2)
        .map(|b| {
            let pair = [b[0], b[1]];
            if big_endian {
                u16::from_be_bytes(pair)
            } else {
                u16::from_le_bytes(pair)
            }
        })
        .collect();
    Ok(ImageU16::from_vec(width, height, data))
}

/// Parses `P5 <w> <h> <maxval>` and the single whitespace byte after it,
/// skipping `#` comments. Returns the three numbers and the body offset.
fn pgm_header(bytes: &[u8]) -> Option<([usize; 3], usize)> {
    if bytes.get(0..2)? != b"P5" {
        return None;
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match *bytes.get(pos)? {
                b'#' => {
                    while *bytes.get(pos)? != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos)?.is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos]).ok()?.parse().ok()?;
    }
    if !bytes.get(pos)?.is_ascii_whitespace() {
        return None;
    }
    Some((fields, pos + 1))
}

pub fn write_image(img: &ImageU16, path: impl AsRef<Path>, format: ImageFormat) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(file_error(path))?;
    file.write_all(&encode_image(img, format)).map_err(file_error(path))
}

/// Reads an image; the format defaults to the one implied by the extension.
pub fn read_image(path: impl AsRef<Path>, format: Option<ImageFormat>) -> Result<ImageU16, IoError> {
    let path = path.as_ref();
    let format = format.or_else(|| ImageFormat::from_path(path)).ok_or_else(|| IoError::Malformed {
        format: "image",
        reason: format!("cannot tell the format of {}", path.display()),
    })?;
    let bytes = std::fs::read(path).map_err(file_error(path))?;
    decode_image(&bytes, format)
}

/// Ground truth of one frame as written next to its image. Fields are
/// declared in alphabetical order so the JSON keys come out sorted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameTruth {
    pub frame_index: u64,
    pub seed: u64,
    pub sites: Vec<SiteTruth>,
}

impl FrameTruth {
    pub fn new(truth: GroundTruth, seed: u64, frame_index: u64) -> Self {
        Self {
            frame_index,
            seed,
            sites: truth.sites,
        }
    }

    /// Compact JSON followed by a newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("ground truth always serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn write_ground_truth(truth: &FrameTruth, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    std::fs::write(path, truth.to_json()).map_err(file_error(path))
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<FrameTruth, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(file_error(path))?;
    FrameTruth::from_json(&text)
}
