use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use atomsim::io::{read_image, ImageFormat};
use atomsim::{ImageU16, ScalarField2D};

/// Image files of a directory in name order. Without `format`, every file
/// with a known image extension is taken.
pub fn image_files(dir: &Path, format: Option<ImageFormat>) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.with_context(|| format!("cannot read {}", dir.display()))?.path();
        match (ImageFormat::from_path(&path), format) {
            (Some(found), Some(wanted)) if found == wanted => files.push(path),
            (Some(_), None) => files.push(path),
            _ => {}
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no image files in {}", dir.display());
    }
    Ok(files)
}

/// Loads every image of a directory, in name order.
pub fn load_image_dir(dir: &Path, format: Option<ImageFormat>) -> Result<Vec<ImageU16>> {
    image_files(dir, format)?
        .par_iter()
        .map(|path| read_image(path, format).map_err(Into::into))
        .collect()
}

/// Pixel-wise mean of equally sized images.
pub fn mean_image(images: &[ImageU16]) -> Result<ScalarField2D> {
    let Some(first) = images.first() else {
        bail!("no images to average");
    };
    let (w, h) = (first.width(), first.height());
    let mut mean = ScalarField2D::zeros(w, h);
    for img in images {
        if (img.width(), img.height()) != (w, h) {
            bail!("images differ in size: {w}×{h} and {}×{}", img.width(), img.height());
        }
        for (m, v) in mean.as_mut_slice().iter_mut().zip(img.as_slice()) {
            *m += f64::from(*v);
        }
    }
    mean.scale(1.0 / images.len() as f64);
    Ok(mean)
}
