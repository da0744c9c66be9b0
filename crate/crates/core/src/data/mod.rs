//! Dataset ingestion (IDX, `FLT1` tensors) and synthetic generators.

mod idx;
mod synthetic;

pub use idx::{
    load_idx, load_idx_labels, read_idx_images_from, read_idx_labels_from, write_idx_images, write_idx_images_to,
    write_idx_labels_to, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use synthetic::{
    gen_constant, gen_diag_gaussian, gen_two_moons, gen_uniform_random, replicate_dims, TwoMoons, DEFAULT_MOON_NOISE,
};

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::likelihood::{dequantize, dequantize_fixed};
use crate::tensor::{read_tensor, RngState, Tensor, TENSOR_MAGIC};

/// What the values of a dataset represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    /// Integer pixels in `0..=255`.
    RawPixels,
    /// Dequantized pixels in `[0, 1)`.
    Scaled,
    /// Arbitrary real-valued features.
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub images: Tensor,
    pub labels: Option<Vec<u8>>,
    pub kind: DataKind,
}

impl ImageDataset {
    pub fn new(images: Tensor, kind: DataKind) -> Self {
        Self {
            images,
            labels: None,
            kind,
        }
    }

    /// Classifies a tensor by inspection: all integers in `0..=255` are raw
    /// pixels, values in `[0, 1)` are scaled, anything else is continuous.
    pub fn infer(images: Tensor) -> Self {
        let d = images.data();
        let kind = if d.iter().all(|v| (0.0..=255.0).contains(v) && v.fract() == 0.0) && d.iter().any(|&v| v >= 1.0) {
            DataKind::RawPixels
        } else if d.iter().all(|v| (0.0..1.0).contains(v)) {
            DataKind::Scaled
        } else {
            DataKind::Continuous
        };
        Self::new(images, kind)
    }

    pub fn len(&self) -> usize {
        self.images.n_examples()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_raw(ds: &ImageDataset) -> Result<()> {
    match ds.kind {
        DataKind::RawPixels => Ok(()),
        _ => Err(Error::AlreadyScaled),
    }
}

/// `(x + u)/256`, `u ~ U[0, 1)`: raw pixels to `[0, 1)`.
pub fn scale_pixels(ds: &ImageDataset, rng: &mut RngState) -> Result<ImageDataset> {
    check_raw(ds)?;
    Ok(ImageDataset {
        images: dequantize(&ds.images, rng)?,
        labels: ds.labels.clone(),
        kind: DataKind::Scaled,
    })
}

/// As [`scale_pixels`] with noise fixed per example index, for evaluation.
pub fn scale_pixels_fixed(ds: &ImageDataset, seed: u64) -> Result<ImageDataset> {
    check_raw(ds)?;
    Ok(ImageDataset {
        images: dequantize_fixed(&ds.images, seed)?,
        labels: ds.labels.clone(),
        kind: DataKind::Scaled,
    })
}

/// 2×2 mean pooling of an `N×H×W×C` tensor; raw pixels are rounded back to integers.
pub fn downsample2x(ds: &ImageDataset) -> Result<ImageDataset> {
    let [n, h, w, c] = *ds.images.shape() else {
        return Err(crate::error::shape_mismatch("[N, H, W, C]", ds.images.shape()));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidConfig(format!("cannot downsample {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = ds.images.data();
    let mut out = vec![0.0; n * oh * ow * c];
    for i in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    let at = |yy: usize, xx: usize| src[((i * h + yy) * w + xx) * c + ch];
                    let mean = 0.25
                        * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1));
                    out[((i * oh + y) * ow + x) * c + ch] = if ds.kind == DataKind::RawPixels {
                        mean.round()
                    } else {
                        mean
                    };
                }
            }
        }
    }
    Ok(ImageDataset {
        images: Tensor::new(vec![n, oh, ow, c], out)?,
        labels: ds.labels.clone(),
        kind: ds.kind,
    })
}

/// Load an IDX image file or an `FLT1` tensor, chosen by the leading magic bytes.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<ImageDataset> {
    let path = path.as_ref();
    let mut magic = [0u8; 4];
    std::fs::File::open(path)?
        .read_exact(&mut magic)
        .map_err(|_| Error::TruncatedFile(path.display().to_string()))?;
    if magic == TENSOR_MAGIC {
        Ok(ImageDataset::infer(read_tensor(path)?))
    } else if u32::from_be_bytes(magic) == IDX_IMAGES_MAGIC {
        load_idx(path)
    } else {
        Err(Error::BadMagic {
            found: u32::from_be_bytes(magic),
            expected: u32::from_be_bytes(TENSOR_MAGIC),
        })
    }
}

/// CSV with columns `x0, x1, …` for an `N×D` tensor.
pub fn write_points_csv_to<W: Write>(w: W, points: &Tensor) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let d = points.example_len();
    out.write_record((0..d).map(|j| format!("x{j}")))?;
    for ex in points.examples() {
        out.write_record(ex.iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_points_csv(path: impl AsRef<Path>, points: &Tensor) -> Result<()> {
    write_points_csv_to(std::fs::File::create(path)?, points)
}
