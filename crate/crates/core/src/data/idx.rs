//! IDX reader/writer for unsigned-byte image and label files:
//! big-endian `u32` magic (`0x00000803` images, `0x00000801` labels),
//! one big-endian `u32` per dimension, then the raw bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataKind, ImageDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::TruncatedFile(what.to_string())
        } else {
            Error::Io(e)
        }
    })
}

fn read_be_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_be_bytes(b))
}

fn read_header<R: Read>(r: &mut R, expected: u32) -> Result<Vec<usize>> {
    let magic = read_be_u32(r, "idx magic")?;
    if magic != expected {
        return Err(Error::BadMagic { found: magic, expected });
    }
    let ndim = (magic & 0xff) as usize;
    (0..ndim)
        .map(|_| read_be_u32(r, "idx dimensions").map(|d| d as usize))
        .collect()
}

fn read_payload<R: Read>(r: &mut R, dims: &[usize]) -> Result<Vec<u8>> {
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::OutOfRange("idx dimensions overflow".into()))?;
    let mut bytes = vec![0u8; n];
    read_exact(r, &mut bytes, "idx payload")?;
    Ok(bytes)
}

pub fn read_idx_images_from<R: Read>(r: &mut R) -> Result<ImageDataset> {
    let dims = read_header(r, IDX_IMAGES_MAGIC)?;
    let bytes = read_payload(r, &dims)?;
    let images = Tensor::new(
        vec![dims[0], dims[1], dims[2], 1],
        bytes.into_iter().map(f64::from).collect(),
    )?;
    Ok(ImageDataset {
        images,
        labels: None,
        kind: DataKind::RawPixels,
    })
}

pub fn read_idx_labels_from<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let dims = read_header(r, IDX_LABELS_MAGIC)?;
    read_payload(r, &dims)
}

/// Load an IDX image file as an `N×H×W×1` raw-pixel dataset.
pub fn load_idx(path: impl AsRef<Path>) -> Result<ImageDataset> {
    read_idx_images_from(&mut BufReader::new(File::open(path)?))
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    read_idx_labels_from(&mut BufReader::new(File::open(path)?))
}

/// Serialize a single-channel raw-pixel dataset back to IDX.
pub fn write_idx_images_to<W: Write>(w: &mut W, ds: &ImageDataset) -> Result<()> {
    let [n, h, wd, 1] = *ds.images.shape() else {
        return Err(crate::error::shape_mismatch("[N, H, W, 1]", ds.images.shape()));
    };
    if ds.kind != DataKind::RawPixels {
        return Err(Error::AlreadyScaled);
    }
    w.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    for d in [n, h, wd] {
        w.write_all(&(d as u32).to_be_bytes())?;
    }
    let bytes: Vec<u8> = ds.images.data().iter().map(|&v| v as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_idx_images(path: impl AsRef<Path>, ds: &ImageDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_idx_images_to(&mut w, ds)?;
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels_to<W: Write>(w: &mut W, labels: &[u8]) -> Result<()> {
    w.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    Ok(())
}
