use std::path::Path;

use super::Dataset;
use crate::{Error, Result};

/// Magic of an unsigned-byte rank-3 array (`N × rows × cols` images).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Magic of an unsigned-byte rank-1 array (labels).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// An unsigned-byte IDX array: big-endian `u32` dimensions followed by raw bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        0x0000_0800 | self.dims.len() as u32
    }
}

/// Parses an unsigned-byte IDX file.
pub fn read_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Data(format!(
            "truncated IDX header: expected at least 4 bytes, got {}",
            bytes.len()
        )));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(Error::Data(format!(
            "bad IDX magic {:02x}{:02x}{:02x}{:02x}: only unsigned-byte arrays are supported",
            bytes[0], bytes[1], bytes[2], bytes[3]
        )));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Data(format!(
            "truncated IDX header: expected {header} bytes, got {}",
            bytes.len()
        )));
    }
    let dims: Vec<u32> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let body: usize = dims.iter().map(|&d| d as usize).product();
    let expected = header + body;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "truncated IDX file: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn write_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&array.magic().to_be_bytes());
    for d in &array.dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Raw image/label arrays as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxPair {
    pub images: IdxArray,
    pub labels: IdxArray,
}

impl IdxPair {
    /// Reads and validates both files without converting pixels.
    pub fn read(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let images = read_idx(&read_file(images_path)?)?;
        let labels = read_idx(&read_file(labels_path)?)?;
        check_pair(&images, &labels, images_path, labels_path)?;
        Ok(Self { images, labels })
    }

    pub fn write(&self, images_path: &Path, labels_path: &Path) -> Result<()> {
        std::fs::write(images_path, write_idx(&self.images)).map_err(|e| Error::io(images_path, e))?;
        std::fs::write(labels_path, write_idx(&self.labels)).map_err(|e| Error::io(labels_path, e))
    }

    /// Pixels scaled to `[0, 1]` and standardized over the whole set.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let (h, w) = (self.images.dims[1] as usize, self.images.dims[2] as usize);
        let labels: Vec<usize> = self.labels.data.iter().map(|&b| b as usize).collect();
        let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        let pixels = self.images.data.iter().map(|&b| b as f64 / 255.0).collect();
        let mut ds = Dataset::new(pixels, (1, h, w), labels, classes)?;
        ds.normalize();
        Ok(ds)
    }
}

/// Loads an image/label IDX pair as a single-channel standardized dataset.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    IdxPair::read(images_path, labels_path)?.to_dataset()
}

fn check_pair(images: &IdxArray, labels: &IdxArray, images_path: &Path, labels_path: &Path) -> Result<()> {
    if images.magic() != IDX_IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "{}: magic {:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            images_path.display(),
            images.magic()
        )));
    }
    if labels.magic() != IDX_LABELS_MAGIC {
        return Err(Error::Data(format!(
            "{}: magic {:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            labels_path.display(),
            labels.magic()
        )));
    }
    if labels.dims[0] != images.dims[0] {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            images.dims[0], labels.dims[0]
        )));
    }
    Ok(())
}
