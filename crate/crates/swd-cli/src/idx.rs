//! Big-endian IDX image/label files (the MNIST container format).
//!
//! Images: magic 0x00000803, then count/rows/cols as u32, then one
//! unsigned byte per pixel, row-major. Labels: magic 0x00000801, then
//! count, then one byte per label. Pixels are scaled to [0, 1].

use std::fmt;
use std::path::Path;

use swd_core::{LabeledDataset, Tensor};

/// Parse failures, one variant per distinct malformation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxError {
    WrongMagic { expected: u32, got: u32 },
    Truncated { needed: usize, available: usize },
    CountMismatch { images: usize, labels: usize },
    Io(String),
}

impl fmt::Display for IdxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdxError::WrongMagic { expected, got } => {
                write!(f, "wrong magic: expected {expected:#010x}, got {got:#010x}")
            }
            IdxError::Truncated { needed, available } => {
                write!(f, "truncated payload: need {needed} bytes, have {available}")
            }
            IdxError::CountMismatch { images, labels } => {
                write!(f, "{images} images but {labels} labels")
            }
            IdxError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for IdxError {}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(IdxError::Truncated {
            needed: end,
            available: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parsed image payload: flattened rows, pixel values in [0, 1].
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// count × (rows·cols) values, row-major.
    pub pixels: Vec<f64>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, IdxError> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(IdxError::WrongMagic {
            expected: IMAGE_MAGIC,
            got: magic,
        });
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let pixels = bytes[16..needed].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, IdxError> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(IdxError::WrongMagic {
            expected: LABEL_MAGIC,
            got: magic,
        });
    }
    let count = read_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok(bytes[8..needed].iter().map(|&b| b as usize).collect())
}

/// Loads an images/labels file pair into a flattened dataset.
///
/// The class count is max(label) + 1, so subsampled files keep the
/// label-range invariant.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, IdxError> {
    let image_bytes = std::fs::read(images_path).map_err(|e| IdxError::Io(e.to_string()))?;
    let label_bytes = std::fs::read(labels_path).map_err(|e| IdxError::Io(e.to_string()))?;
    let images = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if images.count != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let class_count = labels.iter().max().map_or(1, |&m| m + 1);
    let points = Tensor::new(images.count, images.rows * images.cols, images.pixels)
        .map_err(|e| IdxError::Io(e.to_string()))?;
    LabeledDataset::new(points, labels, class_count).map_err(|e| IdxError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_fixture() -> Vec<u8> {
        // magic 0x803, count 1, rows 1, cols 1, one pixel = 255.
        let mut bytes = Vec::new();
        bytes.extend(IMAGE_MAGIC.to_be_bytes());
        bytes.extend(1u32.to_be_bytes());
        bytes.extend(1u32.to_be_bytes());
        bytes.extend(1u32.to_be_bytes());
        bytes.push(255);
        bytes
    }

    fn label_fixture() -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend(LABEL_MAGIC.to_be_bytes());
        bytes.extend(1u32.to_be_bytes());
        bytes.push(7);
        bytes
    }

    #[test]
    fn parses_single_pixel_image() {
        let images = parse_idx_images(&image_fixture()).unwrap();
        assert_eq!((images.count, images.rows, images.cols), (1, 1, 1));
        assert_eq!(images.pixels, vec![1.0]);
    }

    #[test]
    fn parses_single_label() {
        assert_eq!(parse_idx_labels(&label_fixture()).unwrap(), vec![7]);
    }

    #[test]
    fn label_magic_in_image_slot_is_wrong_magic() {
        let mut bytes = image_fixture();
        bytes[..4].copy_from_slice(&LABEL_MAGIC.to_be_bytes());
        assert_eq!(
            parse_idx_images(&bytes),
            Err(IdxError::WrongMagic {
                expected: IMAGE_MAGIC,
                got: LABEL_MAGIC,
            })
        );
    }

    #[test]
    fn truncated_payload_is_detected() {
        let mut bytes = image_fixture();
        bytes.pop();
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(IdxError::Truncated { .. })
        ));
        assert!(matches!(
            parse_idx_images(&bytes[..7]),
            Err(IdxError::Truncated { .. })
        ));
    }
}
