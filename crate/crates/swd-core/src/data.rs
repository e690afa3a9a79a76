//! Synthetic dataset generation, rigid-motion domain shifts, and
//! seeded mini-batching.

use alloc::format;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Points with class labels in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    points: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(points: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels.len() != points.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} points",
                labels.len(),
                points.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(LabeledDataset {
            points,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Extracts the rows at `indices` as a (points, labels) batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let points = take_rows(&self.points, indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((points, labels))
    }

    /// Drops the labels.
    pub fn to_unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            points: self.points.clone(),
        }
    }

    /// Applies a rigid motion to every point; labels are preserved.
    pub fn shifted(&self, shift: &ShiftSpec) -> Result<Self> {
        Ok(LabeledDataset {
            points: apply_shift_points(&self.points, shift)?,
            labels: self.labels.clone(),
            class_count: self.class_count,
        })
    }
}

/// Points without labels (the target domain during adaptation).
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    points: Tensor,
}

impl UnlabeledDataset {
    pub fn new(points: Tensor) -> Result<Self> {
        Ok(UnlabeledDataset { points })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        take_rows(&self.points, indices)
    }

    pub fn shifted(&self, shift: &ShiftSpec) -> Result<Self> {
        Ok(UnlabeledDataset {
            points: apply_shift_points(&self.points, shift)?,
        })
    }
}

fn take_rows(points: &Tensor, indices: &[usize]) -> Result<Tensor> {
    if indices.is_empty() {
        return Err(Error::Argument("batch needs at least one index".into()));
    }
    let d = points.cols();
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        if i >= points.rows() {
            return Err(Error::Index(format!(
                "row {i} out of range for {} rows",
                points.rows()
            )));
        }
        data.extend_from_slice(points.row(i));
    }
    Tensor::new(indices.len(), d, data)
}

/// Rigid-motion domain shift: rotate (2-D only) then translate.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    pub rotation_angle: f64,
    pub translation: Vec<f64>,
}

impl ShiftSpec {
    pub fn new(rotation_angle: f64, translation: Vec<f64>) -> Result<Self> {
        if !rotation_angle.is_finite() || translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("shift parameters".into()));
        }
        Ok(ShiftSpec {
            rotation_angle,
            translation,
        })
    }

    /// The inverse motion: undo translation, then rotate back.
    pub fn inverse(&self) -> ShiftSpec {
        let (s, c) = (self.rotation_angle.sin(), self.rotation_angle.cos());
        // R(−θ)·(−t)
        let t = &self.translation;
        let inv_t = if t.len() == 2 {
            alloc::vec![-(c * t[0] + s * t[1]), -(-s * t[0] + c * t[1])]
        } else {
            t.iter().map(|v| -v).collect()
        };
        ShiftSpec {
            rotation_angle: -self.rotation_angle,
            translation: inv_t,
        }
    }
}

fn apply_shift_points(points: &Tensor, shift: &ShiftSpec) -> Result<Tensor> {
    let d = points.cols();
    if shift.rotation_angle != 0.0 && d != 2 {
        return Err(Error::Argument(format!(
            "rotation is only defined for 2-D points, got d = {d}"
        )));
    }
    if shift.translation.len() != d {
        return Err(Error::Shape(format!(
            "translation of length {} for {d}-dimensional points",
            shift.translation.len()
        )));
    }
    let (s, c) = (shift.rotation_angle.sin(), shift.rotation_angle.cos());
    let mut data = Vec::with_capacity(points.len());
    for i in 0..points.rows() {
        let row = points.row(i);
        if shift.rotation_angle != 0.0 {
            let x = c * row[0] - s * row[1] + shift.translation[0];
            let y = s * row[0] + c * row[1] + shift.translation[1];
            data.push(x);
            data.push(y);
        } else {
            data.extend(row.iter().zip(&shift.translation).map(|(&v, &t)| v + t));
        }
    }
    Tensor::new(points.rows(), d, data)
}

/// Two interleaved half-moons in 2-D with `n_per_class` points each.
///
/// Class 0 points are (cos t, sin t) and class 1 points are
/// (1 − cos t, 0.5 − sin t) with t drawn uniformly at random in [0, π]
/// per point, plus isotropic Gaussian noise of the given std.
/// Deterministic per seed.
pub fn make_moons(n_per_class: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if n_per_class == 0 {
        return Err(Error::Argument("need at least one point per class".into()));
    }
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(Error::Argument(format!(
            "noise std must be non-negative, got {noise_std}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n_per_class * 2);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for class in 0..2usize {
        for _ in 0..n_per_class {
            let t = rng.random::<f64>() * core::f64::consts::PI;
            let (mut x, mut y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            x += noise_std * rng.sample::<f64, _>(StandardNormal);
            y += noise_std * rng.sample::<f64, _>(StandardNormal);
            data.push(x);
            data.push(y);
            labels.push(class);
        }
    }
    LabeledDataset::new(Tensor::new(2 * n_per_class, 2, data)?, labels, 2)
}

/// Isotropic Gaussian blob per class center. `centers[k]` is the mean
/// of class k; all centers must share a dimension.
pub fn gaussian_blobs(
    centers: &[Vec<f64>],
    std: f64,
    n_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if centers.is_empty() {
        return Err(Error::Argument("need at least one blob center".into()));
    }
    if n_per_class == 0 {
        return Err(Error::Argument("need at least one point per class".into()));
    }
    if !std.is_finite() || std < 0.0 {
        return Err(Error::Argument(format!(
            "blob std must be non-negative, got {std}"
        )));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(Error::Shape("blob centers must share a positive dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(centers.len() * n_per_class * d);
    let mut labels = Vec::with_capacity(centers.len() * n_per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &c in center {
                data.push(c + std * rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(
        Tensor::new(centers.len() * n_per_class, d, data)?,
        labels,
        centers.len(),
    )
}

/// Seeded Fisher–Yates shuffle of `0..n_items` cut into contiguous
/// slices of `batch_size` (the last may be short). The union of the
/// slices is every index exactly once.
pub fn minibatches(n_items: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_items == 0 {
        return Err(Error::Argument("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let mut indices: Vec<usize> = (0..n_items).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    indices.shuffle(&mut rng);
    Ok(indices.chunks(batch_size).map(|c| c.to_vec()).collect())
}
