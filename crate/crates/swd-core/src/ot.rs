//! Sliced Wasserstein discrepancy and exact optimal-transport oracles.
//!
//! The discrepancy between two equal-size uniform discrete measures is
//! the sum, over M random unit directions, of the closed-form 1-D
//! Wasserstein cost between their projections: project, sort both
//! sides, pair ranks, sum the per-pair ground cost. [`swd_node`] builds
//! that computation from tape primitives, so `backward()` yields exact
//! gradients with the sort permutations held constant.
//!
//! [`emd_exact`] enumerates all assignments (factorial, N ≤ 8) and is
//! the validation oracle for the sorting shortcut.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{sort_permutation, NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Per-slice ground cost on the real line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostKind {
    /// c(a, b) = (a − b)²  (the default).
    #[default]
    Quadratic,
    /// c(a, b) = |a − b|.
    Absolute,
}

impl CostKind {
    pub fn eval(self, a: f64, b: f64) -> f64 {
        let d = a - b;
        match self {
            CostKind::Quadratic => d * d,
            CostKind::Absolute => d.abs(),
        }
    }
}

/// Ground cost on R^d for the exact EMD oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundCost {
    SquaredEuclidean,
    Euclidean,
}

impl GroundCost {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
        match self {
            GroundCost::SquaredEuclidean => sq,
            GroundCost::Euclidean => sq.sqrt(),
        }
    }
}

/// N points in R^d carrying uniform weights 1/N.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Tensor,
}

impl DiscreteMeasure {
    pub fn new(points: Tensor) -> Result<Self> {
        // Tensor construction already guarantees N ≥ 1 and finiteness.
        Ok(DiscreteMeasure { points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(DiscreteMeasure {
            points: Tensor::from_rows(rows)?,
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

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }
}

/// M unit-norm directions in R^d plus the seed that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    directions: Tensor,
    seed: u64,
}

impl ProjectionSet {
    pub fn len(&self) -> usize {
        self.directions.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.directions.cols()
    }

    pub fn directions(&self) -> &Tensor {
        &self.directions
    }

    pub fn direction(&self, m: usize) -> &[f64] {
        self.directions.row(m)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Samples `count` directions uniformly on the unit sphere in R^dim by
/// normalizing standard-normal draws. Rows whose pre-normalization norm
/// falls below 1e-12 are redrawn. Deterministic per seed.
pub fn sample_projections(count: usize, dim: usize, seed: u64) -> Result<ProjectionSet> {
    if count == 0 || dim == 0 {
        return Err(Error::Argument(format!(
            "need at least one projection of dimension one, got {count} x {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(count * dim);
    for _ in 0..count {
        loop {
            let draw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = draw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm >= 1e-12 {
                data.extend(draw.iter().map(|v| v / norm));
                break;
            }
        }
    }
    Ok(ProjectionSet {
        directions: Tensor::new(count, dim, data)?,
        seed,
    })
}

/// Projects every support point onto every direction:
/// `out[m][i] = ⟨direction_m, point_i⟩` (an M×N matrix).
pub fn project(measure: &DiscreteMeasure, dirs: &ProjectionSet) -> Result<Tensor> {
    if measure.dim() != dirs.dim() {
        return Err(Error::Shape(format!(
            "measure dimension {} does not match projection dimension {}",
            measure.dim(),
            dirs.dim()
        )));
    }
    let m = dirs.len();
    let n = measure.len();
    let mut data = vec![0.0; m * n];
    for mi in 0..m {
        let dir = dirs.direction(mi);
        for i in 0..n {
            data[mi * n + i] = dot(dir, measure.point(i));
        }
    }
    Tensor::new(m, n, data)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Differentiable projection of an N×d points node onto a fixed set of
/// directions, as an M×N node. Gradients flow into the points.
pub fn project_node(tape: &mut Tape, points: NodeId, dirs: &ProjectionSet) -> Result<NodeId> {
    if tape.value(points).cols() != dirs.dim() {
        return Err(Error::Shape(format!(
            "points dimension {} does not match projection dimension {}",
            tape.value(points).cols(),
            dirs.dim()
        )));
    }
    let dir_node = tape.leaf(dirs.directions.clone());
    let points_t = tape.transpose(points)?;
    tape.matmul(dir_node, points_t)
}

/// Closed-form 1-D Wasserstein cost between two equal-length samples:
/// sort both sides (stable) and sum the per-rank ground cost. The
/// sorted pairing is the optimal coupling on the line.
pub fn wasserstein_1d(u: &[f64], v: &[f64], cost: CostKind) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "length mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("wasserstein_1d input".into()));
    }
    let pu = sort_permutation(u)?;
    let pv = sort_permutation(v)?;
    Ok(pu
        .iter()
        .zip(&pv)
        .map(|(&i, &j)| cost.eval(u[i], v[j]))
        .sum())
}

/// Sliced Wasserstein discrepancy between two staged point nodes, built
/// entirely from tape primitives.
///
/// Raw double sum over directions and sorted ranks — no normalization
/// by M or N; callers that want a per-slice mean divide by M when
/// reporting. The reduction runs in ascending direction order, so the
/// value is bitwise deterministic.
pub fn swd_node(
    tape: &mut Tape,
    p1: NodeId,
    p2: NodeId,
    dirs: &ProjectionSet,
    cost: CostKind,
) -> Result<NodeId> {
    let (n1, d1) = tape.value(p1).shape();
    let (n2, d2) = tape.value(p2).shape();
    if (n1, d1) != (n2, d2) {
        return Err(Error::Shape(format!(
            "measures must share N and d, got {n1}x{d1} and {n2}x{d2}"
        )));
    }
    if d1 != dirs.dim() {
        return Err(Error::Shape(format!(
            "measure dimension {d1} does not match projection dimension {}",
            dirs.dim()
        )));
    }
    let proj1 = project_node(tape, p1, dirs)?;
    let proj2 = project_node(tape, p2, dirs)?;
    let mut total: Option<NodeId> = None;
    for m in 0..dirs.len() {
        let u = tape.row_slice(proj1, m)?;
        let v = tape.row_slice(proj2, m)?;
        let pu = tape.sort_permutation(u)?;
        let pv = tape.sort_permutation(v)?;
        let us = tape.gather(u, &pu)?;
        let vs = tape.gather(v, &pv)?;
        let diff = tape.sub(us, vs)?;
        let term = match cost {
            CostKind::Quadratic => {
                let sq = tape.mul(diff, diff)?;
                tape.sum_all(sq)?
            }
            CostKind::Absolute => {
                let a = tape.abs(diff)?;
                tape.sum_all(a)?
            }
        };
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(total.expect("at least one projection"))
}

/// Value-level sliced Wasserstein discrepancy. Evaluates through the
/// same tape primitives as the differentiable path.
pub fn swd(
    p1: &DiscreteMeasure,
    p2: &DiscreteMeasure,
    dirs: &ProjectionSet,
    cost: CostKind,
) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.leaf(p1.points.clone());
    let b = tape.leaf(p2.points.clone());
    let out = swd_node(&mut tape, a, b, dirs, cost)?;
    tape.scalar(out)
}

/// An assignment between two equal-size uniform measures and its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    /// `assignment[i] = j` sends source point i to target point j.
    pub assignment: Vec<usize>,
    pub cost: f64,
}

/// Exact earth mover's distance by exhaustive minimization over all N!
/// assignments. Ties are broken by the lexicographically smallest
/// assignment. Validation oracle only: N ≤ 8.
pub fn emd_exact(
    p1: &DiscreteMeasure,
    p2: &DiscreteMeasure,
    ground: GroundCost,
) -> Result<Coupling> {
    if p1.len() != p2.len() || p1.dim() != p2.dim() {
        return Err(Error::Shape(format!(
            "measures must share N and d, got {}x{} and {}x{}",
            p1.len(),
            p1.dim(),
            p2.len(),
            p2.dim()
        )));
    }
    let n = p1.len();
    if n > 8 {
        return Err(Error::TooLarge(format!(
            "exhaustive EMD enumerates N! assignments; N = {n} > 8"
        )));
    }
    let mut pairwise = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            pairwise[i * n + j] = ground.eval(p1.point(i), p2.point(j));
        }
    }

    // Depth-first over assignments in lexicographic order; strict
    // improvement keeps the first (lexicographically smallest) optimum.
    let mut best_cost = f64::INFINITY;
    let mut best: Vec<usize> = Vec::new();
    let mut current = vec![0usize; n];
    let mut used = vec![false; n];
    fn search(
        i: usize,
        n: usize,
        cost_so_far: f64,
        pairwise: &[f64],
        used: &mut [bool],
        current: &mut [usize],
        best_cost: &mut f64,
        best: &mut Vec<usize>,
    ) {
        if cost_so_far >= *best_cost {
            return;
        }
        if i == n {
            *best_cost = cost_so_far;
            best.clear();
            best.extend_from_slice(current);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                current[i] = j;
                search(
                    i + 1,
                    n,
                    cost_so_far + pairwise[i * n + j],
                    pairwise,
                    used,
                    current,
                    best_cost,
                    best,
                );
                used[j] = false;
            }
        }
    }
    search(
        0,
        n,
        0.0,
        &pairwise,
        &mut used,
        &mut current,
        &mut best_cost,
        &mut best,
    );
    Ok(Coupling {
        assignment: best,
        cost: best_cost,
    })
}

/// For equal-size uniform discrete measures a transport map (a
/// point-to-point assignment with no mass splitting) always exists:
/// any bijection pushes one measure onto the other, so the map-based
/// transport problem is feasible and the plan-based relaxation — which
/// exists to handle mass splitting, e.g. pushing a single spike onto a
/// spread-out measure — is only *needed* for unequal sizes or
/// non-uniform weights, which this crate does not support.
///
/// Errors on unequal sample counts (precondition violation).
pub fn monge_map_exists_check(p1: &DiscreteMeasure, p2: &DiscreteMeasure) -> Result<bool> {
    if p1.len() != p2.len() {
        return Err(Error::Argument(format!(
            "uniform transport-map check needs equal sample counts, got {} and {}",
            p1.len(),
            p2.len()
        )));
    }
    Ok(true)
}
