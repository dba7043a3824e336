//! Best-buddy matching between two descriptor grids.
//!
//! For every desired cell `u` the forward nearest neighbour `v` (cosine
//! similarity) is found in the current grid, then `v`'s nearest neighbour `u'`
//! back in the desired grid. The cyclical distance `D_u = -‖u − u'‖₂` (in
//! patch units) scores how consistent the round trip is; zero means a mutual
//! nearest-neighbour pair. A random subset of consistent cells becomes the
//! correspondence set fed to the controller.

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::{Cell, DescriptorGrid};

/// Below this many usable round trips no controller can be built.
pub const MIN_CORRESPONDENCES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("no eligible cells to match against")]
    NoEligibleCells,
    #[error("descriptor dimensions differ ({desired} vs {current})")]
    DimensionMismatch { desired: usize, current: usize },
    #[error("only {available} usable matches (need at least {MIN_CORRESPONDENCES})")]
    InsufficientMatches { available: usize },
    #[error("K must be at least 1")]
    InvalidK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    /// Number of correspondences per iteration.
    pub k: usize,
    /// Maximum round-trip displacement (patch units, inclusive).
    pub threshold: f64,
    /// Draw a fresh random subset every iteration instead of once per trial.
    pub resample_each_iteration: bool,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            k: 24,
            threshold: 1.0,
            resample_each_iteration: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub desired_cell: Cell,
    pub current_cell: Cell,
    pub cosine: f64,
    pub cyclical_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn mean_cosine(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().map(|p| p.cosine).sum::<f64>() / self.pairs.len() as f64
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Most similar eligible cell of `grid` to `query`; ties go to the first cell
/// in row-major order.
pub fn nearest_neighbor(query: &[f32], grid: &DescriptorGrid) -> Result<(Cell, f64), MatchError> {
    if query.len() != grid.dim() {
        return Err(MatchError::DimensionMismatch {
            desired: query.len(),
            current: grid.dim(),
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for i in 0..grid.len() {
        if !grid.eligible_mask()[i] {
            continue;
        }
        let s = cosine(query, grid.descriptor_at(i));
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, s)| (grid.cell(i), s)).ok_or(MatchError::NoEligibleCells)
}

/// Forward and backward nearest neighbours plus the cyclical distance map.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicMatches {
    pub rows: usize,
    pub cols: usize,
    /// Column count of the current grid, for indexing `backward`.
    pub current_cols: usize,
    /// Per desired cell: nearest current cell and its cosine similarity.
    pub forward: Vec<Option<(Cell, f64)>>,
    /// Per current cell: nearest desired cell.
    pub backward: Vec<Option<Cell>>,
    /// Per desired cell: `D_u`, `None` when the cell takes no part in matching.
    pub distance: Vec<Option<f64>>,
}

impl CyclicMatches {
    pub fn usable(&self) -> usize {
        self.distance.iter().filter(|d| d.is_some()).count()
    }

    /// Round-trip landing cell `u'` for desired cell index `i`.
    pub fn round_trip(&self, i: usize) -> Option<Cell> {
        let (v, _) = self.forward[i]?;
        self.backward[v.row * self.current_cols + v.col]
    }

    /// Cells whose round-trip displacement is within `threshold`.
    pub fn eligible(&self, threshold: f64) -> Vec<usize> {
        self.distance
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.filter(|d| -d <= threshold + 1e-12).map(|_| i))
            .collect()
    }
}

/// Unit-normalised descriptors as an `n × dim` matrix; ineligible rows are zero.
fn normalized_rows(grid: &DescriptorGrid) -> Array2<f32> {
    let mut m = Array2::<f32>::zeros((grid.len(), grid.dim()));
    for (i, mut row) in m.rows_mut().into_iter().enumerate() {
        if !grid.eligible_mask()[i] {
            continue;
        }
        let d = grid.descriptor_at(i);
        let norm = d.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt() as f32;
        for (dst, src) in row.iter_mut().zip(d) {
            *dst = *src / norm;
        }
    }
    m
}

pub fn cyclical_distance_map(desired: &DescriptorGrid, current: &DescriptorGrid) -> Result<CyclicMatches, MatchError> {
    if desired.dim() != current.dim() {
        return Err(MatchError::DimensionMismatch {
            desired: desired.dim(),
            current: current.dim(),
        });
    }
    let a = normalized_rows(desired);
    let b = normalized_rows(current);
    let sim = a.dot(&b.t());
    let de = desired.eligible_mask();
    let ce = current.eligible_mask();

    // Row maxima (forward) and column maxima (backward) in one row-major
    // pass; the first index wins ties in both directions.
    let mut forward: Vec<Option<(Cell, f64)>> = vec![None; desired.len()];
    let mut col_best = vec![(usize::MAX, f32::NEG_INFINITY); current.len()];
    for (i, row) in sim.rows().into_iter().enumerate() {
        if !de[i] {
            continue;
        }
        let mut best = (usize::MAX, f32::NEG_INFINITY);
        for (j, ((s, col), ok)) in row.iter().zip(col_best.iter_mut()).zip(ce).enumerate() {
            if !*ok {
                continue;
            }
            if *s > best.1 {
                best = (j, *s);
            }
            if *s > col.1 {
                *col = (i, *s);
            }
        }
        if best.0 != usize::MAX {
            forward[i] = Some((current.cell(best.0), best.1 as f64));
        }
    }
    let backward: Vec<Option<Cell>> = col_best
        .iter()
        .map(|&(i, _)| (i != usize::MAX).then(|| desired.cell(i)))
        .collect();

    let distance = (0..desired.len())
        .map(|i| {
            let (v, _) = forward[i]?;
            let back = backward[current.index(v)]?;
            Some(-desired.cell(i).distance(&back))
        })
        .collect();

    Ok(CyclicMatches {
        rows: desired.rows(),
        cols: desired.cols(),
        current_cols: current.cols(),
        forward,
        backward,
        distance,
    })
}

/// Picks `k` correspondences uniformly at random among cells whose round trip
/// lands within `threshold`. With fewer than `k` such cells, the `k` cells with
/// the best cyclical distance are used instead.
pub fn select_correspondences<R: Rng + ?Sized>(
    matches: &CyclicMatches,
    k: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<CorrespondenceSet, MatchError> {
    if k == 0 {
        return Err(MatchError::InvalidK);
    }
    let available = matches.usable();
    if available < MIN_CORRESPONDENCES {
        return Err(MatchError::InsufficientMatches { available });
    }
    let eligible = matches.eligible(threshold);
    let chosen: Vec<usize> = if eligible.len() >= k {
        let mut picked: Vec<usize> = index::sample(rng, eligible.len(), k)
            .into_iter()
            .map(|i| eligible[i])
            .collect();
        picked.sort_unstable();
        picked
    } else {
        let mut ranked: Vec<usize> = (0..matches.distance.len())
            .filter(|i| matches.distance[*i].is_some())
            .collect();
        // Stable sort keeps row-major order among equal distances.
        ranked.sort_by(|a, b| {
            let da = matches.distance[*a].unwrap();
            let db = matches.distance[*b].unwrap();
            db.partial_cmp(&da).unwrap()
        });
        ranked.truncate(k);
        ranked.sort_unstable();
        ranked
    };
    let pairs = chosen
        .into_iter()
        .map(|i| {
            let (current_cell, cosine) = matches.forward[i].expect("usable cell has a forward match");
            Correspondence {
                desired_cell: Cell::new(i / matches.cols, i % matches.cols),
                current_cell,
                cosine,
                cyclical_distance: matches.distance[i].expect("usable cell"),
            }
        })
        .collect();
    Ok(CorrespondenceSet { pairs })
}
