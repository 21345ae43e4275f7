//! Partition-backed quadrature rules.
//!
//! Every rule here is a composite midpoint rule over a partition of an
//! interval into contiguous half-open cells `[left_k, right_k)`. The weight of
//! a node is the width of its cell, so the weights always sum to the length of
//! the covered interval and the same object doubles as the step-function basis
//! used by the discretizations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Domain;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("partition needs at least one cell")]
    NoCells,
    #[error("invalid interval [{a}, {b}]: need finite a < b")]
    InvalidInterval { a: f64, b: f64 },
    #[error("cell edges must be finite and strictly increasing (edge {index})")]
    NonMonotoneEdges { index: usize },
    #[error("point {index} ({point}) lies outside its cell [{left}, {right}]")]
    PointOutsideCell {
        index: usize,
        point: f64,
        left: f64,
        right: f64,
    },
    #[error("expected {expected} points, got {got}")]
    PointCount { expected: usize, got: usize },
    #[error("integrand is not finite at node {index} (t = {point})")]
    NonFinite { index: usize, point: f64 },
}

/// Ordered cells `[edges[k], edges[k+1])` with one node per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    edges: Vec<f64>,
    points: Vec<f64>,
    level: u32,
}

/// `N` equal cells over `[a, b]` with nodes at the midpoints.
pub fn uniform_partition(a: f64, b: f64, cells: usize) -> Result<Partition, QuadratureError> {
    Partition::uniform(a, b, cells)
}

/// Halves every cell and, on the real line, extends the covered interval to
/// the truncation half-width of the next level.
pub fn refine(partition: &Partition, domain: &Domain) -> Partition {
    partition.refine(domain)
}

/// Largest cell width.
pub fn mesh_width(partition: &Partition) -> f64 {
    partition.mesh_width()
}

impl Partition {
    pub fn uniform(a: f64, b: f64, cells: usize) -> Result<Self, QuadratureError> {
        if cells == 0 {
            return Err(QuadratureError::NoCells);
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(QuadratureError::InvalidInterval { a, b });
        }
        let n = cells as f64;
        let mut edges: Vec<f64> = (0..=cells)
            .map(|k| a + (b - a) * (k as f64) / n)
            .collect();
        edges[cells] = b;
        Ok(Self::with_midpoints(edges, 0))
    }

    /// Builds a partition from explicit edges and nodes (one node per cell).
    pub fn from_edges(edges: Vec<f64>, points: Vec<f64>, level: u32) -> Result<Self, QuadratureError> {
        if edges.len() < 2 {
            return Err(QuadratureError::NoCells);
        }
        for (i, pair) in edges.windows(2).enumerate() {
            if !(pair[0].is_finite() && pair[1].is_finite() && pair[0] < pair[1]) {
                return Err(QuadratureError::NonMonotoneEdges { index: i + 1 });
            }
        }
        let cells = edges.len() - 1;
        if points.len() != cells {
            return Err(QuadratureError::PointCount {
                expected: cells,
                got: points.len(),
            });
        }
        for (k, &t) in points.iter().enumerate() {
            let (left, right) = (edges[k], edges[k + 1]);
            if !(t >= left && t <= right) {
                return Err(QuadratureError::PointOutsideCell {
                    index: k,
                    point: t,
                    left,
                    right,
                });
            }
        }
        Ok(Self {
            edges,
            points,
            level,
        })
    }

    fn with_midpoints(edges: Vec<f64>, level: u32) -> Self {
        let points = edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
        Self {
            edges,
            points,
            level,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn with_level(mut self, level: u32) -> Self {
        self.level = level;
        self
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn cell(&self, k: usize) -> (f64, f64) {
        (self.edges[k], self.edges[k + 1])
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.edges[k + 1] - self.edges[k]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| e[1] - e[0]).collect()
    }

    /// The covered interval `[first edge, last edge]`.
    pub fn covered(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.edges.len() - 1])
    }

    pub fn covered_length(&self) -> f64 {
        let (lo, hi) = self.covered();
        hi - lo
    }

    pub fn mesh_width(&self) -> f64 {
        self.edges
            .windows(2)
            .map(|e| e[1] - e[0])
            .fold(0.0, f64::max)
    }

    /// Index of the cell containing `x`, if `x` is covered. The last cell is
    /// closed on the right.
    pub fn locate(&self, x: f64) -> Option<usize> {
        let (lo, hi) = self.covered();
        if !(x >= lo && x <= hi) {
            return None;
        }
        let idx = self.edges.partition_point(|&e| e <= x);
        Some(idx.saturating_sub(1).min(self.len() - 1))
    }

    /// `s` equally spaced interior points of cell `k` (midpoints of `s`
    /// sub-cells).
    pub fn sub_points(&self, k: usize, s: usize) -> impl Iterator<Item = f64> + '_ {
        let (left, right) = self.cell(k);
        let width = right - left;
        (0..s).map(move |j| left + width * ((j as f64) + 0.5) / (s as f64))
    }

    /// Splits cell `k` into two equal halves, nodes at the new midpoints.
    pub fn split_cell(&self, k: usize) -> Self {
        let (left, right) = self.cell(k);
        let mid = 0.5 * (left + right);
        let mut edges = self.edges.clone();
        edges.insert(k + 1, mid);
        let mut points = self.points.clone();
        points.splice(k..=k, [0.5 * (left + mid), 0.5 * (mid + right)]);
        Self {
            edges,
            points,
            level: self.level,
        }
    }

    /// Halves every cell without changing the covered interval.
    pub fn halved(&self) -> Self {
        let mut edges = Vec::with_capacity(2 * self.edges.len() - 1);
        for pair in self.edges.windows(2) {
            edges.push(pair[0]);
            edges.push(0.5 * (pair[0] + pair[1]));
        }
        edges.push(self.edges[self.edges.len() - 1]);
        Self::with_midpoints(edges, self.level + 1)
    }

    pub fn refine(&self, domain: &Domain) -> Self {
        let halved = self.halved();
        let Domain::RealLine { .. } = domain else {
            return halved;
        };
        let target = domain.half_width(halved.level);
        let (lo, hi) = halved.covered();
        let mut edges = halved.edges;

        let right_width = edges[edges.len() - 1] - edges[edges.len() - 2];
        let right_cells = ((target - hi) / right_width).ceil().max(0.0) as usize;
        for j in 1..=right_cells {
            edges.push(hi + right_width * j as f64);
        }

        let left_width = edges[1] - edges[0];
        let left_cells = ((lo + target) / left_width).ceil().max(0.0) as usize;
        if left_cells > 0 {
            let mut prefix: Vec<f64> = (1..=left_cells)
                .rev()
                .map(|j| lo - left_width * j as f64)
                .collect();
            prefix.extend_from_slice(&edges);
            edges = prefix;
        }
        Self::with_midpoints(edges, halved.level)
    }
}

/// `Q f = Σ α_k f(t_k)` over a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    partition: Partition,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(partition: Partition) -> Self {
        let weights = partition.weights();
        Self { partition, weights }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> &[f64] {
        self.partition.points()
    }

    pub fn apply<F>(&self, f: F) -> Result<f64, QuadratureError>
    where
        F: Fn(f64) -> f64,
    {
        let mut terms = Vec::with_capacity(self.weights.len());
        for (index, (&t, &a)) in self.points().iter().zip(&self.weights).enumerate() {
            let value = f(t);
            if !value.is_finite() {
                return Err(QuadratureError::NonFinite { index, point: t });
            }
            terms.push(a * value);
        }
        Ok(pairwise_sum(&terms))
    }
}

impl From<Partition> for QuadratureRule {
    fn from(partition: Partition) -> Self {
        Self::new(partition)
    }
}

/// Applies a rule to `f`.
pub fn apply<F: Fn(f64) -> f64>(rule: &QuadratureRule, f: F) -> Result<f64, QuadratureError> {
    rule.apply(f)
}

/// Pairwise (cascade) summation in ascending index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_unit_interval_four_cells() {
        let p = uniform_partition(0.0, 1.0, 4).unwrap();
        assert_eq!(p.points(), &[0.125, 0.375, 0.625, 0.875]);
        assert!(p.weights().iter().all(|&w| w == 0.25));
    }

    #[test]
    fn single_cell() {
        let p = uniform_partition(-1.0, 1.0, 1).unwrap();
        assert_eq!(p.points(), &[0.0]);
        assert_eq!(p.weights(), vec![2.0]);
    }

    #[test]
    fn zero_cells_rejected() {
        assert_eq!(uniform_partition(0.0, 1.0, 0), Err(QuadratureError::NoCells));
        assert!(matches!(
            uniform_partition(1.0, 1.0, 3),
            Err(QuadratureError::InvalidInterval { .. })
        ));
    }

    #[test]
    fn refine_halves_compact_cells() {
        let domain = Domain::compact(0.0, 1.0).unwrap();
        let p = uniform_partition(0.0, 1.0, 4).unwrap();
        let r = refine(&p, &domain);
        assert_eq!(r.len(), 8);
        assert_eq!(r.mesh_width(), 0.125);
        assert_eq!(r.level(), 1);

        let p2 = uniform_partition(0.0, 1.0, 2).unwrap();
        assert_eq!(refine(&p2, &domain).mesh_width(), 0.25);
    }

    #[test]
    fn refine_extends_real_line_coverage() {
        let domain = Domain::real_line(4.0, 4).unwrap();
        let p = uniform_partition(-4.0, 4.0, 16).unwrap();
        let r = refine(&p, &domain);
        let target = 4.0 * 2f64.sqrt();
        let (lo, hi) = r.covered();
        assert!(hi >= target && hi - target < 0.25);
        assert!(lo <= -target && -target - lo < 0.25);
        // whole cells of the new width
        assert!(r.weights().iter().all(|&w| (w - 0.25).abs() < 1e-12));
        // pre-existing coverage refined exactly in half
        let inner = r.locate(-4.0).unwrap();
        assert!((r.edges()[inner] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_refinement_halves_mesh_width() {
        let domain = Domain::compact(0.0, 1.0).unwrap();
        let mut p = uniform_partition(0.0, 1.0, 4).unwrap();
        for _ in 0..2 {
            p = refine(&p, &domain);
        }
        assert_eq!(mesh_width(&p), 0.0625);
    }

    #[test]
    fn mixed_width_partition() {
        let p = uniform_partition(0.0, 1.0, 2).unwrap().split_cell(0);
        assert_eq!(p.weights(), vec![0.25, 0.25, 0.5]);
        assert_eq!(mesh_width(&p), 0.5);
        assert_eq!(p.points(), &[0.125, 0.375, 0.75]);
    }

    #[test]
    fn apply_examples() {
        let rule = QuadratureRule::new(uniform_partition(0.0, 1.0, 4).unwrap());
        assert_eq!(rule.apply(|_| 1.0).unwrap(), 1.0);
        assert_eq!(rule.apply(|x| x).unwrap(), 0.5);
        let rule2 = QuadratureRule::new(uniform_partition(0.0, 1.0, 2).unwrap());
        assert!((rule2.apply(|x| x * x).unwrap() - 0.3125).abs() < 1e-15);
    }

    #[test]
    fn apply_reports_nan_node() {
        let rule = QuadratureRule::new(uniform_partition(0.0, 1.0, 4).unwrap());
        let err = rule
            .apply(|x| if x > 0.5 { f64::NAN } else { x })
            .unwrap_err();
        assert_eq!(err, QuadratureError::NonFinite { index: 2, point: 0.625 });
    }

    #[test]
    fn from_edges_validation() {
        assert!(Partition::from_edges(vec![0.0, 0.5, 1.0], vec![0.1, 0.9], 0).is_ok());
        assert!(matches!(
            Partition::from_edges(vec![0.0, 0.5, 0.5], vec![0.1, 0.5], 0),
            Err(QuadratureError::NonMonotoneEdges { index: 2 })
        ));
        assert!(matches!(
            Partition::from_edges(vec![0.0, 0.5, 1.0], vec![0.6, 0.9], 0),
            Err(QuadratureError::PointOutsideCell { index: 0, .. })
        ));
    }

    #[test]
    fn locate_cells() {
        let p = uniform_partition(0.0, 1.0, 4).unwrap();
        assert_eq!(p.locate(0.0), Some(0));
        assert_eq!(p.locate(0.25), Some(1));
        assert_eq!(p.locate(1.0), Some(3));
        assert_eq!(p.locate(1.5), None);
    }

    /// Reference integral by a 10^6-cell midpoint rule.
    fn reference(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let n = 1_000_000;
        let h = (b - a) / n as f64;
        let terms: Vec<f64> = (0..n).map(|k| h * f(a + h * (k as f64 + 0.5))).collect();
        pairwise_sum(&terms)
    }

    #[test]
    fn converges_on_smooth_functions() {
        let suite: Vec<(&str, Box<dyn Fn(f64) -> f64>)> = vec![
            ("exp", Box::new(f64::exp)),
            ("sin", Box::new(|x: f64| (3.0 * x).sin())),
            ("runge", Box::new(|x: f64| 1.0 / (1.0 + 25.0 * x * x))),
            ("gauss", Box::new(|x: f64| (-x * x).exp())),
        ];
        let domain = Domain::compact(-1.0, 1.0).unwrap();
        for (name, f) in &suite {
            let exact = reference(f.as_ref(), -1.0, 1.0);
            let mut p = uniform_partition(-1.0, 1.0, 2).unwrap();
            while p.mesh_width() > 1e-3 {
                p = refine(&p, &domain);
            }
            let approx = QuadratureRule::new(p).apply(f.as_ref()).unwrap();
            assert!((approx - exact).abs() < 1e-6, "{name}: {approx} vs {exact}");
        }
    }

    proptest! {
        #[test]
        fn weights_sum_to_covered_length(a in -50.0f64..50.0, len in 1e-3f64..100.0, n in 1usize..2000) {
            let p = uniform_partition(a, a + len, n).unwrap();
            let total = pairwise_sum(&p.weights());
            prop_assert!((total - p.covered_length()).abs() <= 1e-12 * len.max(1.0));
        }

        #[test]
        fn midpoint_exact_on_affine(c0 in -10.0f64..10.0, c1 in -10.0f64..10.0, n in 1usize..500) {
            let rule = QuadratureRule::new(uniform_partition(0.0, 1.0, n).unwrap());
            let got = rule.apply(|x| c0 + c1 * x).unwrap();
            prop_assert!((got - (c0 + 0.5 * c1)).abs() <= 1e-12);
        }
    }
}
