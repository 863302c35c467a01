//! Cubelet discretization of orientation space, accuracy cubes and their
//! 2D projections.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{EvaluationRecord, Seen};
use crate::rotation::Orientation;

const RANGE_LO: [f64; 3] = [-PI, -FRAC_PI_2, -PI];
const RANGE_SPAN: [f64; 3] = [TAU, PI, TAU];

/// Cubelet counts per Euler axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_alpha: usize,
    pub n_beta: usize,
    pub n_gamma: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_alpha: 16,
            n_beta: 8,
            n_gamma: 16,
        }
    }
}

impl GridSpec {
    pub fn new(n_alpha: usize, n_beta: usize, n_gamma: usize) -> Result<Self> {
        let grid = GridSpec {
            n_alpha,
            n_beta,
            n_gamma,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_alpha == 0 || self.n_beta == 0 || self.n_gamma == 0 {
            return Err(Error::invalid(format!(
                "grid counts must be >= 1, got {}x{}x{}",
                self.n_alpha, self.n_beta, self.n_gamma
            )));
        }
        Ok(())
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.n_alpha, self.n_beta, self.n_gamma]
    }

    pub fn n_cells(&self) -> usize {
        self.n_alpha * self.n_beta * self.n_gamma
    }

    pub fn widths(&self) -> [f64; 3] {
        let n = self.counts();
        [0, 1, 2].map(|a| RANGE_SPAN[a] / n[a] as f64)
    }

    pub fn flat(&self, (i, j, k): (usize, usize, usize)) -> usize {
        (i * self.n_beta + j) * self.n_gamma + k
    }

    pub fn unflat(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.n_gamma;
        let j = (idx / self.n_gamma) % self.n_beta;
        let i = idx / (self.n_gamma * self.n_beta);
        (i, j, k)
    }

    /// Cubelet containing `theta`. Values at the exact upper bound land in the
    /// last cubelet.
    pub fn cubelet_index(&self, theta: &Orientation) -> (usize, usize, usize) {
        let v = theta.as_array();
        let n = self.counts();
        let idx = [0, 1, 2].map(|a| {
            let t = (v[a] - RANGE_LO[a]) / RANGE_SPAN[a] * n[a] as f64;
            (t.floor().max(0.0) as usize).min(n[a] - 1)
        });
        (idx[0], idx[1], idx[2])
    }

    pub fn cubelet_center(&self, (i, j, k): (usize, usize, usize)) -> Orientation {
        let w = self.widths();
        let c = [i, j, k];
        let v = [0, 1, 2].map(|a| RANGE_LO[a] + (c[a] as f64 + 0.5) * w[a]);
        Orientation::new(v[0], v[1], v[2]).expect("cubelet centers are finite")
    }

    /// Lower corner of a cubelet in raw radians.
    pub fn cubelet_lower(&self, (i, j, k): (usize, usize, usize)) -> [f64; 3] {
        let w = self.widths();
        let c = [i, j, k];
        [0, 1, 2].map(|a| RANGE_LO[a] + c[a] as f64 * w[a])
    }

    pub fn centers(&self) -> Vec<Orientation> {
        (0..self.n_cells())
            .map(|idx| self.cubelet_center(self.unflat(idx)))
            .collect()
    }
}

/// Axis-aligned box of Euler angles, inclusive bounds in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedBox {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub gamma: [f64; 2],
}

impl SeedBox {
    pub fn axes(&self) -> [[f64; 2]; 3] {
        [self.alpha, self.beta, self.gamma]
    }

    pub fn contains(&self, theta: &Orientation) -> bool {
        let v = theta.as_array();
        self.axes().iter().zip(v).all(|(b, x)| x >= b[0] && x <= b[1])
    }

    /// Box volume as a fraction of the whole orientation cube.
    pub fn volume_fraction(&self) -> f64 {
        self.axes()
            .iter()
            .zip(RANGE_SPAN)
            .map(|(b, span)| (b[1] - b[0]) / span)
            .product()
    }

    fn failures(&self, label: &str) -> Vec<String> {
        let mut out = Vec::new();
        let names = ["alpha", "beta", "gamma"];
        for (a, b) in self.axes().iter().enumerate() {
            let (lo, hi) = (b[0], b[1]);
            if !(lo.is_finite() && hi.is_finite()) {
                out.push(format!("{label}: {} bounds must be finite", names[a]));
                continue;
            }
            if lo > hi {
                out.push(format!(
                    "{label}: {} lower bound {lo} exceeds upper bound {hi}",
                    names[a]
                ));
            }
            let (min, max) = (RANGE_LO[a], RANGE_LO[a] + RANGE_SPAN[a]);
            if lo < min || hi > max {
                out.push(format!(
                    "{label}: {} range [{lo}, {hi}] outside [{min}, {max}]",
                    names[a]
                ));
            }
        }
        out
    }
}

/// In-distribution orientations of the partially-seen instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRegion {
    pub boxes: Vec<SeedBox>,
    #[serde(default = "default_density")]
    pub sample_density: [usize; 3],
}

fn default_density() -> [usize; 3] {
    [5, 5, 5]
}

impl SeedRegion {
    pub fn new(boxes: Vec<SeedBox>) -> Self {
        SeedRegion {
            boxes,
            sample_density: default_density(),
        }
    }

    /// The seed box used for the central-pose experiments:
    /// `-0.25 <= alpha <= 0.1`, `-0.1 <= beta <= 0.25`, all of gamma.
    pub fn central_band() -> Self {
        SeedRegion::new(vec![SeedBox {
            alpha: [-0.25, 0.1],
            beta: [-0.1, 0.25],
            gamma: [-PI, PI],
        }])
    }

    /// Every problem with the region, not just the first.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.boxes.is_empty() {
            out.push("seed region has no boxes".to_string());
        }
        for (n, b) in self.boxes.iter().enumerate() {
            out.extend(b.failures(&format!("seed box {n}")));
        }
        for (a, d) in self.sample_density.iter().enumerate() {
            if d % 2 == 0 {
                out.push(format!("sample_density[{a}] must be odd, got {d}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let failures = self.failures();
        if failures.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(failures.join("; ")))
        }
    }

    pub fn contains(&self, theta: &Orientation) -> bool {
        self.boxes.iter().any(|b| b.contains(theta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    InD,
    OoD,
}

/// A cubelet is in-distribution iff its center lies in some seed box.
pub fn mark_regions(grid: &GridSpec, seed: &SeedRegion) -> Vec<Region> {
    grid.centers()
        .iter()
        .map(|c| if seed.contains(c) { Region::InD } else { Region::OoD })
        .collect()
}

/// Which instances contribute to an aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceSet {
    Full,
    Partial,
    All,
}

impl InstanceSet {
    pub fn admits(&self, seen: Seen) -> bool {
        match self {
            InstanceSet::All => true,
            InstanceSet::Full => seen == Seen::Full,
            InstanceSet::Partial => seen == Seen::Partial,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InstanceSet::Full => "full",
            InstanceSet::Partial => "partial",
            InstanceSet::All => "all",
        }
    }
}

impl FromStr for InstanceSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(InstanceSet::Full),
            "partial" => Ok(InstanceSet::Partial),
            "all" => Ok(InstanceSet::All),
            other => Err(Error::invalid(format!("unknown instance set '{other}'"))),
        }
    }
}

/// Mean accuracy per cubelet; `None` where no record fell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCube {
    pub grid: GridSpec,
    pub values: Vec<Option<f64>>,
    pub counts: Vec<u64>,
}

impl AccuracyCube {
    /// Builds a cube from exact values, e.g. a synthetic probability field.
    /// Every cell gets a nominal count of one.
    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::invalid(format!(
                "expected {} cube values, got {}",
                grid.n_cells(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("accuracy {v} outside [0, 1]")));
        }
        Ok(AccuracyCube {
            grid,
            counts: vec![1; values.len()],
            values: values.into_iter().map(Some).collect(),
        })
    }

    pub fn value(&self, ijk: (usize, usize, usize)) -> Option<f64> {
        self.values[self.grid.flat(ijk)]
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count-weighted mean of the non-missing cells over a cubelet subset.
    pub fn weighted_mean_over(&self, mut keep: impl FnMut(usize) -> bool) -> Option<(f64, u64)> {
        let (mut sum, mut n) = (0.0, 0u64);
        for (idx, (v, c)) in self.values.iter().zip(&self.counts).enumerate() {
            if let Some(v) = v {
                if keep(idx) {
                    sum += v * *c as f64;
                    n += c;
                }
            }
        }
        (n > 0).then(|| (sum / n as f64, n))
    }
}

/// Per-cubelet (correct, total) tallies. Merging is associative and
/// commutative, so shards can be reduced in any order.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeAccumulator {
    grid: GridSpec,
    correct: Vec<u64>,
    counts: Vec<u64>,
}

impl CubeAccumulator {
    pub fn new(grid: GridSpec) -> Self {
        CubeAccumulator {
            grid,
            correct: vec![0; grid.n_cells()],
            counts: vec![0; grid.n_cells()],
        }
    }

    pub fn add(&mut self, theta: &Orientation, correct: bool) {
        let idx = self.grid.flat(self.grid.cubelet_index(theta));
        self.counts[idx] += 1;
        self.correct[idx] += correct as u64;
    }

    pub fn merge(mut self, other: CubeAccumulator) -> CubeAccumulator {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        for (a, b) in self.correct.iter_mut().zip(other.correct) {
            *a += b;
        }
        self
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn finish(self) -> AccuracyCube {
        let values = self
            .correct
            .iter()
            .zip(&self.counts)
            .map(|(&c, &n)| (n > 0).then(|| c as f64 / n as f64))
            .collect();
        AccuracyCube {
            grid: self.grid,
            values,
            counts: self.counts,
        }
    }
}

/// Mean correctness per cubelet over the records admitted by `filter`.
pub fn aggregate(records: &[EvaluationRecord], grid: &GridSpec, filter: InstanceSet) -> Result<AccuracyCube> {
    const SHARD: usize = 4096;
    let acc = records
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut acc = CubeAccumulator::new(*grid);
            for r in chunk.iter().filter(|r| filter.admits(r.seen)) {
                acc.add(&r.orientation(), r.correct);
            }
            acc
        })
        .reduce(|| CubeAccumulator::new(*grid), CubeAccumulator::merge);
    if acc.total() == 0 {
        return Err(Error::EmptyInput(format!(
            "no records for instance set '{}'",
            filter.name()
        )));
    }
    Ok(acc.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionAxis {
    Alpha,
    Beta,
    Gamma,
    /// No reduction: the cube is flattened to rows = alpha and
    /// columns = beta-major panels of gamma.
    None,
}

impl ProjectionAxis {
    pub fn name(&self) -> &'static str {
        match self {
            ProjectionAxis::Alpha => "alpha",
            ProjectionAxis::Beta => "beta",
            ProjectionAxis::Gamma => "gamma",
            ProjectionAxis::None => "none",
        }
    }

    /// Labels of the (row, column) axes of the resulting heatmap.
    pub fn display_axes(&self) -> (&'static str, &'static str) {
        match self {
            ProjectionAxis::Alpha => ("beta", "gamma"),
            ProjectionAxis::Beta => ("alpha", "gamma"),
            ProjectionAxis::Gamma => ("alpha", "beta"),
            ProjectionAxis::None => ("alpha", "beta*gamma"),
        }
    }
}

impl fmt::Display for ProjectionAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProjectionAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(ProjectionAxis::Alpha),
            "beta" => Ok(ProjectionAxis::Beta),
            "gamma" => Ok(ProjectionAxis::Gamma),
            "none" => Ok(ProjectionAxis::None),
            other => Err(Error::invalid(format!("unknown projection axis '{other}'"))),
        }
    }
}

/// Inclusive cell rectangle, in heatmap row/column coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRect {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap2D {
    pub axis_reduced: ProjectionAxis,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub values: Vec<Option<f64>>,
    pub counts: Vec<u64>,
    pub outline: Vec<CellRect>,
}

impl Heatmap2D {
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.values[r * self.cols + c]
    }

    /// Outlines the seed region in this heatmap's cell coordinates.
    pub fn with_outline(mut self, grid: &GridSpec, seed: &SeedRegion) -> Self {
        self.outline = outline_cells(grid, seed, self.axis_reduced);
        self
    }
}

fn heatmap_coords(grid: &GridSpec, axis: ProjectionAxis, (i, j, k): (usize, usize, usize)) -> (usize, usize) {
    match axis {
        ProjectionAxis::Alpha => (j, k),
        ProjectionAxis::Beta => (i, k),
        ProjectionAxis::Gamma => (i, j),
        ProjectionAxis::None => (i, j * grid.n_gamma + k),
    }
}

fn heatmap_shape(grid: &GridSpec, axis: ProjectionAxis) -> (usize, usize) {
    match axis {
        ProjectionAxis::Alpha => (grid.n_beta, grid.n_gamma),
        ProjectionAxis::Beta => (grid.n_alpha, grid.n_gamma),
        ProjectionAxis::Gamma => (grid.n_alpha, grid.n_beta),
        ProjectionAxis::None => (grid.n_alpha, grid.n_beta * grid.n_gamma),
    }
}

/// Averages the cube along `axis`, skipping missing cells. A heatmap cell is
/// missing only if every cube cell reduced into it is missing.
pub fn project(cube: &AccuracyCube, axis: ProjectionAxis) -> Heatmap2D {
    let grid = &cube.grid;
    let (rows, cols) = heatmap_shape(grid, axis);
    let mut sums = vec![0.0; rows * cols];
    let mut cells = vec![0usize; rows * cols];
    let mut counts = vec![0u64; rows * cols];
    for idx in 0..grid.n_cells() {
        let (r, c) = heatmap_coords(grid, axis, grid.unflat(idx));
        let out = r * cols + c;
        counts[out] += cube.counts[idx];
        if let Some(v) = cube.values[idx] {
            sums[out] += v;
            cells[out] += 1;
        }
    }
    let values = sums
        .iter()
        .zip(&cells)
        .map(|(s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    Heatmap2D {
        axis_reduced: axis,
        rows,
        cols,
        values,
        counts,
        outline: Vec::new(),
    }
}

fn outline_cells(grid: &GridSpec, seed: &SeedRegion, axis: ProjectionAxis) -> Vec<CellRect> {
    let n = grid.counts();
    let w = grid.widths();
    // Per box and per Euler axis, the inclusive index range whose centers fall
    // inside the box bounds.
    let ranges = |b: &SeedBox| -> Option<[(usize, usize); 3]> {
        let axes = b.axes();
        let mut out = [(0, 0); 3];
        for a in 0..3 {
            let inside: Vec<usize> = (0..n[a])
                .filter(|&c| {
                    let x = RANGE_LO[a] + (c as f64 + 0.5) * w[a];
                    x >= axes[a][0] && x <= axes[a][1]
                })
                .collect();
            out[a] = (*inside.first()?, *inside.last()?);
        }
        Some(out)
    };
    let mut rects = Vec::new();
    for r in seed.boxes.iter().filter_map(ranges) {
        let [ra, rb, rg] = r;
        match axis {
            ProjectionAxis::Alpha => rects.push(CellRect {
                row0: rb.0,
                row1: rb.1,
                col0: rg.0,
                col1: rg.1,
            }),
            ProjectionAxis::Beta => rects.push(CellRect {
                row0: ra.0,
                row1: ra.1,
                col0: rg.0,
                col1: rg.1,
            }),
            ProjectionAxis::Gamma => rects.push(CellRect {
                row0: ra.0,
                row1: ra.1,
                col0: rb.0,
                col1: rb.1,
            }),
            ProjectionAxis::None => {
                for j in rb.0..=rb.1 {
                    rects.push(CellRect {
                        row0: ra.0,
                        row1: ra.1,
                        col0: j * grid.n_gamma + rg.0,
                        col1: j * grid.n_gamma + rg.1,
                    });
                }
            }
        }
    }
    rects
}
