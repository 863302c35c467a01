//! Neuron activation statistics over orientation sets and the thresholded
//! network invariance scores built from them.

use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AccuracyCube, GridSpec, InstanceSet};
use crate::io::{ActivationMatrix, ImageMeta, Seen};
use crate::model::{PartitionLabels, RegionLabel};

/// Percentile used for the activity gate.
pub const TAU_PERCENTILE: f64 = 95.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub id: String,
    pub seen: Seen,
}

/// Normalized mean activation per (neuron, instance, cubelet). Missing cells
/// are stored as NaN and surfaced as `None`.
#[derive(Debug, Clone)]
pub struct ActivationTensor {
    pub grid: GridSpec,
    /// Source column of each retained neuron.
    pub neuron_ids: Vec<usize>,
    pub instances: Vec<InstanceInfo>,
    values: Vec<f64>,
    /// Normalized per-image activities of retained neurons.
    image_pool: Vec<f64>,
    /// Source columns dropped because their maximum activation was zero.
    pub dropped_neurons: Vec<usize>,
    /// Number of negative raw activations clamped to zero.
    pub clamped: usize,
}

impl ActivationTensor {
    pub fn n_neurons(&self) -> usize {
        self.neuron_ids.len()
    }

    pub fn n_instances(&self) -> usize {
        self.instances.len()
    }

    fn offset(&self, neuron: usize, instance: usize) -> usize {
        (neuron * self.instances.len() + instance) * self.grid.n_cells()
    }

    pub fn get(&self, neuron: usize, instance: usize, cell: usize) -> Option<f64> {
        let v = self.values[self.offset(neuron, instance) + cell];
        (!v.is_nan()).then_some(v)
    }

    fn cells(&self, neuron: usize, instance: usize) -> &[f64] {
        let o = self.offset(neuron, instance);
        &self.values[o..o + self.grid.n_cells()]
    }

    pub fn image_pool(&self) -> &[f64] {
        &self.image_pool
    }

    /// Keeps only instances admitted by `set`. The normalization is unchanged.
    pub fn restrict(&self, set: InstanceSet) -> ActivationTensor {
        let keep: Vec<usize> = (0..self.n_instances())
            .filter(|&i| set.admits(self.instances[i].seen))
            .collect();
        let mut values = Vec::with_capacity(self.n_neurons() * keep.len() * self.grid.n_cells());
        for n in 0..self.n_neurons() {
            for &i in &keep {
                values.extend_from_slice(self.cells(n, i));
            }
        }
        ActivationTensor {
            grid: self.grid,
            neuron_ids: self.neuron_ids.clone(),
            instances: keep.iter().map(|&i| self.instances[i].clone()).collect(),
            values,
            image_pool: self.image_pool.clone(),
            dropped_neurons: self.dropped_neurons.clone(),
            clamped: self.clamped,
        }
    }

    /// Builds a tensor directly from cubelet means, e.g. for fixtures.
    /// `values` is indexed `[neuron][instance][cell]`; NaN marks missing.
    pub fn from_cell_means(
        grid: GridSpec,
        instances: Vec<InstanceInfo>,
        n_neurons: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != n_neurons * instances.len() * grid.n_cells() {
            return Err(Error::invalid("cell-mean tensor has the wrong length"));
        }
        if values.iter().any(|v| !v.is_nan() && !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("cell means must lie in [0, 1]"));
        }
        let image_pool = values.iter().copied().filter(|v| !v.is_nan()).collect();
        Ok(ActivationTensor {
            grid,
            neuron_ids: (0..n_neurons).collect(),
            instances,
            values,
            image_pool,
            dropped_neurons: Vec::new(),
            clamped: 0,
        })
    }
}

/// Scales each neuron by its maximum over every image, drops neurons that
/// never fire, then averages per (instance, cubelet). Negative activations
/// are clamped to zero first.
pub fn normalize(raw: &ActivationMatrix, meta: &[ImageMeta], grid: &GridSpec) -> Result<ActivationTensor> {
    if meta.len() != raw.n_rows {
        return Err(Error::invalid(format!(
            "{} metadata rows for {} activation rows",
            meta.len(),
            raw.n_rows
        )));
    }
    if raw.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("activation matrix contains non-finite values"));
    }

    let mut by_id: BTreeMap<&str, Seen> = BTreeMap::new();
    for m in meta {
        if let Some(prev) = by_id.insert(&m.instance_id, m.seen) {
            if prev != m.seen {
                return Err(Error::invalid(format!(
                    "instance '{}' is listed as both fully and partially seen",
                    m.instance_id
                )));
            }
        }
    }
    let instances: Vec<InstanceInfo> = by_id
        .iter()
        .map(|(id, seen)| InstanceInfo {
            id: id.to_string(),
            seen: *seen,
        })
        .collect();
    let inst_index: BTreeMap<&str, usize> = by_id.keys().enumerate().map(|(i, id)| (*id, i)).collect();
    let cell_of: Vec<usize> = meta
        .iter()
        .map(|m| Ok(grid.flat(grid.cubelet_index(&m.orientation()?))))
        .collect::<Result<_>>()?;
    let inst_of: Vec<usize> = meta.iter().map(|m| inst_index[m.instance_id.as_str()]).collect();

    let clamped = raw.data.iter().filter(|v| **v < 0.0).count();
    if clamped > 0 {
        log::info!("clamped {clamped} negative activations to zero");
    }
    let maxima: Vec<f64> = (0..raw.n_cols)
        .map(|c| {
            (0..raw.n_rows)
                .map(|r| raw.get(r, c).max(0.0) as f64)
                .fold(0.0, f64::max)
        })
        .collect();
    let (kept, dropped): (Vec<usize>, Vec<usize>) = (0..raw.n_cols).partition(|&c| maxima[c] > 0.0);
    if !dropped.is_empty() {
        log::info!(
            "dropped {} neurons with zero maximum activation: {dropped:?}",
            dropped.len()
        );
    }
    if kept.is_empty() {
        return Err(Error::EmptyInput("every neuron has zero maximum activation".into()));
    }

    let n_cells = grid.n_cells();
    let n_inst = instances.len();
    let per_neuron: Vec<(Vec<f64>, Vec<f64>)> = kept
        .par_iter()
        .map(|&c| {
            let mut sums = vec![0.0; n_inst * n_cells];
            let mut counts = vec![0u32; n_inst * n_cells];
            let mut pool = Vec::with_capacity(raw.n_rows);
            for r in 0..raw.n_rows {
                let v = raw.get(r, c).max(0.0) as f64 / maxima[c];
                pool.push(v);
                let slot = inst_of[r] * n_cells + cell_of[r];
                sums[slot] += v;
                counts[slot] += 1;
            }
            let means = sums
                .iter()
                .zip(&counts)
                .map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
                .collect();
            (means, pool)
        })
        .collect();
    let mut values = Vec::with_capacity(kept.len() * n_inst * n_cells);
    let mut image_pool = Vec::with_capacity(kept.len() * raw.n_rows);
    for (means, pool) in per_neuron {
        values.extend(means);
        image_pool.extend(pool);
    }
    Ok(ActivationTensor {
        grid: *grid,
        neuron_ids: kept,
        instances,
        values,
        image_pool,
        dropped_neurons: dropped,
        clamped,
    })
}

/// Mean over the non-missing members of `cells`.
pub fn mean_over_set(tensor: &ActivationTensor, neuron: usize, instance: usize, cells: &[usize]) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::Degenerate("orientation set is empty".into()));
    }
    set_mean(tensor.cells(neuron, instance), cells).ok_or_else(|| {
        Error::Degenerate(format!(
            "every cubelet of the set is missing for neuron {neuron}, instance {instance}"
        ))
    })
}

fn set_mean(cells_of_pair: &[f64], cells: &[usize]) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for &c in cells {
        let v = cells_of_pair[c];
        if !v.is_nan() {
            sum += v;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// `δ(u, v) = 1 - |(v - u) / (v + u)|`.
pub fn invariance_score(u: f64, v: f64) -> Result<f64> {
    if !(u.is_finite() && v.is_finite()) || u < 0.0 || v < 0.0 {
        return Err(Error::invalid(format!(
            "activations must be finite and non-negative, got ({u}, {v})"
        )));
    }
    if u == 0.0 && v == 0.0 {
        return Err(Error::UndefinedScore);
    }
    Ok((1.0 - ((v - u) / (v + u)).abs()).clamp(0.0, 1.0))
}

/// Which activities the threshold percentile is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauPool {
    /// Per-image normalized activities.
    #[default]
    Images,
    /// Per-(instance, cubelet) means.
    Cubelets,
}

impl FromStr for TauPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "images" => Ok(TauPool::Images),
            "cubelets" => Ok(TauPool::Cubelets),
            other => Err(Error::invalid(format!("unknown tau pool '{other}'"))),
        }
    }
}

/// Linear interpolation between closest ranks: position `(n - 1) p / 100`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of an empty pool".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::invalid(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// The activity gate `τ`: 95th percentile of the chosen pool.
pub fn activity_threshold(tensor: &ActivationTensor, pool: TauPool) -> Result<f64> {
    match pool {
        TauPool::Images => percentile(&tensor.image_pool, TAU_PERCENTILE),
        TauPool::Cubelets => {
            let means: Vec<f64> = tensor.values.iter().copied().filter(|v| !v.is_nan()).collect();
            percentile(&means, TAU_PERCENTILE)
        }
    }
}

/// Both set means pass the gate. Silent pairs (both zero) carry no score.
fn gated(u: f64, v: f64, tau: f64) -> bool {
    u >= tau && v >= tau && u + v > 0.0
}

/// Sum of gated invariances and number of gated pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Tally {
    sum: f64,
    pairs: usize,
}

impl Tally {
    fn add(&mut self, u: f64, v: f64, tau: f64) {
        if gated(u, v, tau) {
            self.sum += 1.0 - ((v - u) / (v + u)).abs();
            self.pairs += 1;
        }
    }

    fn merge(mut self, o: Tally) -> Tally {
        self.sum += o.sum;
        self.pairs += o.pairs;
        self
    }

    fn score(&self) -> Option<f64> {
        (self.pairs > 0).then(|| self.sum / self.pairs as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceBreakdown {
    pub instance_id: String,
    pub seen: Seen,
    pub score_g: Option<f64>,
    pub l_g: usize,
    pub score_not_g: Option<f64>,
    pub l_not_g: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CubeletBreakdown {
    pub cell: usize,
    pub cubelet: (usize, usize, usize),
    pub region: RegionLabel,
    pub score: Option<f64>,
    pub pairs: usize,
}

/// Network invariance between the seed set and the G / NotG sets. A score is
/// `None` (undefined) when no pair passed the gate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkInvarianceReport {
    pub tau: f64,
    pub score_g: Option<f64>,
    pub score_not_g: Option<f64>,
    pub l_g: usize,
    pub l_not_g: usize,
    pub n_neurons: usize,
    pub n_instances: usize,
    pub per_instance: Vec<InstanceBreakdown>,
    pub per_cubelet: Vec<CubeletBreakdown>,
}

fn check_labels(tensor: &ActivationTensor, labels: &PartitionLabels) -> Result<()> {
    if labels.grid != tensor.grid || labels.labels.len() != tensor.grid.n_cells() {
        return Err(Error::invalid("partition labels do not match the activation grid"));
    }
    if labels.count(RegionLabel::InD) == 0 {
        return Err(Error::Degenerate(
            "no cubelet is labelled in-distribution on this grid".into(),
        ));
    }
    Ok(())
}

/// Seed-set means for every (neuron, admitted instance) pair, indexed
/// `[neuron][position in admitted]`.
fn seed_means(tensor: &ActivationTensor, admitted: &[usize], ind: &[usize]) -> Result<Vec<Vec<f64>>> {
    (0..tensor.n_neurons())
        .map(|n| admitted.iter().map(|&i| mean_over_set(tensor, n, i, ind)).collect())
        .collect()
}

/// Per-(neuron, instance) tallies of `δ(InD, region)`.
fn region_tallies(
    tensor: &ActivationTensor,
    admitted: &[usize],
    seed: &[Vec<f64>],
    region: &[usize],
    tau: f64,
) -> Result<Vec<Tally>> {
    let mut per_instance = vec![Tally::default(); admitted.len()];
    if region.is_empty() {
        return Ok(per_instance);
    }
    let rows: Vec<Vec<Tally>> = (0..tensor.n_neurons())
        .into_par_iter()
        .map(|n| {
            admitted
                .iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let v = mean_over_set(tensor, n, i, region)?;
                    let mut t = Tally::default();
                    t.add(seed[n][pos], v, tau);
                    Ok(t)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    for row in rows {
        for (acc, t) in per_instance.iter_mut().zip(row) {
            *acc = acc.merge(t);
        }
    }
    Ok(per_instance)
}

/// `(1/L) Σ_n Σ_i 1(InD, G) δ(InD, G)` and the same with NotG, over the
/// instances admitted by `filter`.
pub fn network_invariance(
    tensor: &ActivationTensor,
    labels: &PartitionLabels,
    filter: InstanceSet,
    tau: f64,
) -> Result<NetworkInvarianceReport> {
    check_labels(tensor, labels)?;
    let admitted: Vec<usize> = (0..tensor.n_instances())
        .filter(|&i| filter.admits(tensor.instances[i].seen))
        .collect();
    let ind = labels.cells(RegionLabel::InD);
    let g = labels.cells(RegionLabel::G);
    let not_g = labels.cells(RegionLabel::NotG);
    let seed = seed_means(tensor, &admitted, &ind)?;

    let tallies_g = region_tallies(tensor, &admitted, &seed, &g, tau)?;
    let tallies_not_g = region_tallies(tensor, &admitted, &seed, &not_g, tau)?;
    let total_g = tallies_g.iter().fold(Tally::default(), |a, b| a.merge(*b));
    let total_not_g = tallies_not_g.iter().fold(Tally::default(), |a, b| a.merge(*b));

    let per_instance = admitted
        .iter()
        .enumerate()
        .map(|(pos, &i)| InstanceBreakdown {
            instance_id: tensor.instances[i].id.clone(),
            seen: tensor.instances[i].seen,
            score_g: tallies_g[pos].score(),
            l_g: tallies_g[pos].pairs,
            score_not_g: tallies_not_g[pos].score(),
            l_not_g: tallies_not_g[pos].pairs,
        })
        .collect();

    let per_cubelet = cubelet_scores(tensor, labels, &admitted, &seed, tau)
        .into_iter()
        .map(|(cell, t)| CubeletBreakdown {
            cell,
            cubelet: tensor.grid.unflat(cell),
            region: labels.labels[cell],
            score: t.score(),
            pairs: t.pairs,
        })
        .collect();

    Ok(NetworkInvarianceReport {
        tau,
        score_g: total_g.score(),
        score_not_g: total_not_g.score(),
        l_g: total_g.pairs,
        l_not_g: total_not_g.pairs,
        n_neurons: tensor.n_neurons(),
        n_instances: admitted.len(),
        per_instance,
        per_cubelet,
    })
}

/// For each out-of-distribution cubelet, the gated invariances between the
/// seed set and that single cubelet. Pairs whose cubelet is missing are
/// skipped.
fn cubelet_scores(
    tensor: &ActivationTensor,
    labels: &PartitionLabels,
    admitted: &[usize],
    seed: &[Vec<f64>],
    tau: f64,
) -> Vec<(usize, Tally)> {
    (0..labels.labels.len())
        .into_par_iter()
        .filter(|&c| labels.labels[c] != RegionLabel::InD)
        .map(|c| {
            let mut t = Tally::default();
            for (n, seed_n) in seed.iter().enumerate().take(tensor.n_neurons()) {
                for (pos, &i) in admitted.iter().enumerate() {
                    if let Some(v) = tensor.get(n, i, c) {
                        t.add(seed_n[pos], v, tau);
                    }
                }
            }
            (c, t)
        })
        .collect()
}

/// One scatter point. Region-level rows leave `cubelet` empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub set: InstanceSet,
    pub region: RegionLabel,
    pub cubelet: Option<(usize, usize, usize)>,
    pub accuracy: Option<f64>,
    pub invariance: Option<f64>,
}

impl ScatterRow {
    pub fn defined(&self) -> bool {
        self.invariance.is_some()
    }
}

/// Mean accuracy against network invariance, one row per (instance set,
/// region). Accuracy is the record-weighted mean over the region's cubelets.
pub fn scatter_accuracy_vs_invariance(
    tensor: &ActivationTensor,
    cubes: &[(InstanceSet, &AccuracyCube)],
    labels: &PartitionLabels,
    tau: f64,
) -> Result<Vec<ScatterRow>> {
    let mut rows = Vec::new();
    for (set, cube) in cubes {
        if cube.grid != labels.grid {
            return Err(Error::invalid("accuracy cube and labels use different grids"));
        }
        let report = network_invariance(tensor, labels, *set, tau)?;
        for (region, score) in [
            (RegionLabel::G, report.score_g),
            (RegionLabel::NotG, report.score_not_g),
        ] {
            let accuracy = cube.weighted_mean_over(|i| labels.labels[i] == region).map(|(m, _)| m);
            rows.push(ScatterRow {
                set: *set,
                region,
                cubelet: None,
                accuracy,
                invariance: score,
            });
        }
    }
    Ok(rows)
}

/// Joint invariance of the two instance sets at one out-of-distribution cubelet.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisseminationRow {
    pub cell: usize,
    pub cubelet: (usize, usize, usize),
    pub region: RegionLabel,
    pub full: Option<f64>,
    pub partial: Option<f64>,
}

impl DisseminationRow {
    /// Distance from the parity line, when both coordinates are defined.
    pub fn parity_gap(&self) -> Option<f64> {
        Some((self.full? - self.partial?).abs())
    }
}

/// Per out-of-distribution cubelet: mean gated invariance between the seed
/// set and that cubelet, for the fully-seen and partially-seen tensors.
pub fn scatter_dissemination(
    full: &ActivationTensor,
    partial: &ActivationTensor,
    labels: &PartitionLabels,
    tau: f64,
) -> Result<Vec<DisseminationRow>> {
    check_labels(full, labels)?;
    check_labels(partial, labels)?;
    let ind = labels.cells(RegionLabel::InD);
    let score = |t: &ActivationTensor| -> Result<Vec<(usize, Tally)>> {
        let admitted: Vec<usize> = (0..t.n_instances()).collect();
        let seed = seed_means(t, &admitted, &ind)?;
        Ok(cubelet_scores(t, labels, &admitted, &seed, tau))
    };
    let f = score(full)?;
    let p = score(partial)?;
    Ok(f.into_iter()
        .zip(p)
        .map(|((cell, tf), (_, tp))| DisseminationRow {
            cell,
            cubelet: labels.grid.unflat(cell),
            region: labels.labels[cell],
            full: tf.score(),
            partial: tp.score(),
        })
        .collect())
}

/// Flattens dissemination rows into scatter rows, one per instance set,
/// attaching the per-cubelet accuracy when a cube is supplied.
pub fn dissemination_scatter_rows(
    rows: &[DisseminationRow],
    full_cube: Option<&AccuracyCube>,
    partial_cube: Option<&AccuracyCube>,
) -> Vec<ScatterRow> {
    let mut out = Vec::with_capacity(rows.len() * 2);
    for r in rows {
        for (set, inv, cube) in [
            (InstanceSet::Full, r.full, full_cube),
            (InstanceSet::Partial, r.partial, partial_cube),
        ] {
            out.push(ScatterRow {
                set,
                region: r.region,
                cubelet: Some(r.cubelet),
                accuracy: cube.and_then(|c| c.values[r.cell]),
                invariance: inv,
            });
        }
    }
    out
}

pub const SCATTER_HEADER: &str = "set,region,cubelet_i,cubelet_j,cubelet_k,accuracy,invariance,defined";

pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    use crate::render::format_value;
    let opt = |v: Option<f64>| v.map(format_value).unwrap_or_default();
    let mut out = String::from(SCATTER_HEADER);
    out.push('\n');
    for r in rows {
        let (i, j, k) = match r.cubelet {
            Some((i, j, k)) => (i.to_string(), j.to_string(), k.to_string()),
            None => Default::default(),
        };
        out.push_str(&format!(
            "{},{},{i},{j},{k},{},{},{}\n",
            r.set.name(),
            r.region.name(),
            opt(r.accuracy),
            opt(r.invariance),
            r.defined() as u8
        ));
    }
    out
}
