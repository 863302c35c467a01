//! Predictive model of per-orientation generalization.
//!
//! Four geometric components are computed per cubelet against the seed
//! orientations `Ω_s` and their silhouettes `Ω_ŝ`:
//!
//! * `A`  - small-angle proximity, `max |1 - φ/π|` over seeds,
//! * `E`  - in-plane alignment, `max |c · ê|` over seeds,
//! * `SA`, `SE` - the same two measures against the silhouette seeds.
//!
//! The model is `f_w = Σ σ(component; a, b, c)` with
//! `σ(x) = 1 / (1 + exp(b (a - x^c)))`, fitted to an accuracy cube by
//! gradient ascent on the Pearson correlation.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{mark_regions, AccuracyCube, GridSpec, Region, SeedRegion};
use crate::rotation::{dot, euler_to_matrix, norm, Orientation, RotationMatrix, Vec3, EPS_AXIS};

/// Upper bound on the logistic exponent `c`.
pub const C_MAX: f64 = 10.0;
/// Lower clamp on `c`, keeping it strictly positive.
pub const C_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    A,
    E,
    SA,
    SE,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::A, Component::E, Component::SA, Component::SE];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::A => "A",
            Component::E => "E",
            Component::SA => "SA",
            Component::SE => "SE",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" => Ok(Component::A),
            "E" => Ok(Component::E),
            "SA" => Ok(Component::SA),
            "SE" => Ok(Component::SE),
            other => Err(Error::invalid(format!("unknown component '{other}'"))),
        }
    }
}

/// Set of active components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ComponentMask([bool; 4]);

impl ComponentMask {
    pub const ALL: ComponentMask = ComponentMask([true; 4]);

    pub fn of(components: &[Component]) -> Self {
        let mut m = [false; 4];
        for c in components {
            m[c.index()] = true;
        }
        ComponentMask(m)
    }

    pub fn contains(&self, c: Component) -> bool {
        self.0[c.index()]
    }

    pub fn active(&self) -> impl Iterator<Item = Component> + '_ {
        Component::ALL.into_iter().filter(|c| self.contains(*c))
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FromStr for ComponentMask {
    type Err = Error;

    /// Parses a comma-separated list such as `A,E,SA,SE`.
    fn from_str(s: &str) -> Result<Self> {
        let comps = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(Component::from_str)
            .collect::<Result<Vec<_>>>()?;
        let mask = ComponentMask::of(&comps);
        if mask.is_empty() {
            return Err(Error::invalid("component mask is empty"));
        }
        Ok(mask)
    }
}

impl fmt::Display for ComponentMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.active().map(Component::name).collect();
        f.write_str(&names.join(","))
    }
}

impl Serialize for ComponentMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.active())
    }
}

impl<'de> Deserialize<'de> for ComponentMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let comps = Vec::<Component>::deserialize(d)?;
        Ok(ComponentMask::of(&comps))
    }
}

/// Parameters `(a, b, c)` of one logistic transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            a: 0.5,
            b: 10.0,
            c: 1.0,
        }
    }
}

impl LogisticParams {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let p = LogisticParams { a, b, c };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::invalid(format!("logistic a, b must be finite: {self:?}")));
        }
        if !(self.c > 0.0 && self.c <= C_MAX) {
            return Err(Error::invalid(format!(
                "logistic c must lie in (0, {C_MAX}], got {}",
                self.c
            )));
        }
        Ok(())
    }

    fn get(&self, slot: usize) -> f64 {
        [self.a, self.b, self.c][slot]
    }

    fn set(&mut self, slot: usize, v: f64) {
        match slot {
            0 => self.a = v,
            1 => self.b = v,
            _ => self.c = v,
        }
    }
}

/// `w = (w_A, w_E, w_SA, w_SE)` plus the active-component mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub weights: [LogisticParams; 4],
    pub mask: ComponentMask,
}

impl ModelParams {
    pub fn uniform(init: LogisticParams, mask: ComponentMask) -> Self {
        ModelParams {
            weights: [init; 4],
            mask,
        }
    }

    pub fn weight(&self, c: Component) -> &LogisticParams {
        &self.weights[c.index()]
    }

    pub fn weight_mut(&mut self, c: Component) -> &mut LogisticParams {
        &mut self.weights[c.index()]
    }

    /// Active weights keyed by component name, for JSON output.
    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .mask
            .active()
            .map(|c| (c.name().to_string(), serde_json::to_value(self.weight(c)).unwrap()))
            .collect();
        serde_json::Value::Object(map)
    }

    pub fn from_json(params: &serde_json::Value, mask: ComponentMask) -> Result<Self> {
        let mut w = ModelParams::uniform(LogisticParams::default(), mask);
        for c in mask.active() {
            let v = params
                .get(c.name())
                .ok_or_else(|| Error::invalid(format!("params missing component {c}")))?;
            let p: LogisticParams = serde_json::from_value(v.clone()).map_err(|e| Error::Json {
                context: format!("params.{c}"),
                source: e,
            })?;
            p.validate()?;
            *w.weight_mut(c) = p;
        }
        Ok(w)
    }
}

/// Per-cubelet component values, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentField {
    pub grid: GridSpec,
    pub a: Vec<f64>,
    pub e: Vec<f64>,
    pub sa: Vec<f64>,
    pub se: Vec<f64>,
}

impl ComponentField {
    pub fn get(&self, c: Component) -> &[f64] {
        match c {
            Component::A => &self.a,
            Component::E => &self.e,
            Component::SA => &self.sa,
            Component::SE => &self.se,
        }
    }
}

/// Deterministic samples of the seed region: `density` points per axis per
/// box, endpoints included. An axis covering its whole period is sampled
/// evenly around the circle instead, so the wrapped endpoints do not collapse
/// into one sample. Duplicates after wrapping are removed, keeping first
/// occurrences.
pub fn seed_samples(seed: &SeedRegion) -> Vec<Orientation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for b in &seed.boxes {
        let axes = b.axes();
        let ticks: Vec<Vec<f64>> = (0..3)
            .map(|a| {
                let [lo, hi] = axes[a];
                let d = seed.sample_density[a].max(1);
                let periodic = a != 1 && hi - lo >= TAU - 1e-12;
                if lo == hi || d == 1 {
                    vec![if lo == hi { lo } else { (lo + hi) / 2.0 }]
                } else if periodic {
                    (0..d).map(|k| lo + TAU * k as f64 / d as f64).collect()
                } else {
                    (0..d).map(|k| lo + (hi - lo) * k as f64 / (d - 1) as f64).collect()
                }
            })
            .collect();
        for &x in &ticks[0] {
            for &y in &ticks[1] {
                for &z in &ticks[2] {
                    let t = Orientation::new(x, y, z).expect("seed boxes are finite");
                    if seen.insert(t.as_array().map(f64::to_bits)) {
                        out.push(t);
                    }
                }
            }
        }
    }
    out
}

/// Each seed composed with a half turn about the camera axis:
/// `Rz(π) R(seed)`, i.e. `gamma + π`.
pub fn silhouette_seeds(seeds: &[Orientation]) -> Vec<Orientation> {
    seeds
        .iter()
        .map(|s| Orientation::new(s.alpha(), s.beta(), s.gamma() + PI).expect("finite"))
        .collect()
}

/// Seeds with their rotation matrices pre-transposed.
struct SeedSet {
    transposed: Vec<RotationMatrix>,
}

impl SeedSet {
    fn new(seeds: &[Orientation]) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::invalid("seed set is empty"));
        }
        Ok(SeedSet {
            transposed: seeds.iter().map(|s| euler_to_matrix(s).transpose()).collect(),
        })
    }

    /// `(A, E)` at `theta` in one pass over the seeds.
    fn components(&self, theta: &Orientation, camera: &Vec3) -> (f64, f64) {
        let r = euler_to_matrix(theta);
        let (mut a, mut e) = (0.0f64, 0.0f64);
        for st in &self.transposed {
            let aa = r.compose(st).to_axis_angle();
            a = a.max((1.0 - aa.angle / PI).abs());
            let in_plane = if aa.angle < EPS_AXIS {
                1.0
            } else {
                dot(camera, &aa.axis).abs()
            };
            e = e.max(in_plane);
        }
        (a.min(1.0), e.min(1.0))
    }
}

fn check_camera(camera: &Vec3) -> Result<()> {
    let n = norm(camera);
    if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("camera axis must be a unit vector, norm {n}")));
    }
    Ok(())
}

/// Small-angle component: `max over seeds of |1 - φ/π|`.
pub fn component_a(theta: &Orientation, seeds: &[Orientation]) -> Result<f64> {
    Ok(SeedSet::new(seeds)?.components(theta, &[0.0, 0.0, 1.0]).0)
}

/// In-plane component: `max over seeds of |c · ê|`; an identity relative
/// rotation counts as fully in-plane.
pub fn component_e(theta: &Orientation, seeds: &[Orientation], camera: &Vec3) -> Result<f64> {
    check_camera(camera)?;
    Ok(SeedSet::new(seeds)?.components(theta, camera).1)
}

/// Evaluates all four components at every cubelet center.
pub fn compute_fields(grid: &GridSpec, seed: &SeedRegion, camera: &Vec3) -> Result<ComponentField> {
    grid.validate()?;
    seed.validate()?;
    check_camera(camera)?;
    let seeds = seed_samples(seed);
    let direct = SeedSet::new(&seeds)?;
    let silhouette = SeedSet::new(&silhouette_seeds(&seeds))?;
    let rows: Vec<(f64, f64, f64, f64)> = grid
        .centers()
        .par_iter()
        .map(|t| {
            let (a, e) = direct.components(t, camera);
            let (sa, se) = silhouette.components(t, camera);
            (a, e, sa, se)
        })
        .collect();
    let mut field = ComponentField {
        grid: *grid,
        a: Vec::with_capacity(rows.len()),
        e: Vec::with_capacity(rows.len()),
        sa: Vec::with_capacity(rows.len()),
        se: Vec::with_capacity(rows.len()),
    };
    for (a, e, sa, se) in rows {
        field.a.push(a);
        field.e.push(e);
        field.sa.push(sa);
        field.se.push(se);
    }
    Ok(field)
}

/// `σ(x; a, b, c) = 1 / (1 + exp(b (a - x^c)))`.
#[inline]
pub fn logistic(x: f64, p: &LogisticParams) -> f64 {
    1.0 / (1.0 + (p.b * (p.a - x.powf(p.c))).exp())
}

/// `f_w` per cubelet; inactive components contribute nothing.
pub fn model_eval(field: &ComponentField, w: &ModelParams) -> Vec<f64> {
    let mut out = vec![0.0; field.grid.n_cells()];
    for c in w.mask.active() {
        let p = w.weight(c);
        for (o, x) in out.iter_mut().zip(field.get(c)) {
            *o += logistic(*x, p);
        }
    }
    out
}

/// Pearson correlation, accumulated in one pass with running co-moments.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 points, got {}", x.len())));
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (n, (&xi, &yi)) in x.iter().zip(y).enumerate() {
        let k = (n + 1) as f64;
        let dx = xi - mx;
        let dy = yi - my;
        mx += dx / k;
        my += dy / k;
        sxx += dx * (xi - mx);
        syy += dy * (yi - my);
        sxy += dx * (yi - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation between a per-cubelet predictor and the non-missing
/// cells of an accuracy cube.
pub fn rho_against_cube(cube: &AccuracyCube, predictor: &[f64]) -> Result<f64> {
    let (p, y): (Vec<f64>, Vec<f64>) = cube
        .values
        .iter()
        .zip(predictor)
        .filter_map(|(v, p)| v.map(|v| (*p, v)))
        .unzip();
    pearson(&p, &y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub init: LogisticParams,
    pub step: f64,
    pub max_iters: usize,
    pub fd_step: f64,
    /// Stop once the best ρ has not improved by `min_improvement` for this
    /// many iterations.
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            init: LogisticParams::default(),
            step: 0.05,
            max_iters: 2000,
            fd_step: 1e-5,
            patience: 50,
            min_improvement: 1e-9,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.init.validate()?;
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!("step must be positive, got {}", self.step)));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::invalid(format!(
                "fd_step must be positive, got {}",
                self.fd_step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    /// Best parameters seen, not the last iterate.
    pub params: ModelParams,
    pub rho: f64,
    pub trace: Vec<TraceEntry>,
}

/// Cached logistic columns over the fitted cells.
struct Objective<'a> {
    inputs: [Vec<f64>; 4],
    target: &'a [f64],
}

impl Objective<'_> {
    fn column(&self, c: Component, p: &LogisticParams) -> Vec<f64> {
        self.inputs[c.index()].iter().map(|x| logistic(*x, p)).collect()
    }

    fn rho(&self, total: &[f64]) -> f64 {
        pearson(total, self.target).unwrap_or(f64::NAN)
    }
}

/// Fits `w` by gradient ascent on `ρ(Ψ, f_w)` over the non-missing cubelets,
/// using central finite differences for the gradient.
pub fn fit(cube: &AccuracyCube, field: &ComponentField, mask: ComponentMask, config: &FitConfig) -> Result<FitOutcome> {
    config.validate()?;
    if mask.is_empty() {
        return Err(Error::invalid("component mask is empty"));
    }
    if cube.grid != field.grid {
        return Err(Error::invalid("cube and component field use different grids"));
    }
    let cells: Vec<usize> = (0..cube.values.len()).filter(|&i| cube.values[i].is_some()).collect();
    let target: Vec<f64> = cells.iter().map(|&i| cube.values[i].unwrap()).collect();
    if target.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 non-missing cubelets, got {}",
            target.len()
        )));
    }
    if target.iter().all(|v| *v == target[0]) {
        return Err(Error::Degenerate("accuracy cube has zero variance".into()));
    }

    let inputs = Component::ALL.map(|c| cells.iter().map(|&i| field.get(c)[i]).collect::<Vec<_>>());
    let obj = Objective {
        inputs,
        target: &target,
    };
    let active: Vec<Component> = mask.active().collect();

    let mut params = ModelParams::uniform(config.init, mask);
    let mut columns: Vec<Vec<f64>> = active.iter().map(|c| obj.column(*c, params.weight(*c))).collect();
    let sum_columns = |cols: &[Vec<f64>]| -> Vec<f64> {
        let mut total = vec![0.0; target.len()];
        for col in cols {
            for (t, v) in total.iter_mut().zip(col) {
                *t += v;
            }
        }
        total
    };

    let mut total = sum_columns(&columns);
    let mut rho = obj.rho(&total);
    let mut trace = vec![TraceEntry { iter: 0, rho }];
    if !rho.is_finite() {
        return Err(Error::FitFailure {
            message: "initial model output has zero variance".into(),
            trace,
        });
    }
    let mut best = (params, rho);
    let mut last_gain = 0;
    let h = config.fd_step;

    for iter in 1..=config.max_iters {
        let mut grad = vec![[0.0f64; 3]; active.len()];
        for (slot_c, &c) in active.iter().enumerate() {
            for (slot, g) in grad[slot_c].iter_mut().enumerate() {
                let eval = |delta: f64| {
                    let mut p = *params.weight(c);
                    p.set(slot, p.get(slot) + delta);
                    let col = obj.column(c, &p);
                    let shifted: Vec<f64> = total
                        .iter()
                        .zip(&columns[slot_c])
                        .zip(&col)
                        .map(|((t, old), new)| t - old + new)
                        .collect();
                    obj.rho(&shifted)
                };
                *g = (eval(h) - eval(-h)) / (2.0 * h);
            }
        }
        for (slot_c, &c) in active.iter().enumerate() {
            let w = params.weight_mut(c);
            for (slot, &g) in grad[slot_c].iter().enumerate() {
                // A saturated perturbation can make one side undefined.
                if g.is_finite() {
                    w.set(slot, w.get(slot) + config.step * g);
                }
            }
            w.c = w.c.clamp(C_MIN, C_MAX);
        }
        columns = active.iter().map(|c| obj.column(*c, params.weight(*c))).collect();
        total = sum_columns(&columns);
        rho = obj.rho(&total);
        trace.push(TraceEntry { iter, rho });
        if !rho.is_finite() {
            return Err(Error::FitFailure {
                message: format!("correlation became non-finite at iteration {iter}"),
                trace,
            });
        }
        if rho > best.1 + config.min_improvement {
            last_gain = iter;
        }
        if rho > best.1 {
            best = (params, rho);
        }
        if iter - last_gain >= config.patience {
            break;
        }
    }
    Ok(FitOutcome {
        params: best.0,
        rho: best.1,
        trace,
    })
}

/// Baselines that ignore rotation geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct NullPredictors {
    pub random_uniform: Vec<f64>,
    pub in_distribution: Vec<f64>,
}

pub fn null_predictors(grid: &GridSpec, seed: &SeedRegion, rng_seed: u64) -> NullPredictors {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let random_uniform = (0..grid.n_cells()).map(|_| rng.random::<f64>()).collect();
    let in_distribution = mark_regions(grid, seed)
        .into_iter()
        .map(|r| if r == Region::InD { 1.0 } else { 0.0 })
        .collect();
    NullPredictors {
        random_uniform,
        in_distribution,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    InD,
    G,
    NotG,
}

impl RegionLabel {
    pub fn name(&self) -> &'static str {
        match self {
            RegionLabel::InD => "InD",
            RegionLabel::G => "G",
            RegionLabel::NotG => "NotG",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionLabels {
    pub grid: GridSpec,
    pub frac: f64,
    pub threshold: f64,
    pub labels: Vec<RegionLabel>,
}

impl PartitionLabels {
    pub fn cells(&self, label: RegionLabel) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == label).collect()
    }

    pub fn count(&self, label: RegionLabel) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }
}

/// Splits out-of-distribution cubelets at `frac * max(f)`: strictly above is
/// generalizable, the rest is not. In-distribution cubelets keep their label.
pub fn partition(grid: &GridSpec, f_values: &[f64], regions: &[Region], frac: f64) -> Result<PartitionLabels> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::invalid(format!("frac must lie in (0, 1), got {frac}")));
    }
    if f_values.len() != grid.n_cells() || regions.len() != grid.n_cells() {
        return Err(Error::invalid("partition inputs do not match the grid"));
    }
    if f_values.iter().any(|f| !f.is_finite()) {
        return Err(Error::invalid("model values must be finite"));
    }
    let max = f_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = frac * max;
    let labels = f_values
        .iter()
        .zip(regions)
        .map(|(f, r)| match r {
            Region::InD => RegionLabel::InD,
            Region::OoD if *f > threshold => RegionLabel::G,
            Region::OoD => RegionLabel::NotG,
        })
        .collect();
    Ok(PartitionLabels {
        grid: *grid,
        frac,
        threshold,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SeedBox;
    use crate::rotation::rot_z;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::FRAC_PI_2;

    fn point_seed(a: f64, b: f64, g: f64) -> SeedRegion {
        SeedRegion::new(vec![SeedBox {
            alpha: [a, a],
            beta: [b, b],
            gamma: [g, g],
        }])
    }

    #[test]
    fn point_box_yields_single_sample() {
        assert_eq!(seed_samples(&point_seed(0.1, 0.2, 0.3)).len(), 1);
    }

    #[test]
    fn linspace_samples_on_alpha() {
        let seed = SeedRegion::new(vec![SeedBox {
            alpha: [0.0, 1.0],
            beta: [0.0, 0.0],
            gamma: [0.0, 0.0],
        }]);
        let alphas: Vec<f64> = seed_samples(&seed).iter().map(|t| t.alpha()).collect();
        assert_eq!(alphas, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn central_band_gives_125_contained_samples() {
        let seed = SeedRegion::central_band();
        let samples = seed_samples(&seed);
        assert_eq!(samples.len(), 125);
        assert!(samples.iter().all(|s| seed.contains(s)));
    }

    #[test]
    fn component_a_examples() {
        let t = Orientation::new(0.3, 0.1, -0.7).unwrap();
        assert_eq!(component_a(&t, &[t]).unwrap(), 1.0);
        let seed = Orientation::new(0.0, 0.0, 0.2).unwrap();
        let quarter = Orientation::new(0.0, 0.0, 0.2 + FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(component_a(&quarter, &[seed]).unwrap(), 0.5, epsilon = 1e-12);
        assert!(matches!(component_a(&t, &[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn component_e_examples() {
        let cam = [0.0, 0.0, 1.0];
        let seed = Orientation::new(0.4, -0.3, 1.0).unwrap();
        let gamma_shift = Orientation::new(0.4, -0.3, -2.0).unwrap();
        assert_abs_diff_eq!(component_e(&gamma_shift, &[seed], &cam).unwrap(), 1.0, epsilon = 1e-12);
        let alpha_shift = Orientation::new(FRAC_PI_2, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(
            component_e(&alpha_shift, &[Orientation::IDENTITY], &cam).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert_eq!(component_e(&seed, &[seed], &cam).unwrap(), 1.0);
        assert!(component_e(&seed, &[], &cam).is_err());
        assert!(component_e(&seed, &[seed], &[0.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn silhouette_examples() {
        let s = silhouette_seeds(&[Orientation::IDENTITY]);
        assert_eq!(s[0].as_array(), [0.0, 0.0, -PI]);
        let seeds: Vec<Orientation> = (0..20)
            .map(|k| Orientation::new(0.3 * k as f64 - 3.0, 0.07 * k as f64 - 0.7, 0.31 * k as f64).unwrap())
            .collect();
        let twice = silhouette_seeds(&silhouette_seeds(&seeds));
        for (a, b) in seeds.iter().zip(&twice) {
            for (x, y) in a.as_array().iter().zip(b.as_array()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
        for (s, t) in seeds.iter().zip(silhouette_seeds(&seeds)) {
            let oracle = rot_z(PI).compose(&euler_to_matrix(s));
            assert!(euler_to_matrix(&t).distance(&oracle) < 1e-9);
        }
    }

    #[test]
    fn single_cubelet_grid_containing_seed() {
        let grid = GridSpec::new(1, 1, 1).unwrap();
        // The lone center is the origin.
        let seed = point_seed(0.0, 0.0, 0.0);
        let f = compute_fields(&grid, &seed, &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(f.a, vec![1.0]);
        assert_eq!(f.e, vec![1.0]);
        assert_abs_diff_eq!(f.sa[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.se[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn silhouette_field_is_one_on_silhouette_cells() {
        // Seed at the center of cubelet (8, 4, 0); its silhouette is the
        // center of cubelet (8, 4, 8).
        let grid = GridSpec::default();
        let c = grid.cubelet_center((8, 4, 0));
        let seed = point_seed(c.alpha(), c.beta(), c.gamma());
        let f = compute_fields(&grid, &seed, &[0.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(f.a[grid.flat((8, 4, 0))], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f.sa[grid.flat((8, 4, 8))], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn logistic_examples() {
        let p = LogisticParams::new(0.25, 3.0, 0.5).unwrap();
        assert_abs_diff_eq!(logistic(0.0625, &p), 0.5, epsilon = 1e-15);
        let flat = LogisticParams::new(0.7, 0.0, 2.0).unwrap();
        for x in [0.0, 0.3, 1.0] {
            assert_eq!(logistic(x, &flat), 0.5);
        }
        let p = LogisticParams::new(0.25, 4.0, 0.5).unwrap();
        let expected = 1.0 / (1.0 + std::f64::consts::E);
        assert_abs_diff_eq!(logistic(0.0, &p), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.2689414213699951, epsilon = 1e-15);
        assert!(LogisticParams::new(0.0, 1.0, 0.0).is_err());
        assert!(LogisticParams::new(0.0, 1.0, 10.5).is_err());
    }

    fn synthetic_field(grid: GridSpec, seed: u64) -> ComponentField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut col = || (0..grid.n_cells()).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
        ComponentField {
            grid,
            a: col(),
            e: col(),
            sa: col(),
            se: col(),
        }
    }

    #[test]
    fn model_eval_examples() {
        let grid = GridSpec::new(4, 2, 4).unwrap();
        let field = synthetic_field(grid, 1);
        let p = LogisticParams::new(0.3, 5.0, 1.5).unwrap();
        let only_a = ModelParams::uniform(p, ComponentMask::of(&[Component::A]));
        let f = model_eval(&field, &only_a);
        for (v, x) in f.iter().zip(&field.a) {
            assert_eq!(*v, logistic(*x, &p));
        }
        let flat = ModelParams::uniform(LogisticParams::new(0.3, 0.0, 1.0).unwrap(), ComponentMask::ALL);
        assert!(model_eval(&field, &flat).iter().all(|v| *v == 2.0));

        let mut w = ModelParams::uniform(p, ComponentMask::ALL);
        w.weights[1] = LogisticParams::new(0.6, 8.0, 1.0).unwrap();
        w.weights[2] = LogisticParams::new(0.9, -2.0, 3.0).unwrap();
        w.weights[3] = LogisticParams::new(0.1, 12.0, 0.4).unwrap();
        let f = model_eval(&field, &w);
        for i in 0..grid.n_cells() {
            let oracle = [&field.a, &field.e, &field.sa, &field.se]
                .iter()
                .zip(&w.weights)
                .map(|(col, p)| 1.0 / (1.0 + (p.b * (-col[i].powf(p.c) + p.a)).exp()))
                .sum::<f64>();
            assert_abs_diff_eq!(f[i], oracle, epsilon = 1e-14);
            assert!(f[i] > 0.0 && f[i] < 4.0);
        }
    }

    fn two_pass(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx.sqrt() * vy.sqrt())
    }

    #[test]
    fn pearson_examples() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert_abs_diff_eq!(pearson(&x, &y).unwrap(), 1.0, epsilon = 1e-14);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&x, &neg).unwrap(), -1.0, epsilon = 1e-14);
        assert!(matches!(pearson(&x, &vec![3.0; 50]), Err(Error::Degenerate(_))));
        assert!(pearson(&[1.0], &[2.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[2.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let b: Vec<f64> = a.iter().map(|v| v * 0.3 + rng.random::<f64>()).collect();
        assert_abs_diff_eq!(pearson(&a, &b).unwrap(), two_pass(&a, &b), epsilon = 1e-12);
    }

    fn cube_from(grid: GridSpec, values: Vec<f64>) -> AccuracyCube {
        AccuracyCube::from_values(grid, values).unwrap()
    }

    #[test]
    fn constant_cube_is_degenerate() {
        let grid = GridSpec::new(4, 2, 4).unwrap();
        let field = synthetic_field(grid, 2);
        let cube = cube_from(grid, vec![0.4; grid.n_cells()]);
        assert!(matches!(
            fit(&cube, &field, ComponentMask::ALL, &FitConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn affine_target_of_single_component_fits() {
        let grid = GridSpec::new(8, 4, 8).unwrap();
        let field = synthetic_field(grid, 3);
        let truth = LogisticParams::new(0.5, 10.0, 1.0).unwrap();
        let values = field.a.iter().map(|x| 0.2 + 0.6 * logistic(*x, &truth)).collect();
        let cube = cube_from(grid, values);
        let out = fit(&cube, &field, ComponentMask::of(&[Component::A]), &FitConfig::default()).unwrap();
        assert!(out.rho >= 0.999, "rho {}", out.rho);
        assert!(!out.params.mask.contains(Component::E));
    }

    #[test]
    fn fit_ignores_missing_cells_and_never_regresses() {
        let grid = GridSpec::new(8, 4, 8).unwrap();
        let field = synthetic_field(grid, 4);
        let truth = LogisticParams::new(0.7, 15.0, 2.0).unwrap();
        let mut cube = cube_from(grid, field.e.iter().map(|x| logistic(*x, &truth)).collect());
        for i in (0..grid.n_cells()).step_by(3) {
            cube.values[i] = None;
            cube.counts[i] = 0;
        }
        let cfg = FitConfig {
            max_iters: 300,
            ..FitConfig::default()
        };
        let out = fit(&cube, &field, ComponentMask::of(&[Component::E]), &cfg).unwrap();
        assert!(out.rho >= out.trace[0].rho);
        assert!(out.trace.iter().all(|t| t.rho <= out.rho));
        assert!(out.params.weight(Component::E).c <= C_MAX);
    }

    #[test]
    fn empty_mask_rejected() {
        let grid = GridSpec::new(2, 2, 2).unwrap();
        let field = synthetic_field(grid, 5);
        let cube = cube_from(grid, field.a.clone());
        assert!(fit(&cube, &field, ComponentMask::default(), &FitConfig::default()).is_err());
        assert!("".parse::<ComponentMask>().is_err());
        assert_eq!("A,SE".parse::<ComponentMask>().unwrap().to_string(), "A,SE");
    }

    #[test]
    fn null_predictor_examples() {
        let grid = GridSpec::default();
        let seed = SeedRegion::central_band();
        let a = null_predictors(&grid, &seed, 42);
        let b = null_predictors(&grid, &seed, 42);
        assert_eq!(
            a.random_uniform.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.random_uniform.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let cube = cube_from(grid, a.in_distribution.clone());
        assert_abs_diff_eq!(
            rho_against_cube(&cube, &a.in_distribution).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    fn brute_partition(f: &[f64], regions: &[Region], frac: f64) -> Vec<RegionLabel> {
        let mut max = f[0];
        for v in f {
            if *v > max {
                max = *v;
            }
        }
        let mut out = Vec::new();
        for i in 0..f.len() {
            out.push(if regions[i] == Region::InD {
                RegionLabel::InD
            } else if f[i] > max * frac {
                RegionLabel::G
            } else {
                RegionLabel::NotG
            });
        }
        out
    }

    #[test]
    fn partition_examples() {
        let grid = GridSpec::new(2, 2, 2).unwrap();
        let mut regions = vec![Region::OoD; 8];
        regions[0] = Region::InD;
        let constant = partition(&grid, &[0.7; 8], &regions, 0.1).unwrap();
        assert_eq!(constant.count(RegionLabel::G), 7);
        let zero = partition(&grid, &[0.0; 8], &regions, 0.1).unwrap();
        assert_eq!(zero.count(RegionLabel::NotG), 7);
        assert_eq!(zero.count(RegionLabel::InD), 1);
        assert!(partition(&grid, &[0.0; 8], &regions, 1.0).is_err());
        assert!(partition(&grid, &[f64::NAN; 8], &regions, 0.5).is_err());

        let f: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let near_max = partition(&grid, &f, &regions, 0.999).unwrap();
        assert_eq!(near_max.count(RegionLabel::G), 1);
    }

    #[test]
    fn partition_matches_brute_force_on_model_output() {
        let grid = GridSpec::new(8, 4, 8).unwrap();
        let field = synthetic_field(grid, 6);
        let w = ModelParams::uniform(LogisticParams::new(0.6, 9.0, 1.3).unwrap(), ComponentMask::ALL);
        let f = model_eval(&field, &w);
        let regions: Vec<Region> = (0..grid.n_cells())
            .map(|i| if i % 11 == 0 { Region::InD } else { Region::OoD })
            .collect();
        for frac in [0.1, 0.5, 0.9] {
            let p = partition(&grid, &f, &regions, frac).unwrap();
            assert_eq!(p.labels, brute_partition(&f, &regions, frac));
        }
    }

    proptest! {
        #[test]
        fn pearson_affine_sign(seed in 0u64..1000, scale in prop_oneof![-50.0..-0.01f64, 0.01..50.0f64], shift in -10.0..10.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..64).map(|_| rng.random()).collect();
            let y: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
            prop_assert!((pearson(&x, &y).unwrap() - scale.signum()).abs() < 1e-12);
        }

        #[test]
        fn components_stay_in_unit_interval(a in -3.0..3.0f64, b in -1.5..1.5f64, g in -3.0..3.0f64) {
            let t = Orientation::new(a, b, g).unwrap();
            let seeds = seed_samples(&SeedRegion::central_band());
            let ca = component_a(&t, &seeds).unwrap();
            let ce = component_e(&t, &seeds, &[0.0, 0.0, 1.0]).unwrap();
            prop_assert!((0.0..=1.0).contains(&ca));
            prop_assert!((0.0..=1.0).contains(&ce));
        }

        #[test]
        fn more_seeds_never_lower_components(a in -3.0..3.0f64, b in -1.5..1.5f64, g in -3.0..3.0f64, k in 1usize..20) {
            let t = Orientation::new(a, b, g).unwrap();
            let all = seed_samples(&SeedRegion::central_band());
            let subset = &all[..k];
            let cam = [0.0, 0.0, 1.0];
            prop_assert!(component_a(&t, &all).unwrap() >= component_a(&t, subset).unwrap());
            prop_assert!(component_e(&t, &all, &cam).unwrap() >= component_e(&t, subset, &cam).unwrap());
        }

        #[test]
        fn partition_monotone_in_frac(seed in 0u64..500, f1 in 0.01..0.98f64, df in 0.0..0.5f64) {
            let grid = GridSpec::new(4, 2, 4).unwrap();
            let field = synthetic_field(grid, seed);
            let f = model_eval(&field, &ModelParams::uniform(LogisticParams::default(), ComponentMask::ALL));
            let regions = vec![Region::OoD; grid.n_cells()];
            let f2 = (f1 + df).min(0.99);
            let lo = partition(&grid, &f, &regions, f1).unwrap();
            let hi = partition(&grid, &f, &regions, f2).unwrap();
            prop_assert!(hi.count(RegionLabel::G) <= lo.count(RegionLabel::G));
            prop_assert_eq!(lo.count(RegionLabel::G) + lo.count(RegionLabel::NotG), grid.n_cells());
        }

        #[test]
        fn model_monotone_in_each_component(seed in 0u64..200, bump in 0.0..0.5f64, which in 0usize..4) {
            let grid = GridSpec::new(2, 2, 2).unwrap();
            let field = synthetic_field(grid, seed);
            let mut raised = field.clone();
            let col = match which { 0 => &mut raised.a, 1 => &mut raised.e, 2 => &mut raised.sa, _ => &mut raised.se };
            for v in col.iter_mut() { *v = (*v + bump).min(1.0); }
            let w = ModelParams::uniform(LogisticParams::new(0.4, 6.0, 1.7).unwrap(), ComponentMask::ALL);
            let before = model_eval(&field, &w);
            let after = model_eval(&raised, &w);
            for (x, y) in before.iter().zip(&after) { prop_assert!(y >= x); }
        }
    }
}
