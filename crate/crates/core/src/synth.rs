//! Synthetic datasets with known ground truth: accuracy cubes, evaluation
//! records and activations with planted invariance levels.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{mark_regions, AccuracyCube, GridSpec, SeedRegion};
use crate::io::{ActivationMatrix, EvaluationRecord, ImageMeta, Seen};
use crate::model::{
    compute_fields, model_eval, partition, Component, ComponentMask, LogisticParams, ModelParams, PartitionLabels,
    RegionLabel,
};
use crate::rotation::{Orientation, CAMERA_AXIS};

/// Keeps sampled angles off cubelet faces so binning is unambiguous.
const FACE_MARGIN: f64 = 1e-6;
/// Separates the activation stream from the record stream.
const ACTIVATION_SALT: u64 = 0x5eed_ac71_0000_0001;
const MAX_SCALE: u32 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivationPlan {
    pub n_neurons: usize,
    pub images_per_pair: usize,
    /// Planted invariance between the seed set and the G set.
    pub level_g: f64,
    /// Planted invariance between the seed set and the NotG set.
    pub level_not_g: f64,
    /// Uniform noise amplitude, relative to the seed activity.
    pub noise: f64,
    /// Extra noise on partially-seen instances only.
    pub partial_noise: f64,
}

impl Default for ActivationPlan {
    fn default() -> Self {
        ActivationPlan {
            n_neurons: 48,
            images_per_pair: 1,
            level_g: 0.8,
            level_not_g: 0.3,
            noise: 0.0,
            partial_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub w_star: BTreeMap<Component, LogisticParams>,
    pub grid: GridSpec,
    pub seed: SeedRegion,
    pub camera: [f64; 3],
    pub samples_per_cubelet: usize,
    /// Exact probabilities instead of sampled means.
    pub noiseless: bool,
    pub rng_seed: u64,
    pub n_instances: usize,
    /// The first `n_full` instances are fully seen.
    pub n_full: usize,
    /// Threshold fraction used to label the activation regions.
    pub frac: f64,
    pub activation: ActivationPlan,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            w_star: default_w_star(),
            grid: GridSpec::default(),
            seed: SeedRegion::central_band(),
            camera: CAMERA_AXIS,
            samples_per_cubelet: 200,
            noiseless: false,
            rng_seed: 0,
            n_instances: 24,
            n_full: 12,
            frac: 0.1,
            activation: ActivationPlan::default(),
        }
    }
}

pub fn default_w_star() -> BTreeMap<Component, LogisticParams> {
    BTreeMap::from([
        (
            Component::A,
            LogisticParams {
                a: 0.8,
                b: 12.0,
                c: 2.0,
            },
        ),
        (Component::E, LogisticParams { a: 0.7, b: 8.0, c: 1.0 }),
        (
            Component::SA,
            LogisticParams {
                a: 0.9,
                b: 10.0,
                c: 1.0,
            },
        ),
        (
            Component::SE,
            LogisticParams {
                a: 0.85,
                b: 10.0,
                c: 1.5,
            },
        ),
    ])
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.w_star.is_empty() {
            return Err(Error::invalid("w_star names no components"));
        }
        for p in self.w_star.values() {
            p.validate()?;
        }
        self.grid.validate()?;
        self.seed.validate()?;
        if self.samples_per_cubelet == 0 {
            return Err(Error::invalid("samples_per_cubelet must be at least 1"));
        }
        if self.n_instances == 0 || self.n_full > self.n_instances {
            return Err(Error::invalid(format!(
                "need n_instances >= 1 and n_full <= n_instances, got {} and {}",
                self.n_instances, self.n_full
            )));
        }
        if !(self.frac > 0.0 && self.frac < 1.0) {
            return Err(Error::invalid(format!("frac must lie in (0, 1), got {}", self.frac)));
        }
        let a = &self.activation;
        if a.n_neurons == 0 || a.images_per_pair == 0 {
            return Err(Error::invalid(
                "activation plan needs at least one neuron and one image per pair",
            ));
        }
        for (name, v) in [("level_g", a.level_g), ("level_not_g", a.level_not_g)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [("noise", a.noise), ("partial_noise", a.partial_noise)] {
            if !(0.0..0.5).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 0.5), got {v}")));
            }
        }
        Ok(())
    }

    pub fn mask(&self) -> ComponentMask {
        ComponentMask::of(&self.w_star.keys().copied().collect::<Vec<_>>())
    }

    pub fn params(&self) -> ModelParams {
        let mut w = ModelParams::uniform(LogisticParams::default(), self.mask());
        for (c, p) in &self.w_star {
            *w.weight_mut(*c) = *p;
        }
        w
    }

    pub fn instance(&self, i: usize) -> (String, Seen) {
        let seen = if i < self.n_full { Seen::Full } else { Seen::Partial };
        (format!("synth-{i:03}"), seen)
    }
}

/// `f_{w*}` per cubelet.
pub fn model_field(spec: &SynthSpec) -> Result<Vec<f64>> {
    let field = compute_fields(&spec.grid, &spec.seed, &spec.camera)?;
    Ok(model_eval(&field, &spec.params()))
}

/// `clamp(f_{w*} / |mask|, 0, 1)` per cubelet.
pub fn probability_field(spec: &SynthSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let k = spec.mask().len() as f64;
    Ok(model_field(spec)?
        .into_iter()
        .map(|f| (f / k).clamp(0.0, 1.0))
        .collect())
}

fn sample_in_cubelet(grid: &GridSpec, cell: usize, rng: &mut ChaCha8Rng) -> Orientation {
    let lo = grid.cubelet_lower(grid.unflat(cell));
    let w = grid.widths();
    let angles: [f64; 3] =
        [0, 1, 2].map(|a| lo[a] + (FACE_MARGIN + (1.0 - 2.0 * FACE_MARGIN) * rng.random::<f64>()) * w[a]);
    Orientation::new(angles[0], angles[1], angles[2]).expect("cubelet samples are finite")
}

/// Per cubelet, the sampled orientations and Bernoulli outcomes. Each
/// cubelet has its own generator stream, so the result does not depend on
/// scheduling.
fn draws(spec: &SynthSpec, p: &[f64]) -> Vec<Vec<(Orientation, bool)>> {
    (0..spec.grid.n_cells())
        .into_par_iter()
        .map(|cell| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
            rng.set_stream(cell as u64);
            (0..spec.samples_per_cubelet)
                .map(|_| {
                    let theta = sample_in_cubelet(&spec.grid, cell, &mut rng);
                    let correct = rng.random::<f64>() < p[cell];
                    (theta, correct)
                })
                .collect()
        })
        .collect()
}

/// Exact probabilities in noiseless mode, otherwise the binomial means of
/// the same draws [`synth_records`] emits.
pub fn synth_accuracy_cube(spec: &SynthSpec) -> Result<AccuracyCube> {
    let p = probability_field(spec)?;
    if spec.noiseless {
        return AccuracyCube::from_values(spec.grid, p);
    }
    let d = draws(spec, &p);
    let counts = vec![spec.samples_per_cubelet as u64; d.len()];
    let values = d
        .iter()
        .map(|cell| Some(cell.iter().filter(|(_, c)| *c).count() as f64 / cell.len() as f64))
        .collect();
    Ok(AccuracyCube {
        grid: spec.grid,
        values,
        counts,
    })
}

/// `samples_per_cubelet` records per cubelet, instances assigned round-robin.
pub fn synth_records(spec: &SynthSpec) -> Result<Vec<EvaluationRecord>> {
    let p = probability_field(spec)?;
    let d = draws(spec, &p);
    let spc = spec.samples_per_cubelet;
    let mut out = Vec::with_capacity(d.len() * spc);
    for (cell, samples) in d.into_iter().enumerate() {
        for (s, (theta, correct)) in samples.into_iter().enumerate() {
            let (inst, seen) = spec.instance((cell * spc + s) % spec.n_instances);
            out.push(EvaluationRecord::synthetic(
                &format!("c{cell:05}-s{s:04}"),
                &inst,
                seen,
                theta,
                correct,
            ));
        }
    }
    Ok(out)
}

/// G / NotG labels of the spec's own model field.
pub fn synth_labels(spec: &SynthSpec) -> Result<PartitionLabels> {
    spec.validate()?;
    let f = model_field(spec)?;
    partition(&spec.grid, &f, &mark_regions(&spec.grid, &spec.seed), spec.frac)
}

/// Seed-set activity `u` for a planted invariance `d`, relative to region
/// activity `v = u d / (2 - d)`. Picks the smallest integer `u` that makes
/// every region level an integer too, so the levels survive `f32` storage
/// exactly; falls back to a large power of two.
fn activity_scale(levels: &[f64]) -> f64 {
    let ratios: Vec<f64> = levels.iter().map(|d| d / (2.0 - d)).collect();
    (1..=MAX_SCALE)
        .map(f64::from)
        .find(|u| ratios.iter().all(|r| ((r * u).round() - r * u).abs() <= 1e-9 * u))
        .unwrap_or(f64::from(MAX_SCALE))
}

/// Activations with planted invariance. Neuron `n` responds only to
/// instance `n mod n_instances`: at the seed-level activity inside the seed
/// set and at the planted level inside G and NotG, plus uniform noise. All
/// other responses are zero.
pub fn synth_activations(spec: &SynthSpec, labels: &PartitionLabels) -> Result<(ActivationMatrix, Vec<ImageMeta>)> {
    spec.validate()?;
    if labels.grid != spec.grid {
        return Err(Error::invalid("labels and spec use different grids"));
    }
    let plan = &spec.activation;
    let u = activity_scale(&[plan.level_g, plan.level_not_g]);
    let exact = u < f64::from(MAX_SCALE);
    let region_level = |d: f64| {
        let v = u * d / (2.0 - d);
        if exact {
            v.round()
        } else {
            v
        }
    };
    let level = |l: RegionLabel| match l {
        RegionLabel::InD => u,
        RegionLabel::G => region_level(plan.level_g),
        RegionLabel::NotG => region_level(plan.level_not_g),
    };
    let n_neurons = plan.n_neurons;
    let per_cell: Vec<(Vec<f32>, Vec<ImageMeta>)> = (0..spec.grid.n_cells())
        .into_par_iter()
        .map(|cell| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed ^ ACTIVATION_SALT);
            rng.set_stream(cell as u64);
            let base = level(labels.labels[cell]);
            let mut data = Vec::new();
            let mut meta = Vec::new();
            for inst in 0..spec.n_instances {
                let (instance_id, seen) = spec.instance(inst);
                for r in 0..plan.images_per_pair {
                    let theta = sample_in_cubelet(&spec.grid, cell, &mut rng);
                    for n in 0..n_neurons {
                        let v = if n % spec.n_instances == inst {
                            let mut e = plan.noise * (2.0 * rng.random::<f64>() - 1.0);
                            if seen == Seen::Partial {
                                e += plan.partial_noise * (2.0 * rng.random::<f64>() - 1.0);
                            }
                            (base + u * e).max(0.0)
                        } else {
                            0.0
                        };
                        data.push(v as f32);
                    }
                    meta.push(ImageMeta {
                        image_id: format!("c{cell:05}-{instance_id}-r{r}"),
                        instance_id: instance_id.clone(),
                        category: String::new(),
                        seen,
                        alpha: theta.alpha(),
                        beta: theta.beta(),
                        gamma: theta.gamma(),
                    });
                }
            }
            (data, meta)
        })
        .collect();
    let mut data = Vec::new();
    let mut meta = Vec::new();
    for (d, m) in per_cell {
        data.extend(d);
        meta.extend(m);
    }
    let n_rows = meta.len();
    Ok((ActivationMatrix::new(n_rows, n_neurons, data)?, meta))
}

/// Ground truth written next to a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub w_star: BTreeMap<Component, LogisticParams>,
    pub mask: ComponentMask,
    pub rng_seed: u64,
    pub samples_per_cubelet: usize,
    pub noiseless: bool,
    pub planted_score_g: f64,
    pub planted_score_not_g: f64,
    pub noise: f64,
    pub partial_noise: f64,
    pub frac: f64,
    pub n_g: usize,
    pub n_not_g: usize,
    pub n_ind: usize,
}

pub fn ground_truth(spec: &SynthSpec, labels: &PartitionLabels) -> GroundTruth {
    GroundTruth {
        w_star: spec.w_star.clone(),
        mask: spec.mask(),
        rng_seed: spec.rng_seed,
        samples_per_cubelet: spec.samples_per_cubelet,
        noiseless: spec.noiseless,
        planted_score_g: spec.activation.level_g,
        planted_score_not_g: spec.activation.level_not_g,
        noise: spec.activation.noise,
        partial_noise: spec.activation.partial_noise,
        frac: spec.frac,
        n_g: labels.count(RegionLabel::G),
        n_not_g: labels.count(RegionLabel::NotG),
        n_ind: labels.count(RegionLabel::InD),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{aggregate, InstanceSet};

    fn small() -> SynthSpec {
        SynthSpec {
            grid: GridSpec::new(8, 4, 8).unwrap(),
            samples_per_cubelet: 20,
            n_instances: 4,
            n_full: 2,
            activation: ActivationPlan {
                n_neurons: 8,
                ..ActivationPlan::default()
            },
            ..SynthSpec::default()
        }
    }

    #[test]
    fn noiseless_cube_is_the_probability_field() {
        let spec = SynthSpec {
            noiseless: true,
            ..small()
        };
        let cube = synth_accuracy_cube(&spec).unwrap();
        let p = probability_field(&spec).unwrap();
        assert!(cube.values.iter().zip(&p).all(|(v, p)| *v == Some(*p)));
    }

    #[test]
    fn certain_outcomes() {
        let always = LogisticParams {
            a: -5.0,
            b: 50.0,
            c: 1.0,
        };
        let spec = SynthSpec {
            w_star: BTreeMap::from([(Component::A, always)]),
            samples_per_cubelet: 1,
            ..small()
        };
        assert!(synth_records(&spec).unwrap().iter().all(|r| r.correct));
        let never = LogisticParams {
            a: 5.0,
            b: 50.0,
            c: 1.0,
        };
        let spec = SynthSpec {
            w_star: BTreeMap::from([(Component::A, never)]),
            ..small()
        };
        assert!(synth_accuracy_cube(&spec)
            .unwrap()
            .values
            .iter()
            .all(|v| *v == Some(0.0)));
    }

    #[test]
    fn records_aggregate_to_the_cube() {
        let spec = small();
        let cube = synth_accuracy_cube(&spec).unwrap();
        let records = synth_records(&spec).unwrap();
        let agg = aggregate(&records, &spec.grid, InstanceSet::All).unwrap();
        assert_eq!(agg.counts, cube.counts);
        for (a, b) in agg.values.iter().zip(&cube.values) {
            assert!((a.unwrap() - b.unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        let spec = small();
        assert_eq!(synth_records(&spec).unwrap(), synth_records(&spec).unwrap());
        let labels = synth_labels(&spec).unwrap();
        assert_eq!(
            synth_activations(&spec, &labels).unwrap(),
            synth_activations(&spec, &labels).unwrap()
        );
        let other = SynthSpec { rng_seed: 1, ..small() };
        assert_ne!(synth_records(&spec).unwrap(), synth_records(&other).unwrap());
    }

    #[test]
    fn scale_makes_levels_integral() {
        assert_eq!(activity_scale(&[0.8, 0.3]), 51.0);
        assert_eq!(activity_scale(&[1.0, 0.0]), 1.0);
    }

    #[test]
    fn spec_json_defaults() {
        let spec: SynthSpec = serde_json::from_str(r#"{"rng_seed": 7}"#).unwrap();
        assert_eq!(spec.rng_seed, 7);
        assert_eq!(spec.mask(), ComponentMask::ALL);
        assert!(serde_json::from_str::<SynthSpec>(r#"{"bogus": 1}"#).is_err());
        let bad = SynthSpec {
            activation: ActivationPlan {
                noise: 0.5,
                ..ActivationPlan::default()
            },
            ..SynthSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
