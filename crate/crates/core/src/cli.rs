//! The `orientgen` command line.
//!
//! Exit codes: 0 ok, 1 validation failure, 2 usage error, 3 runtime error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::{aggregate, mark_regions, project, AccuracyCube, InstanceSet, ProjectionAxis};
use crate::invariance::{
    activity_threshold, dissemination_scatter_rows, network_invariance, normalize, scatter_accuracy_vs_invariance,
    scatter_csv, scatter_dissemination, TauPool,
};
use crate::io::{
    file_sha256, read_activations, read_records, validate_manifest, write_activations, write_atomic, write_records,
    ActivationPaths, ExperimentManifest, MANIFEST_FORMAT_VERSION,
};
use crate::model::{
    compute_fields, fit, model_eval, null_predictors, partition, rho_against_cube, ComponentMask, FitConfig,
    ModelParams, PartitionLabels, RegionLabel,
};
use crate::render::{format_value, heatmap_csv, heatmap_svg};
use crate::rotation::CONVENTION;
use crate::synth::{ground_truth, synth_accuracy_cube, synth_activations, synth_labels, synth_records, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "orientgen", version, about = "Per-orientation generalization analysis")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log more detail to standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a manifest and every file it names.
    Validate(ManifestArg),
    /// Accuracy heatmap (SVG and CSV) for one instance set and projection.
    Heatmap(HeatmapArgs),
    /// Per-cubelet component values.
    Components(ComponentsArgs),
    /// Fit the component model to an accuracy cube.
    Fit(FitArgs),
    /// Split out-of-distribution cubelets into G and NotG.
    Partition(PartitionArgs),
    /// Network invariance scores and scatter tables.
    Invariance(InvarianceArgs),
    /// Generate a synthetic dataset with known ground truth.
    Synth(SynthArgs),
    /// Mean accuracy per region and instance set.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ManifestArg {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "partial")]
    pub set: InstanceSet,
    #[arg(long, default_value = "gamma")]
    pub project: ProjectionAxis,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ComponentsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "A,E,SA,SE")]
    pub mask: ComponentMask,
    #[arg(long)]
    pub fit_config: Option<PathBuf>,
    #[arg(long, default_value = "partial")]
    pub set: InstanceSet,
    /// Fit this accuracy cube (JSON) instead of aggregating the records.
    #[arg(long)]
    pub cube: Option<PathBuf>,
    /// Seed for the random-uniform null predictor.
    #[arg(long, default_value_t = 0)]
    pub null_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output of `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub frac: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InvarianceArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output of `partition`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value = "images")]
    pub tau_pool: TauPool,
    /// Fixed activity gate instead of the 95th percentile.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic dataset spec (JSON); defaults apply to missing fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// A failed command: message for standard error plus exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Json { .. } => EXIT_USAGE,
            Error::Io { .. } | Error::FitFailure { .. } => EXIT_RUNTIME,
            _ => EXIT_VALIDATION,
        };
        let mut message = e.to_string();
        if let Error::FitFailure { trace, .. } = &e {
            let tail: Vec<String> = trace
                .iter()
                .rev()
                .take(5)
                .map(|t| format!("{}:{}", t.iter, t.rho))
                .collect();
            message.push_str(&format!(" (last trace entries: {})", tail.join(", ")));
        }
        Failure { code, message }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_RUNTIME;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::Validate(a) => cmd_validate(&a.manifest),
        Command::Heatmap(a) => cmd_heatmap(&a),
        Command::Components(a) => cmd_components(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Partition(a) => cmd_partition(&a),
        Command::Invariance(a) => cmd_invariance(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn validation(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        message: message.into(),
    }
}

/// Loads a manifest and checks the parts every command depends on.
fn load_manifest(path: &Path) -> std::result::Result<ExperimentManifest, Failure> {
    let m = ExperimentManifest::load(path)?;
    if m.convention != CONVENTION {
        return Err(validation(format!(
            "manifest convention '{}' does not match '{CONVENTION}'",
            m.convention
        )));
    }
    m.grid.validate()?;
    m.seed.validate()?;
    Ok(m)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })
}

fn json_bytes(v: &impl Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("output serializes");
    out.push(b'\n');
    out
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Tool version, convention and input hashes, attached to every output.
fn metadata(inputs: &[&Path]) -> Result<Value> {
    let hashes = inputs
        .iter()
        .map(|p| Ok((p.display().to_string(), Value::String(file_sha256(p)?))))
        .collect::<Result<serde_json::Map<_, _>>>()?;
    Ok(json!({
        "tool": "orientgen",
        "version": env!("CARGO_PKG_VERSION"),
        "convention": CONVENTION,
        "inputs": hashes,
    }))
}

fn manifest_inputs(m: &ExperimentManifest, manifest: &Path, activations: bool) -> Vec<PathBuf> {
    let mut v = vec![manifest.to_path_buf(), m.records_path()];
    if activations {
        if let Some((a, b)) = m.activation_paths() {
            v.push(a);
            v.push(b);
        }
    }
    v
}

fn metadata_for(paths: &[PathBuf]) -> Result<Value> {
    metadata(&paths.iter().map(PathBuf::as_path).collect::<Vec<_>>())
}

pub fn cmd_validate(manifest: &Path) -> CmdResult {
    let m = ExperimentManifest::load(manifest)?;
    let report = validate_manifest(&m);
    if report.is_ok() {
        log::info!("{} is valid", manifest.display());
        return Ok(());
    }
    for f in &report.failures {
        eprintln!("{f}");
    }
    Err(validation(format!(
        "{} problem(s) found in {}",
        report.failures.len(),
        manifest.display()
    )))
}

fn load_cube(m: &ExperimentManifest, set: InstanceSet) -> Result<AccuracyCube> {
    let records = read_records(m.records_path())?;
    aggregate(&records, &m.grid, set)
}

pub fn cmd_heatmap(a: &HeatmapArgs) -> CmdResult {
    let m = load_manifest(&a.manifest)?;
    let cube = load_cube(&m, a.set)?;
    let heat = project(&cube, a.project).with_outline(&m.grid, &m.seed);
    let meta = metadata_for(&manifest_inputs(&m, &a.manifest, false))?;
    create_dir(&a.out)?;
    let stem = format!("heatmap_{}_{}", a.set.name(), a.project.name());
    let (rows, cols) = a.project.display_axes();
    let title = format!("accuracy, {} instances, {} reduced", a.set.name(), a.project.name());
    let svg = heatmap_svg(&heat, &title).replacen(
        "<defs>",
        &format!("<metadata>{}</metadata>\n<defs>", escape_xml(&meta.to_string())),
        1,
    );
    write_atomic(a.out.join(format!("{stem}.svg")), svg.as_bytes())?;
    write_atomic(a.out.join(format!("{stem}.csv")), heatmap_csv(&heat).as_bytes())?;
    let block = json!({
        "metadata": meta,
        "grid": m.grid,
        "seed": m.seed,
        "set": a.set.name(),
        "projection": a.project.name(),
        "rows": heat.rows,
        "cols": heat.cols,
        "row_axis": rows,
        "col_axis": cols,
        "outline": heat.outline,
    });
    write_atomic(a.out.join(format!("{stem}.json")), &json_bytes(&block))?;
    Ok(())
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn cmd_components(a: &ComponentsArgs) -> CmdResult {
    let m = load_manifest(&a.manifest)?;
    let field = compute_fields(&m.grid, &m.seed, &m.camera)?;
    let out = json!({
        "metadata": metadata(&[&a.manifest])?,
        "field": field,
    });
    write_atomic(&a.out, &json_bytes(&out))?;
    Ok(())
}

pub fn cmd_fit(a: &FitArgs) -> CmdResult {
    let m = load_manifest(&a.manifest)?;
    let config: FitConfig = match &a.fit_config {
        Some(p) => serde_json::from_value(read_json(p)?).map_err(|e| Error::Json {
            context: p.display().to_string(),
            source: e,
        })?,
        None => FitConfig::default(),
    };
    config.validate().map_err(|e| Failure {
        code: EXIT_USAGE,
        message: e.to_string(),
    })?;
    let cube = match &a.cube {
        Some(p) => read_cube(p)?,
        None => load_cube(&m, a.set)?,
    };
    if cube.grid != m.grid {
        return Err(validation("accuracy cube grid does not match the manifest grid"));
    }
    let field = compute_fields(&m.grid, &m.seed, &m.camera)?;
    let outcome = fit(&cube, &field, a.mask, &config)?;
    log::info!(
        "fitted rho = {} after {} iterations",
        outcome.rho,
        outcome.trace.len() - 1
    );

    let nulls = null_predictors(&m.grid, &m.seed, a.null_seed);
    let null_rho = |p: &[f64]| rho_against_cube(&cube, p).ok();
    let mut inputs = manifest_inputs(&m, &a.manifest, false);
    inputs.extend(a.fit_config.clone());
    inputs.extend(a.cube.clone());
    let out = json!({
        "metadata": metadata_for(&inputs)?,
        "set": if a.cube.is_some() { Value::Null } else { json!(a.set.name()) },
        "mask": a.mask,
        "params": outcome.params.to_json(),
        "rho": outcome.rho,
        "iterations": outcome.trace.len() - 1,
        "config": config,
        "null": {
            "seed": a.null_seed,
            "random_uniform": null_rho(&nulls.random_uniform),
            "in_distribution": null_rho(&nulls.in_distribution),
        },
        "trace": outcome.trace,
    });
    write_atomic(&a.out, &json_bytes(&out))?;
    Ok(())
}

/// Reads an accuracy cube written by `synth`.
pub fn read_cube(path: &Path) -> Result<AccuracyCube> {
    let cube: AccuracyCube = serde_json::from_value(read_json(path)?).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })?;
    cube.grid.validate()?;
    let n = cube.grid.n_cells();
    if cube.values.len() != n || cube.counts.len() != n {
        return Err(Error::Format(format!(
            "{}: cube does not match its grid",
            path.display()
        )));
    }
    if cube.values.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Format(format!("{}: accuracy outside [0, 1]", path.display())));
    }
    Ok(cube)
}

/// Reads the fitted parameters written by `fit`.
pub fn read_fit(path: &Path) -> Result<ModelParams> {
    let v = read_json(path)?;
    let mask: ComponentMask =
        serde_json::from_value(v.get("mask").cloned().unwrap_or(Value::Null)).map_err(|e| Error::Json {
            context: format!("{}: mask", path.display()),
            source: e,
        })?;
    if mask.is_empty() {
        return Err(Error::invalid(format!("{}: empty mask", path.display())));
    }
    ModelParams::from_json(v.get("params").unwrap_or(&Value::Null), mask)
}

pub fn read_labels(path: &Path) -> Result<PartitionLabels> {
    serde_json::from_value(read_json(path)?).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })
}

fn labels_json(labels: &PartitionLabels, meta: Value) -> Value {
    json!({
        "metadata": meta,
        "grid": labels.grid,
        "frac": labels.frac,
        "threshold": labels.threshold,
        "counts": {
            "InD": labels.count(RegionLabel::InD),
            "G": labels.count(RegionLabel::G),
            "NotG": labels.count(RegionLabel::NotG),
        },
        "labels": labels.labels,
    })
}

pub fn cmd_partition(a: &PartitionArgs) -> CmdResult {
    if !(a.frac > 0.0 && a.frac < 1.0) {
        return Err(Failure {
            code: EXIT_USAGE,
            message: format!("--frac must lie in (0, 1), got {}", a.frac),
        });
    }
    let m = load_manifest(&a.manifest)?;
    let params = read_fit(&a.fit)?;
    let field = compute_fields(&m.grid, &m.seed, &m.camera)?;
    let f = model_eval(&field, &params);
    let labels = partition(&m.grid, &f, &mark_regions(&m.grid, &m.seed), a.frac)?;
    let meta = metadata(&[&a.manifest, &a.fit])?;
    write_atomic(&a.out, &json_bytes(&labels_json(&labels, meta)))?;
    Ok(())
}

pub fn cmd_invariance(a: &InvarianceArgs) -> CmdResult {
    let m = load_manifest(&a.manifest)?;
    let (matrix_path, sidecar_path) = m
        .activation_paths()
        .ok_or_else(|| validation(format!("{} names no activation files", a.manifest.display())))?;
    let labels = read_labels(&a.labels)?;
    if labels.grid != m.grid {
        return Err(validation("labels grid does not match the manifest grid"));
    }
    let (matrix, meta_rows) = read_activations(&matrix_path, &sidecar_path)?;
    let tensor = normalize(&matrix, &meta_rows, &m.grid)?;
    let tau = match a.tau {
        Some(t) if t.is_finite() && t >= 0.0 => t,
        Some(t) => {
            return Err(Failure {
                code: EXIT_USAGE,
                message: format!("--tau must be finite and non-negative, got {t}"),
            })
        }
        None => activity_threshold(&tensor, a.tau_pool)?,
    };
    log::info!("activity gate tau = {tau}");

    let records = read_records(m.records_path())?;
    let cubes: Vec<(InstanceSet, AccuracyCube)> = [InstanceSet::Full, InstanceSet::Partial]
        .into_iter()
        .filter_map(|s| aggregate(&records, &m.grid, s).ok().map(|c| (s, c)))
        .collect();
    let cube_refs: Vec<(InstanceSet, &AccuracyCube)> = cubes.iter().map(|(s, c)| (*s, c)).collect();
    let cube_for = |set: InstanceSet| cubes.iter().find(|(s, _)| *s == set).map(|(_, c)| c);

    let reports: serde_json::Map<String, Value> = [InstanceSet::All, InstanceSet::Full, InstanceSet::Partial]
        .into_iter()
        .map(|s| {
            let r = network_invariance(&tensor, &labels, s, tau)?;
            Ok((
                s.name().to_string(),
                serde_json::to_value(r).expect("report serializes"),
            ))
        })
        .collect::<Result<_>>()?;

    let accuracy_rows = scatter_accuracy_vs_invariance(&tensor, &cube_refs, &labels, tau)?;
    let dissemination = scatter_dissemination(
        &tensor.restrict(InstanceSet::Full),
        &tensor.restrict(InstanceSet::Partial),
        &labels,
        tau,
    )?;
    let dissemination_rows = dissemination_scatter_rows(
        &dissemination,
        cube_for(InstanceSet::Full),
        cube_for(InstanceSet::Partial),
    );

    let mut inputs = manifest_inputs(&m, &a.manifest, true);
    inputs.push(a.labels.clone());
    let meta = metadata_for(&inputs)?;
    create_dir(&a.out)?;
    let out = json!({
        "metadata": meta,
        "tau": tau,
        "tau_pool": if a.tau.is_some() { Value::Null } else { json!(a.tau_pool) },
        "n_neurons": tensor.n_neurons(),
        "dropped_neurons": tensor.dropped_neurons,
        "clamped_activations": tensor.clamped,
        "reports": reports,
    });
    write_atomic(a.out.join("invariance_report.json"), &json_bytes(&out))?;
    write_atomic(
        a.out.join("scatter_accuracy.csv"),
        scatter_csv(&accuracy_rows).as_bytes(),
    )?;
    write_atomic(
        a.out.join("scatter_dissemination.csv"),
        scatter_csv(&dissemination_rows).as_bytes(),
    )?;
    write_atomic(
        a.out.join("invariance.meta.json"),
        &json_bytes(&json!({ "metadata": meta })),
    )?;
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> CmdResult {
    let spec: SynthSpec = match &a.spec {
        Some(p) => serde_json::from_value(read_json(p)?).map_err(|e| Error::Json {
            context: p.display().to_string(),
            source: e,
        })?,
        None => SynthSpec::default(),
    };
    spec.validate().map_err(|e| Failure {
        code: EXIT_USAGE,
        message: e.to_string(),
    })?;
    create_dir(&a.out)?;
    let labels = synth_labels(&spec)?;
    let records = synth_records(&spec)?;
    let cube = synth_accuracy_cube(&spec)?;
    let (matrix, meta_rows) = synth_activations(&spec, &labels)?;
    write_records(a.out.join("records.jsonl"), &records)?;
    write_atomic(a.out.join("accuracy_cube.json"), &json_bytes(&cube))?;
    write_activations(
        a.out.join("activations.ogat"),
        a.out.join("activations.jsonl"),
        &matrix,
        &meta_rows,
    )?;
    let manifest = ExperimentManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        records: "records.jsonl".into(),
        activations: Some(ActivationPaths {
            matrix: "activations.ogat".into(),
            sidecar: "activations.jsonl".into(),
        }),
        seed: spec.seed.clone(),
        grid: spec.grid,
        convention: CONVENTION.into(),
        camera: spec.camera,
        repetition: 0,
        diversity: spec.n_full as u32,
        base_dir: a.out.clone(),
    };
    write_atomic(
        a.out.join("manifest.json"),
        format!("{}\n", manifest.to_json()).as_bytes(),
    )?;
    let truth = json!({
        "ground_truth": ground_truth(&spec, &labels),
        "spec": spec,
    });
    write_atomic(a.out.join("ground_truth.json"), &json_bytes(&truth))?;
    let meta = json!({
        "tool": "orientgen",
        "version": env!("CARGO_PKG_VERSION"),
        "convention": CONVENTION,
        "inputs": {},
    });
    write_atomic(
        a.out.join("labels_truth.json"),
        &json_bytes(&labels_json(&labels, meta)),
    )?;
    Ok(())
}

pub const REPORT_HEADER: &str = "set,region,mean_accuracy,n_records,n_cubelets";

pub fn cmd_report(a: &ReportArgs) -> CmdResult {
    let m = load_manifest(&a.manifest)?;
    let labels = read_labels(&a.labels)?;
    if labels.grid != m.grid {
        return Err(validation("labels grid does not match the manifest grid"));
    }
    let records = read_records(m.records_path())?;
    let mut csv = String::from(REPORT_HEADER);
    csv.push('\n');
    for set in [InstanceSet::Full, InstanceSet::Partial] {
        let cube = match aggregate(&records, &m.grid, set) {
            Ok(c) => Some(c),
            Err(Error::EmptyInput(_)) => None,
            Err(e) => return Err(e.into()),
        };
        for region in [RegionLabel::InD, RegionLabel::G, RegionLabel::NotG] {
            let in_region = |i: usize| labels.labels[i] == region;
            let stats = cube.as_ref().and_then(|c| c.weighted_mean_over(in_region));
            let n_cubelets = cube
                .as_ref()
                .map(|c| {
                    (0..c.values.len())
                        .filter(|&i| in_region(i) && c.values[i].is_some())
                        .count()
                })
                .unwrap_or(0);
            let (mean, n) = match stats {
                Some((mean, n)) => (format_value(mean), n),
                None => (String::new(), 0),
            };
            csv.push_str(&format!("{},{},{mean},{n},{n_cubelets}\n", set.name(), region.name()));
        }
    }
    let mut inputs = manifest_inputs(&m, &a.manifest, false);
    inputs.push(a.labels.clone());
    let meta = metadata_for(&inputs)?;
    write_atomic(&a.out, csv.as_bytes())?;
    let meta_path = PathBuf::from(format!("{}.meta.json", a.out.display()));
    write_atomic(meta_path, &json_bytes(&json!({ "metadata": meta })))?;
    Ok(())
}
