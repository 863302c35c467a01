//! File formats: evaluation records (JSONL), activation matrices (`OGAT`
//! binary plus a JSONL sidecar) and experiment manifests (JSON).
//!
//! All angles are radians. There is no unit field; degrees are not accepted.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, SeedRegion};
use crate::rotation::{Orientation, CAMERA_AXIS, CONVENTION};

pub const OGAT_MAGIC: [u8; 4] = *b"OGAT";
pub const OGAT_VERSION: u32 = 1;
const OGAT_HEADER_LEN: usize = 16;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Seen {
    Full,
    Partial,
}

/// One rendered image's classification outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord", into = "RawRecord")]
pub struct EvaluationRecord {
    pub image_id: String,
    pub instance_id: String,
    pub category: String,
    pub seen: Seen,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub predicted: String,
    pub correct: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    image_id: String,
    instance_id: String,
    category: String,
    seen: Seen,
    alpha: f64,
    beta: f64,
    gamma: f64,
    predicted: String,
    correct: u8,
}

impl TryFrom<RawRecord> for EvaluationRecord {
    type Error = String;

    fn try_from(r: RawRecord) -> std::result::Result<Self, String> {
        let correct = match r.correct {
            0 => false,
            1 => true,
            other => return Err(format!("correct must be 0 or 1, got {other}")),
        };
        let theta = Orientation::new(r.alpha, r.beta, r.gamma).map_err(|e| e.to_string())?;
        Ok(EvaluationRecord {
            image_id: r.image_id,
            instance_id: r.instance_id,
            category: r.category,
            seen: r.seen,
            alpha: theta.alpha(),
            beta: theta.beta(),
            gamma: theta.gamma(),
            predicted: r.predicted,
            correct,
        })
    }
}

impl From<EvaluationRecord> for RawRecord {
    fn from(r: EvaluationRecord) -> Self {
        RawRecord {
            image_id: r.image_id,
            instance_id: r.instance_id,
            category: r.category,
            seen: r.seen,
            alpha: r.alpha,
            beta: r.beta,
            gamma: r.gamma,
            predicted: r.predicted,
            correct: r.correct as u8,
        }
    }
}

impl EvaluationRecord {
    /// Record whose prediction is consistent with `correct`.
    pub fn synthetic(image_id: &str, instance_id: &str, seen: Seen, theta: Orientation, correct: bool) -> Self {
        EvaluationRecord {
            image_id: image_id.to_string(),
            instance_id: instance_id.to_string(),
            category: "synthetic".to_string(),
            seen,
            alpha: theta.alpha(),
            beta: theta.beta(),
            gamma: theta.gamma(),
            predicted: if correct {
                instance_id.to_string()
            } else {
                format!("{instance_id}~")
            },
            correct,
        }
    }

    pub fn orientation(&self) -> Orientation {
        Orientation::new(self.alpha, self.beta, self.gamma).expect("records hold finite angles")
    }

    fn check_consistency(&self) -> std::result::Result<(), String> {
        let matches = self.predicted == self.instance_id;
        if matches != self.correct {
            return Err(format!(
                "image '{}': correct={} but predicted '{}' vs instance '{}'",
                self.image_id, self.correct as u8, self.predicted, self.instance_id
            ));
        }
        Ok(())
    }
}

/// Streams records from JSONL, attaching 1-based line numbers to errors.
/// Blank lines are skipped.
pub struct RecordReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    source: String,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R, source: impl Into<String>) -> Self {
        RecordReader {
            lines: reader.lines(),
            line: 0,
            source: source.into(),
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<EvaluationRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(Error::io(&self.source, e))),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<EvaluationRecord>(&text).map_err(|e| Error::Parse {
                path: self.source.clone(),
                line: self.line,
                message: e.to_string(),
            });
            return Some(parsed.and_then(|r| {
                r.check_consistency().map_err(|message| Error::Validation {
                    path: self.source.clone(),
                    line: self.line,
                    message,
                })?;
                Ok(r)
            }));
        }
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<EvaluationRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    RecordReader::new(BufReader::new(file), path.display().to_string()).collect()
}

pub fn write_records_to(out: &mut impl Write, records: &[EvaluationRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r).map_err(|e| Error::Json {
            context: format!("record '{}'", r.image_id),
            source: e,
        })?;
        out.write_all(b"\n").map_err(|e| Error::io("<records>", e))?;
    }
    Ok(())
}

pub fn write_records(path: impl AsRef<Path>, records: &[EvaluationRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_records_to(&mut buf, records)?;
    write_atomic(path, &buf)
}

/// Metadata for one row of an activation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageMeta {
    pub image_id: String,
    pub instance_id: String,
    #[serde(default)]
    pub category: String,
    pub seen: Seen,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ImageMeta {
    pub fn orientation(&self) -> Result<Orientation> {
        Orientation::new(self.alpha, self.beta, self.gamma)
    }
}

/// Row-major `f32` matrix, rows = images, columns = neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f32>,
}

impl ActivationMatrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::invalid(format!(
                "{n_rows}x{n_cols} matrix needs {} values, got {}",
                n_rows * n_cols,
                data.len()
            )));
        }
        Ok(ActivationMatrix { n_rows, n_cols, data })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.n_cols + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.n_cols..(row + 1) * self.n_cols]
    }
}

/// Encodes `OGAT`: magic, then u32 version, u32 rows, u32 cols (all
/// little-endian), then row-major little-endian f32.
pub fn encode_ogat(m: &ActivationMatrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.n_rows).map_err(|_| Error::Format("row count exceeds u32".into()))?;
    let cols = u32::try_from(m.n_cols).map_err(|_| Error::Format("column count exceeds u32".into()))?;
    let mut out = Vec::with_capacity(OGAT_HEADER_LEN + 4 * m.data.len());
    out.extend_from_slice(&OGAT_MAGIC);
    out.extend_from_slice(&OGAT_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_ogat(bytes: &[u8]) -> Result<ActivationMatrix> {
    if bytes.len() < OGAT_HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} bytes, need {OGAT_HEADER_LEN}",
            bytes.len()
        )));
    }
    if bytes[..4] != OGAT_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected OGAT", &bytes[..4])));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != OGAT_VERSION {
        return Err(Error::Format(format!("unsupported OGAT version {version}")));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("matrix dimensions overflow".into()))?;
    let payload = &bytes[OGAT_HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "truncated payload: {} bytes for a {rows}x{cols} matrix ({expected} expected)",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after {rows}x{cols} matrix",
            payload.len() - expected
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(ActivationMatrix {
        n_rows: rows,
        n_cols: cols,
        data,
    })
}

pub fn read_ogat(path: impl AsRef<Path>) -> Result<ActivationMatrix> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_ogat(&bytes)
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Vec<ImageMeta>> {
    let path = path.as_ref();
    let source = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen_ids = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: ImageMeta = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: source.clone(),
            line: n + 1,
            message: e.to_string(),
        })?;
        if let Err(e) = meta.orientation() {
            return Err(Error::Validation {
                path: source,
                line: n + 1,
                message: e.to_string(),
            });
        }
        if !seen_ids.insert(meta.image_id.clone()) {
            return Err(Error::Validation {
                path: source,
                line: n + 1,
                message: format!("duplicate image_id '{}'", meta.image_id),
            });
        }
        out.push(meta);
    }
    Ok(out)
}

/// Reads a matrix and its sidecar, checking that they describe the same rows.
pub fn read_activations(
    matrix_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<(ActivationMatrix, Vec<ImageMeta>)> {
    let matrix = read_ogat(matrix_path)?;
    let meta = read_sidecar(sidecar_path)?;
    if meta.len() != matrix.n_rows {
        return Err(Error::Format(format!(
            "row-count mismatch: matrix has {} rows, sidecar has {} lines",
            matrix.n_rows,
            meta.len()
        )));
    }
    Ok((matrix, meta))
}

pub fn write_activations(
    matrix_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
    matrix: &ActivationMatrix,
    meta: &[ImageMeta],
) -> Result<()> {
    if meta.len() != matrix.n_rows {
        return Err(Error::invalid(format!(
            "{} metadata rows for a {}-row matrix",
            meta.len(),
            matrix.n_rows
        )));
    }
    let mut side = Vec::new();
    for m in meta {
        serde_json::to_writer(&mut side, m).map_err(|e| Error::Json {
            context: "image metadata".into(),
            source: e,
        })?;
        side.push(b'\n');
    }
    write_atomic(matrix_path, &encode_ogat(matrix)?)?;
    write_atomic(sidecar_path, &side)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationPaths {
    pub matrix: PathBuf,
    pub sidecar: PathBuf,
}

/// One experiment (one repetition at one diversity setting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub format_version: u32,
    pub records: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activations: Option<ActivationPaths>,
    pub seed: SeedRegion,
    #[serde(default)]
    pub grid: GridSpec,
    pub convention: String,
    #[serde(default = "default_camera")]
    pub camera: [f64; 3],
    #[serde(default)]
    pub repetition: u32,
    /// Number of fully-seen instances.
    #[serde(default)]
    pub diversity: u32,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_camera() -> [f64; 3] {
    CAMERA_AXIS
}

impl ExperimentManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: ExperimentManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
            context: path.display().to_string(),
            source: e,
        })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn records_path(&self) -> PathBuf {
        self.resolve(&self.records)
    }

    pub fn activation_paths(&self) -> Option<(PathBuf, PathBuf)> {
        self.activations
            .as_ref()
            .map(|a| (self.resolve(&a.matrix), self.resolve(&a.sidecar)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks everything a manifest refers to and reports every failure found.
pub fn validate_manifest(m: &ExperimentManifest) -> ValidationReport {
    let mut failures = Vec::new();
    if m.format_version != MANIFEST_FORMAT_VERSION {
        failures.push(format!(
            "format_version {} unsupported (expected {MANIFEST_FORMAT_VERSION})",
            m.format_version
        ));
    }
    if m.convention != CONVENTION {
        failures.push(format!("convention '{}' does not match '{CONVENTION}'", m.convention));
    }
    let cam_norm = m.camera.iter().map(|c| c * c).sum::<f64>().sqrt();
    if cam_norm.is_nan() || (cam_norm - 1.0).abs() > 1e-9 {
        failures.push(format!("camera axis must be a unit vector, norm is {cam_norm}"));
    }
    if let Err(e) = m.grid.validate() {
        failures.push(e.to_string());
    }
    failures.extend(m.seed.failures());

    let records = m.records_path();
    if !records.is_file() {
        failures.push(format!("records file missing: {}", records.display()));
    } else {
        match read_records(&records) {
            Ok(r) if r.is_empty() => failures.push(format!("records file is empty: {}", records.display())),
            Ok(_) => {}
            Err(e) => failures.push(e.to_string()),
        }
    }

    if let Some((matrix, sidecar)) = m.activation_paths() {
        let mut present = true;
        for p in [&matrix, &sidecar] {
            if !p.is_file() {
                failures.push(format!("activation file missing: {}", p.display()));
                present = false;
            }
        }
        if present {
            if let Err(e) = read_activations(&matrix, &sidecar) {
                failures.push(e.to_string());
            }
        }
    }
    ValidationReport { failures }
}

/// Writes via a temporary file in the destination directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        w.write_all(bytes).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    const LINE: &str = r#"{"image_id":"i0","instance_id":"a","category":"sm","seen":"partial","alpha":0.1,"beta":0.2,"gamma":-0.3,"predicted":"a","correct":1}"#;

    fn parse(text: &str) -> Vec<Result<EvaluationRecord>> {
        RecordReader::new(Cursor::new(text.as_bytes()), "mem").collect()
    }

    #[test]
    fn one_line_one_record() {
        let out = parse(&format!("{LINE}\n"));
        assert_eq!(out.len(), 1);
        let r = out[0].as_ref().unwrap();
        assert!(r.correct);
        assert_eq!(r.seen, Seen::Partial);
        assert_eq!(r.gamma, -0.3);
    }

    #[test]
    fn inconsistent_prediction_names_line() {
        let bad = LINE.replace(r#""predicted":"a""#, r#""predicted":"b""#);
        let out = parse(&format!("{LINE}\n{bad}\n"));
        match &out[1] {
            Err(Error::Validation { line, .. }) => assert_eq!(*line, 2),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let cases = [
            "{not json",
            r#"{"image_id":"i0"}"#,
            &LINE.replace("partial", "sideways"),
            &LINE.replace(r#""correct":1"#, r#""correct":2"#),
            &LINE.replace("0.1", "\"x\""),
        ];
        for case in cases {
            let out = parse(&format!("\n{LINE}\n{case}\n"));
            match &out[1] {
                Err(Error::Parse { line, .. }) => assert_eq!(*line, 3, "{case}"),
                other => panic!("{case}: {other:?}"),
            }
        }
    }

    #[test]
    fn angles_wrap_on_ingest() {
        let line = LINE.replace("0.1", "6.383185307179586");
        let r = parse(&line).remove(0).unwrap();
        assert!((r.alpha - 0.1).abs() < 1e-12);
    }

    #[test]
    fn known_bytes_decode_exactly() {
        let mut bytes = b"OGAT".to_vec();
        for w in [1u32, 2, 3] {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        let vals = [0.0f32, 1.5, -2.25, f32::MAX, 1e-30, 7.0];
        for v in vals {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let m = decode_ogat(&bytes).unwrap();
        assert_eq!((m.n_rows, m.n_cols), (2, 3));
        assert_eq!(m.data, vals);
        assert_eq!(m.get(1, 0), f32::MAX);
        assert_eq!(encode_ogat(&m).unwrap(), bytes);
    }

    #[test]
    fn corrupt_headers_rejected() {
        let m = ActivationMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let good = encode_ogat(&m).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_ogat(&bad_magic), Err(Error::Format(_))));
        assert!(matches!(decode_ogat(&good[..good.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(decode_ogat(&good[..10]), Err(Error::Format(_))));
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(decode_ogat(&bad_version).is_err());
        let mut trailing = good;
        trailing.push(0);
        assert!(decode_ogat(&trailing).is_err());
    }

    fn meta(n: usize) -> Vec<ImageMeta> {
        (0..n)
            .map(|i| ImageMeta {
                image_id: format!("img{i}"),
                instance_id: "a".into(),
                category: String::new(),
                seen: Seen::Full,
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
            })
            .collect()
    }

    #[test]
    fn sidecar_row_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (mp, sp) = (dir.path().join("a.ogat"), dir.path().join("a.jsonl"));
        let m = ActivationMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        write_activations(&mp, &sp, &m, &meta(2)).unwrap();
        let mut extra = fs::read_to_string(&sp).unwrap();
        extra.push_str(&serde_json::to_string(&meta(3)[2]).unwrap());
        extra.push('\n');
        fs::write(&sp, extra).unwrap();
        assert!(matches!(read_activations(&mp, &sp), Err(Error::Format(_))));
    }

    #[test]
    fn duplicate_image_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("s.jsonl");
        let mut m = meta(2);
        m[1].image_id = "img0".into();
        let text: String = m.iter().map(|x| serde_json::to_string(x).unwrap() + "\n").collect();
        fs::write(&sp, text).unwrap();
        assert!(matches!(read_sidecar(&sp), Err(Error::Validation { line: 2, .. })));
    }

    fn manifest_in(dir: &Path) -> ExperimentManifest {
        fs::write(dir.join("records.jsonl"), format!("{LINE}\n")).unwrap();
        ExperimentManifest {
            format_version: 1,
            records: "records.jsonl".into(),
            activations: None,
            seed: SeedRegion::central_band(),
            grid: GridSpec::default(),
            convention: CONVENTION.into(),
            camera: CAMERA_AXIS,
            repetition: 0,
            diversity: 8,
            base_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn valid_manifest_has_no_failures() {
        let dir = tempfile::tempdir().unwrap();
        let report = validate_manifest(&manifest_in(dir.path()));
        assert!(report.is_ok(), "{:?}", report.failures);
    }

    #[test]
    fn inverted_seed_box_is_one_failure() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest_in(dir.path());
        m.seed.boxes[0].beta = [0.3, 0.1];
        assert_eq!(validate_manifest(&m).failures.len(), 1);
    }

    #[test]
    fn missing_activation_file_reported_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest_in(dir.path());
        m.activations = Some(ActivationPaths {
            matrix: "nope.ogat".into(),
            sidecar: "nope.jsonl".into(),
        });
        m.convention = "intrinsic-zyx".into();
        let report = validate_manifest(&m);
        assert_eq!(report.failures.len(), 3);
        assert!(report.failures.iter().any(|f| f.contains("nope.ogat")));
    }

    #[test]
    fn manifest_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_in(dir.path());
        let path = dir.path().join("manifest.json");
        fs::write(&path, m.to_json()).unwrap();
        let back = ExperimentManifest::load(&path).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn ogat_round_trip_bit_exact(rows in 0usize..12, cols in 0usize..12, seed in any::<u64>()) {
            let data: Vec<f32> = (0..rows * cols)
                .map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 16) as u32))
                .collect();
            let m = ActivationMatrix::new(rows, cols, data).unwrap();
            let bytes = encode_ogat(&m).unwrap();
            let back = decode_ogat(&bytes).unwrap();
            prop_assert_eq!(encode_ogat(&back).unwrap(), bytes);
            prop_assert_eq!(back.n_rows, rows);
        }
    }
}
