//! File formats and run configuration.
//!
//! Tables are CSV with a header row; everything else is JSON. Floats are
//! written in Rust's shortest round-trip form, so a write/read cycle is
//! value-identical.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};
use nalgebra::{Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calib::{CalibConfig, CalibrationResult, CandidateStats, DetectionSummary};
use crate::camera::{CameraIntrinsics, CornerSet, Event, DEFAULT_EDGE_PITCH};
use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::lidar::{BoardSpec, LidarBoardFeatures, LidarConfig, LidarPoint, RingCloud};
use crate::synth::{NoiseConfig, SceneConfig, SimDataset};

pub const CLOUD_HEADER: [&str; 5] = ["x", "y", "z", "ring", "t"];
pub const CORNERS_HEADER: [&str; 4] = ["frame_id", "corner_index", "u", "v"];
pub const EVENTS_HEADER: [&str; 4] = ["t", "x", "y", "polarity"];
pub const SWEEP_HEADER: [&str; 5] = ["sigma_cm", "egt_rot_deg", "egt_trans_m", "mge_m", "normal_err_deg"];

pub const SCENE_FILE: &str = "scene.json";
pub const RESULT_FILE: &str = "result.json";

pub const ENV_DATASET_DIR: &str = "LCALIB_DATASET_DIR";
pub const ENV_OUTPUT_DIR: &str = "LCALIB_OUTPUT_DIR";
pub const ENV_SEED: &str = "LCALIB_SEED";

// ---------------------------------------------------------------------------
// CSV plumbing
// ---------------------------------------------------------------------------

/// Header-indexed CSV reader that reports positions 1-based.
struct Table {
    reader: csv::Reader<BufReader<File>>,
    columns: Vec<Option<usize>>,
    width: usize,
}

impl Table {
    /// Opens `path`; `required` columns must be present, `optional` may not.
    fn open(path: &Path, required: &[&str], optional: &[&str]) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = ReaderBuilder::new()
            .trim(Trim::All)
            .flexible(true)
            .from_reader(BufReader::new(file));
        let header = reader.headers()?.clone();
        let find = |name: &str| header.iter().position(|h| h == name);
        let mut columns = Vec::with_capacity(required.len() + optional.len());
        for name in required {
            columns.push(Some(find(name).ok_or_else(|| Error::MissingColumn((*name).to_string()))?));
        }
        columns.extend(optional.iter().map(|name| find(name)));
        Ok(Self {
            reader,
            columns,
            width: header.len(),
        })
    }

    /// Visits every data row as `(line, record)`.
    fn rows(&mut self, mut f: impl FnMut(&Row) -> Result<()>) -> Result<()> {
        let mut record = StringRecord::new();
        while self.reader.read_record(&mut record)? {
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.len() != self.width {
                return Err(Error::Parse {
                    line,
                    column: record.len().min(self.width) + 1,
                    message: format!("expected {} fields, found {}", self.width, record.len()),
                });
            }
            f(&Row {
                record: &record,
                columns: &self.columns,
                line,
            })?;
        }
        Ok(())
    }
}

struct Row<'a> {
    record: &'a StringRecord,
    columns: &'a [Option<usize>],
    line: usize,
}

impl Row<'_> {
    /// Raw text of logical column `k`, `None` when the column is absent.
    fn text(&self, k: usize) -> Option<(&str, usize)> {
        self.columns[k].map(|c| (&self.record[c], c + 1))
    }

    fn error(&self, column: usize, message: String) -> Error {
        Error::Parse {
            line: self.line,
            column,
            message,
        }
    }

    fn f64(&self, k: usize) -> Result<f64> {
        let (s, col) = self.text(k).expect("required column");
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.error(col, format!("expected a finite number, got `{s}`")))
    }

    fn opt_f64(&self, k: usize) -> Result<Option<f64>> {
        match self.text(k) {
            Some(("", _)) | None => Ok(None),
            Some(_) => self.f64(k).map(Some),
        }
    }

    fn int<T: std::str::FromStr>(&self, k: usize) -> Result<T> {
        let (s, col) = self.text(k).expect("required column");
        s.parse::<T>()
            .map_err(|_| self.error(col, format!("expected an integer, got `{s}`")))
    }

    fn opt_int<T: std::str::FromStr>(&self, k: usize) -> Result<Option<T>> {
        match self.text(k) {
            Some(("", _)) | None => Ok(None),
            Some(_) => self.int(k).map(Some),
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(WriterBuilder::new().from_writer(BufWriter::new(file)))
}

fn finish<W: Write>(writer: csv::Writer<W>, path: &Path) -> Result<()> {
    writer
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

fn opt_text<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Clouds, corners and events
// ---------------------------------------------------------------------------

/// Reads a cloud CSV. `ring` and `t` may be missing or empty.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<RingCloud> {
    let mut table = Table::open(path.as_ref(), &CLOUD_HEADER[..3], &CLOUD_HEADER[3..])?;
    let mut points = Vec::new();
    table.rows(|row| {
        let xyz = Vector3::new(row.f64(0)?, row.f64(1)?, row.f64(2)?);
        let ring = row.opt_int::<u16>(3)?;
        let timestamp = row.opt_f64(4)?;
        points.push(LidarPoint { xyz, ring, timestamp });
        Ok(())
    })?;
    let ring_count = points.iter().filter_map(|p| p.ring).max().map_or(0, |r| r as usize + 1);
    Ok(RingCloud { points, ring_count })
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &RingCloud) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(CLOUD_HEADER)?;
    for p in &cloud.points {
        w.write_record([
            p.xyz.x.to_string(),
            p.xyz.y.to_string(),
            p.xyz.z.to_string(),
            opt_text(p.ring),
            opt_text(p.timestamp),
        ])?;
    }
    finish(w, path)
}

/// Reads every frame of a corners CSV, ordered by `frame_id`. Each frame
/// must list corner indices `0..n` exactly once.
pub fn load_corner_sets(path: impl AsRef<Path>) -> Result<Vec<CornerSet>> {
    let mut table = Table::open(path.as_ref(), &CORNERS_HEADER, &[])?;
    let mut frames: std::collections::BTreeMap<usize, Vec<Option<Vector2<f64>>>> = Default::default();
    let mut last_line = 1;
    table.rows(|row| {
        last_line = row.line;
        let frame: usize = row.int(0)?;
        let index: usize = row.int(1)?;
        let uv = Vector2::new(row.f64(2)?, row.f64(3)?);
        let slots = frames.entry(frame).or_default();
        if slots.len() <= index {
            slots.resize(index + 1, None);
        }
        if slots[index].replace(uv).is_some() {
            return Err(row.error(2, format!("corner {index} of frame {frame} listed twice")));
        }
        Ok(())
    })?;
    frames
        .into_iter()
        .map(|(frame_id, slots)| {
            let corners = slots
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    c.ok_or_else(|| Error::Parse {
                        line: last_line,
                        column: 2,
                        message: format!("frame {frame_id} is missing corner {k}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CornerSet {
                frame_id,
                corners,
                detected: true,
            })
        })
        .collect()
}

/// Reads a single-frame corners CSV. A header-only file is an undetected
/// frame whose id is taken from a `frame_NNNN` file name (0 otherwise).
pub fn load_corners(path: impl AsRef<Path>) -> Result<CornerSet> {
    let path = path.as_ref();
    let mut sets = load_corner_sets(path)?;
    match sets.len() {
        0 => Ok(CornerSet::missing(frame_index(path).unwrap_or(0))),
        1 => Ok(sets.remove(0)),
        n => Err(Error::DegenerateInput(format!("{}: {n} frames in a single-frame file", path.display()))),
    }
}

pub fn write_corners(path: impl AsRef<Path>, set: &CornerSet) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(CORNERS_HEADER)?;
    if set.detected {
        for (k, c) in set.corners.iter().enumerate() {
            w.write_record([set.frame_id.to_string(), k.to_string(), c.x.to_string(), c.y.to_string()])?;
        }
    }
    finish(w, path)
}

/// Reads an events CSV; polarity must be `1` or `-1`.
pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<Event>> {
    let mut table = Table::open(path.as_ref(), &EVENTS_HEADER, &[])?;
    let mut events = Vec::new();
    table.rows(|row| {
        let t = row.f64(0)?;
        let u = Vector2::new(row.f64(1)?, row.f64(2)?);
        let polarity: i8 = row.int(3)?;
        if polarity != 1 && polarity != -1 {
            return Err(row.error(4, format!("polarity must be 1 or -1, got {polarity}")));
        }
        events.push(Event { u, t, polarity });
        Ok(())
    })?;
    Ok(events)
}

pub fn write_events(path: impl AsRef<Path>, events: &[Event]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(EVENTS_HEADER)?;
    for e in events {
        w.write_record([e.t.to_string(), e.u.x.to_string(), e.u.y.to_string(), e.polarity.to_string()])?;
    }
    finish(w, path)
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

pub fn cloud_path(dir: impl AsRef<Path>, frame: usize) -> PathBuf {
    dir.as_ref().join(format!("frame_{frame:04}.cloud.csv"))
}

pub fn corners_path(dir: impl AsRef<Path>, frame: usize) -> PathBuf {
    dir.as_ref().join(format!("frame_{frame:04}.corners.csv"))
}

/// Frame number of a `frame_NNNN...` file name.
pub fn frame_index(path: &Path) -> Option<usize> {
    let name = path.file_name()?.to_str()?;
    let digits: String = name.strip_prefix("frame_")?.chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

/// Ground truth stored next to a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
}

/// Frames read from a dataset directory, plus its scene file when present.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub clouds: Vec<RingCloud>,
    pub corners: Vec<CornerSet>,
    pub scene: Option<SceneFile>,
}

/// Writes `frame_NNNN.cloud.csv`, `frame_NNNN.corners.csv` and `scene.json`.
pub fn write_dataset(dir: impl AsRef<Path>, data: &SimDataset) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    for (i, (cloud, corners)) in data.clouds.iter().zip(&data.corners).enumerate() {
        write_cloud(cloud_path(dir, i), cloud)?;
        write_corners(corners_path(dir, i), corners)?;
    }
    write_json(
        dir.join(SCENE_FILE),
        &SceneFile {
            scene: data.scene.clone(),
            noise: data.noise,
        },
    )
}

/// Loads every `frame_NNNN` pair of `dir`. Frames must be numbered
/// `0..n` without gaps and each cloud needs its corners file.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_cloud = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".cloud.csv"));
        if let (true, Some(i)) = (is_cloud, frame_index(&path)) {
            frames.push(i);
        }
    }
    frames.sort_unstable();
    if let Some((k, &i)) = frames.iter().enumerate().find(|(k, i)| *k != **i) {
        return Err(Error::Config(format!("{}: frame {k} missing (next is frame {i})", dir.display())));
    }
    let mut clouds = Vec::with_capacity(frames.len());
    let mut corners = Vec::with_capacity(frames.len());
    for &i in &frames {
        clouds.push(load_cloud(cloud_path(dir, i))?);
        let mut set = load_corners(corners_path(dir, i))?;
        set.frame_id = i;
        corners.push(set);
    }
    let scene_path = dir.join(SCENE_FILE);
    let scene = if scene_path.exists() { Some(read_json(&scene_path)?) } else { None };
    Ok(Dataset { clouds, corners, scene })
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Size and noise of a generated dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub frames: usize,
    /// Depth noise (m); boundary noise follows [`NoiseConfig::with_sigma`].
    pub noise_sigma: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            frames: 30,
            noise_sigma: 0.0,
        }
    }
}

/// Everything a command needs, read from one JSON document.
///
/// `board` and `camera` fall back to the dataset's `scene.json`.
/// `rng_seed` seeds every random step: scene generation, subset sampling
/// and RANSAC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,
    pub board: Option<BoardSpec>,
    pub camera: Option<CameraIntrinsics>,
    pub calib: CalibConfig,
    pub lidar: LidarConfig,
    /// Range noise of the LiDAR (m). When set, the noise-sensitive LiDAR
    /// thresholds are derived from it (see
    /// [`LidarConfig::adapted_to_range_noise`]).
    pub range_noise_sigma: Option<f64>,
    /// Spacing of the sampled camera outline (m).
    pub edge_pitch: f64,
    /// Track the board from frame to frame instead of searching each scan.
    pub tracking: bool,
    pub synth: SynthSettings,
    pub rng_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_dir: PathBuf::from("dataset"),
            output_dir: PathBuf::from("out"),
            board: None,
            camera: None,
            calib: CalibConfig::default(),
            lidar: LidarConfig::default(),
            range_noise_sigma: None,
            edge_pitch: DEFAULT_EDGE_PITCH,
            tracking: false,
            synth: SynthSettings::default(),
            rng_seed: 0,
        }
    }
}

impl RunConfig {
    /// Reads `path`, applies the environment overrides and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut config: Self = read_json(path)?;
        config.apply_env()?;
        config.validate()?;
        Ok(config)
    }

    /// Defaults with the environment overrides applied.
    pub fn from_env() -> Result<Self> {
        let mut config = Self::default();
        config.apply_env()?;
        Ok(config)
    }

    /// Applies `LCALIB_DATASET_DIR`, `LCALIB_OUTPUT_DIR` and `LCALIB_SEED`.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_overrides(|k| std::env::var(k).ok())
    }

    /// Path and seed overrides looked up through `get`.
    pub fn apply_overrides(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = get(ENV_DATASET_DIR) {
            self.dataset_dir = v.into();
        }
        if let Some(v) = get(ENV_OUTPUT_DIR) {
            self.output_dir = v.into();
        }
        if let Some(v) = get(ENV_SEED) {
            self.rng_seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_SEED} must be an unsigned integer, got `{v}`")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.calib.validate()?;
        self.lidar.validate()?;
        if let Some(b) = &self.board {
            b.validate()?;
        }
        if let Some(c) = &self.camera {
            c.validate()?;
        }
        if !(self.edge_pitch > 0.0) {
            return Err(Error::Config("edge_pitch must be positive".into()));
        }
        if self.range_noise_sigma.is_some_and(|s| !(s >= 0.0)) || !(self.synth.noise_sigma >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if self.synth.frames == 0 {
            return Err(Error::Config("synth.frames must be at least 1".into()));
        }
        Ok(())
    }

    /// Fails unless the dataset directory exists.
    pub fn require_dataset(&self) -> Result<()> {
        if self.dataset_dir.is_dir() {
            Ok(())
        } else {
            Err(Error::io(
                &self.dataset_dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ))
        }
    }

    /// Calibration settings seeded with `rng_seed`, with the edge weight
    /// adapted to the range noise when it is known (the configured level
    /// wins over `fallback`).
    pub fn calib_config(&self, fallback: Option<f64>) -> CalibConfig {
        let base = match self.range_noise_sigma.or(fallback) {
            Some(s) => self.calib.adapted_to_range_noise(s),
            None => self.calib.clone(),
        };
        CalibConfig {
            rng_seed: self.rng_seed,
            ..base
        }
    }

    /// LiDAR settings for data with range noise `sigma` (the configured
    /// level wins over `fallback`, typically a scene file's).
    pub fn lidar_config(&self, fallback: Option<f64>) -> LidarConfig {
        let base = match self.range_noise_sigma.or(fallback) {
            Some(s) if s > 0.0 => LidarConfig {
                seed: self.lidar.seed,
                tracking_margin: self.lidar.tracking_margin,
                ..LidarConfig::adapted_to_range_noise(s)
            },
            _ => self.lidar.clone(),
        };
        LidarConfig {
            seed: self.rng_seed,
            ..base
        }
    }
}

// ---------------------------------------------------------------------------
// Outputs
// ---------------------------------------------------------------------------

/// Content of `result.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub extrinsics: Pose,
    #[serde(rename = "best_M")]
    pub best_m: usize,
    pub mge: f64,
    pub mpe: f64,
    pub mee: f64,
    pub n_detect: usize,
    pub n_total: usize,
    pub initial: Pose,
    pub candidates: Vec<CandidateStats>,
    /// `(frame, MGE)` of the result on every used frame.
    pub per_frame_errors: Vec<(usize, f64)>,
    /// `(frame, reason)` for the frames left out.
    pub failures: Vec<(usize, String)>,
}

impl ResultFile {
    /// `frame_ids[i]` is the frame behind `result.per_frame_errors[i]`.
    pub fn new(result: &CalibrationResult, summary: &DetectionSummary, frame_ids: &[usize]) -> Self {
        Self {
            extrinsics: result.extrinsics,
            best_m: result.best_m,
            mge: result.mge,
            mpe: result.mpe,
            mee: result.mee,
            n_detect: summary.n_detect,
            n_total: summary.n_total,
            initial: result.initial,
            candidates: result.candidates.clone(),
            per_frame_errors: frame_ids.iter().copied().zip(result.per_frame_errors.iter().copied()).collect(),
            failures: summary.failures.clone(),
        }
    }
}

/// Plane `n·x + d = 0` as written to debug files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneJson {
    pub n: Vector3<f64>,
    pub d: f64,
}

/// Per-frame board detection debug record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionDump {
    pub frame_id: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plane: Option<PlaneJson>,
    pub planar_points: Vec<Vector3<f64>>,
    pub edge_points: Vec<Vector3<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registration_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DetectionDump {
    pub fn new(frame_id: usize, features: &Result<LidarBoardFeatures>) -> Self {
        match features {
            Ok(f) => Self {
                frame_id,
                plane: Some(PlaneJson {
                    n: f.plane.normal,
                    d: f.plane.offset,
                }),
                planar_points: f.planar_points.clone(),
                edge_points: f.edge_points.clone(),
                registration_error: Some(f.registration_error),
                error: None,
            },
            Err(e) => Self {
                frame_id,
                plane: None,
                planar_points: Vec::new(),
                edge_points: Vec::new(),
                registration_error: None,
                error: Some(e.to_string()),
            },
        }
    }
}

/// One noise level of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma_cm: f64,
    pub egt_rot_deg: f64,
    pub egt_trans_m: f64,
    pub mge_m: f64,
    pub normal_err_deg: f64,
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(SWEEP_HEADER)?;
    }
    finish(w, path)
}

pub fn load_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = ReaderBuilder::new().trim(Trim::All).from_reader(BufReader::new(file));
    let header = reader.headers()?.clone();
    if let Some(missing) = SWEEP_HEADER.iter().find(|h| !header.iter().any(|c| c == **h)) {
        return Err(Error::MissingColumn((*missing).to_string()));
    }
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Four stacked line charts of the sweep metrics against σ.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 180.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 40.0;
    let panels: [(&str, fn(&SweepRow) -> f64); 4] = [
        ("EGT rotation (deg)", |r| r.egt_rot_deg),
        ("EGT translation (m)", |r| r.egt_trans_m),
        ("MGE (m)", |r| r.mge_m),
        ("normal error (deg)", |r| r.normal_err_deg),
    ];
    let xs: Vec<f64> = rows.iter().map(|r| r.sigma_cm).collect();
    let (x0, x1) = span(&xs);
    let mut svg = String::new();
    let total_h = H * panels.len() as f64;
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{total_h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{total_h}" fill="white"/>"#);
    for (k, (label, get)) in panels.iter().enumerate() {
        let oy = k as f64 * H;
        let ys: Vec<f64> = rows.iter().map(get).collect();
        let (y0, y1) = span(&ys);
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
        let py = |y: f64| oy + H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);
        let (bx, by) = (LEFT, oy + H - BOTTOM);
        let _ = writeln!(
            svg,
            r#"<path d="M{bx} {} V{by} H{}" stroke="black" fill="none"/>"#,
            oy + TOP,
            W - RIGHT
        );
        let _ = writeln!(svg, r#"<text x="{LEFT}" y="{}">{label}</text>"#, oy + TOP - 8.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, LEFT - 6.0, py(y1) + 4.0, tick(y1));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, LEFT - 6.0, by + 4.0, tick(y0));
        let _ = writeln!(svg, r#"<text x="{bx}" y="{}" text-anchor="middle">{}</text>"#, by + 16.0, tick(x0));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W - RIGHT, by + 16.0, tick(x1));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">σ (cm)</text>"#, 0.5 * (W + LEFT - RIGHT), by + 30.0);
        if !rows.is_empty() {
            let points: Vec<String> = xs.iter().zip(&ys).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(svg, r#"<polyline points="{}" stroke="crimson" stroke-width="2" fill="none"/>"#, points.join(" "));
            for (&x, &y) in xs.iter().zip(&ys) {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="crimson"/>"#, px(x), py(y));
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Plot range of `v`, widened when degenerate.
fn span(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let lo = lo.min(0.0);
    if hi - lo <= 1e-12 {
        (lo, lo + 1.0)
    } else {
        (lo, hi)
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn cloud_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.csv", "x,y,z,ring,t\n1.0,2.0,3.0,5,0.01\n");
        let c = load_cloud(&p).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.points[0].xyz, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(c.points[0].ring, Some(5));
        assert_eq!(c.points[0].timestamp, Some(0.01));
        assert_eq!(c.ring_count, 6);
    }

    #[test]
    fn cloud_optional_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.csv", "x,y,z\n1,2,3\n");
        let c = load_cloud(&p).unwrap();
        assert_eq!(c.points[0].ring, None);
        assert_eq!(c.ring_count, 0);
        let p = write(dir.path(), "d.csv", "x,y,z,ring,t\n1,2,3,,\n");
        assert_eq!(load_cloud(&p).unwrap().points[0].timestamp, None);
    }

    #[test]
    fn cloud_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.csv", "x,y,ring\n1,2,3\n");
        assert!(matches!(load_cloud(&p), Err(Error::MissingColumn(c)) if c == "z"));
    }

    #[test]
    fn cloud_bad_value_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.csv", "x,y,z,ring,t\n1,2,3,0,0\n1,oops,3,0,0\n");
        match load_cloud(&p) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 2)),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "d.csv", "x,y,z,ring,t\n1,2,3,-1,0\n");
        assert!(matches!(load_cloud(&p), Err(Error::Parse { line: 2, column: 4, .. })));
        let p = write(dir.path(), "e.csv", "x,y,z,ring,t\n1,2,3\n");
        assert!(matches!(load_cloud(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_cloud(dir.path().join("nope.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn cloud_round_trip_1000_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cloud = RingCloud {
            points: (0..1000)
                .map(|i| LidarPoint {
                    xyz: Vector3::new(rng.random_range(-50.0..50.0), rng.random::<f64>() * 1e-7, rng.random_range(-3.0..3.0)),
                    ring: Some((i % 16) as u16),
                    timestamp: Some(rng.random::<f64>() * 0.1),
                })
                .collect(),
            ring_count: 16,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_cloud(&p, &cloud).unwrap();
        assert_eq!(load_cloud(&p).unwrap(), cloud);
    }

    proptest! {
        #[test]
        fn cloud_round_trip_any_floats(xs in prop::collection::vec((any::<f64>(), any::<f64>(), any::<f64>()), 1..20)) {
            prop_assume!(xs.iter().all(|(a, b, c)| a.is_finite() && b.is_finite() && c.is_finite()));
            let cloud = RingCloud {
                points: xs.iter().map(|&(a, b, c)| LidarPoint::new(Vector3::new(a, b, c), None)).collect(),
                ring_count: 0,
            };
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("c.csv");
            write_cloud(&p, &cloud).unwrap();
            prop_assert_eq!(load_cloud(&p).unwrap(), cloud);
        }
    }

    #[test]
    fn corners_nan_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "k.csv", "frame_id,corner_index,u,v\n0,0,1,2\n0,1,NaN,2\n");
        assert!(matches!(load_corners(&p), Err(Error::Parse { line: 3, column: 3, .. })));
    }

    #[test]
    fn corners_round_trip_and_checks() {
        let dir = tempfile::tempdir().unwrap();
        let set = CornerSet {
            frame_id: 4,
            corners: vec![Vector2::new(1.5, 2.25), Vector2::new(640.0, 359.875)],
            detected: true,
        };
        let p = dir.path().join("frame_0004.corners.csv");
        write_corners(&p, &set).unwrap();
        assert_eq!(load_corners(&p).unwrap(), set);
        write_corners(&p, &CornerSet::missing(4)).unwrap();
        assert_eq!(load_corners(&p).unwrap(), CornerSet::missing(4));

        let p = write(dir.path(), "dup.csv", "frame_id,corner_index,u,v\n0,0,1,2\n0,0,1,2\n");
        assert!(matches!(load_corners(&p), Err(Error::Parse { line: 3, .. })));
        let p = write(dir.path(), "gap.csv", "frame_id,corner_index,u,v\n0,0,1,2\n0,2,1,2\n");
        assert!(matches!(load_corners(&p), Err(Error::Parse { .. })));
        let p = write(dir.path(), "two.csv", "frame_id,corner_index,u,v\n1,0,1,2\n0,0,3,4\n");
        let sets = load_corner_sets(&p).unwrap();
        assert_eq!(sets.iter().map(|s| s.frame_id).collect::<Vec<_>>(), vec![0, 1]);
        assert!(load_corners(&p).is_err());
    }

    #[test]
    fn events_round_trip_and_polarity() {
        let dir = tempfile::tempdir().unwrap();
        let events = vec![
            Event { u: Vector2::new(3.0, 4.0), t: 0.001, polarity: 1 },
            Event { u: Vector2::new(5.5, 0.0), t: 0.002, polarity: -1 },
        ];
        let p = dir.path().join("e.csv");
        write_events(&p, &events).unwrap();
        assert_eq!(load_events(&p).unwrap(), events);
        let p = write(dir.path(), "bad.csv", "t,x,y,polarity\n0.1,1,1,0\n");
        assert!(matches!(load_events(&p), Err(Error::Parse { line: 2, column: 4, .. })));
    }

    #[test]
    fn frame_index_from_name() {
        assert_eq!(frame_index(Path::new("/a/frame_0012.cloud.csv")), Some(12));
        assert_eq!(frame_index(Path::new("scan.csv")), None);
    }

    #[test]
    fn config_json_defaults_and_unknown_fields() {
        let c: RunConfig = serde_json::from_str(r#"{"rng_seed": 7, "calib": {"iterations": 5}}"#).unwrap();
        assert_eq!(c.rng_seed, 7);
        assert_eq!(c.calib.iterations, 5);
        assert_eq!(c.calib.w_ptl, CalibConfig::default().w_ptl);
        assert!(serde_json::from_str::<RunConfig>(r#"{"rng_sed": 7}"#).is_err());
    }

    #[test]
    fn config_overrides_paths_and_seed_only() {
        let vars: HashMap<&str, &str> = [(ENV_DATASET_DIR, "/data"), (ENV_OUTPUT_DIR, "/out"), (ENV_SEED, "42")].into();
        let mut c = RunConfig::default();
        c.apply_overrides(|k| vars.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!((c.dataset_dir.as_path(), c.output_dir.as_path(), c.rng_seed), (Path::new("/data"), Path::new("/out"), 42));
        assert_eq!(c.calib_config(None).rng_seed, 42);
        assert_eq!(c.calib_config(None).w_ptl, c.calib.w_ptl);
        assert_eq!(c.calib_config(Some(0.0)).w_ptl, 0.0);
        let mut c = RunConfig::default();
        assert!(c.apply_overrides(|k| (k == ENV_SEED).then(|| "x".to_string())).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        let mut c = RunConfig::default();
        c.lidar.dbscan_eps = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.edge_pitch = -1.0;
        assert!(c.validate().is_err());
        let c = RunConfig {
            dataset_dir: "/definitely/not/here".into(),
            ..Default::default()
        };
        assert!(c.require_dataset().is_err());
    }

    #[test]
    fn lidar_config_follows_noise() {
        let c = RunConfig::default();
        assert_eq!(c.lidar_config(None).gap_threshold, LidarConfig::default().gap_threshold);
        assert_eq!(c.lidar_config(Some(0.1)).range_noise_sigma, 0.1);
        let c = RunConfig {
            range_noise_sigma: Some(0.02),
            ..Default::default()
        };
        assert_eq!(c.lidar_config(Some(0.1)).range_noise_sigma, 0.02);
    }

    #[test]
    fn sweep_csv_header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            SweepRow { sigma_cm: 0.8, egt_rot_deg: 0.05, egt_trans_m: 0.001, mge_m: 0.003, normal_err_deg: 0.1 },
            SweepRow { sigma_cm: 10.0, egt_rot_deg: 0.2, egt_trans_m: 0.01, mge_m: 0.02, normal_err_deg: 2.5 },
        ];
        let p = dir.path().join("s.csv");
        write_sweep_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), SWEEP_HEADER.join(","));
        assert_eq!(load_sweep_csv(&p).unwrap(), rows);
        let svg = sweep_svg(&rows);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(sweep_svg(&[]).contains("</svg>"));
    }

    #[test]
    fn result_json_fields() {
        let result = CalibrationResult {
            extrinsics: Pose::identity(),
            best_m: 3,
            initial: Pose::identity(),
            candidates: Vec::new(),
            mge: 0.5,
            mpe: 0.2,
            mee: 0.3,
            per_frame_errors: vec![0.1, 0.2],
        };
        let summary = DetectionSummary {
            n_detect: 2,
            n_total: 3,
            failures: vec![(1, "lidar: no board".into())],
        };
        let file = ResultFile::new(&result, &summary, &[0, 2]);
        let v: serde_json::Value = serde_json::to_value(&file).unwrap();
        for key in ["extrinsics", "best_M", "mge", "mpe", "mee", "n_detect", "n_total"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["extrinsics"]["quaternion"], serde_json::json!([1.0, 0.0, 0.0, 0.0]));
        assert_eq!(file.per_frame_errors, vec![(0, 0.1), (2, 0.2)]);
        let back: ResultFile = serde_json::from_value(v).unwrap();
        assert_eq!(back, file);
    }
}
