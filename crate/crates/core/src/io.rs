//! File formats: datasets, weight containers and imported correspondence tables.
//!
//! # Dataset
//!
//! Line-delimited JSON. The first line is the header
//! `{"format":"pnpnet-dataset","version":1}`; every following line is one
//! instance:
//!
//! ```text
//! {"f":800.0,"n":9,"a":[[x,y,z],...],"b":[[u,v],...],"truth":{"t":[..],"omega":[..]},"mask":[false,...]}
//! ```
//!
//! `truth` and `mask` are omitted when unknown. Image coordinates are
//! relative to the principal point.
//!
//! # Weight container
//!
//! Little-endian binary. `PNPNETW\0`, `u32` version, then `u64 n`,
//! `f64 f_const`, three `f64` scalings (world, image, translation), a `u32`
//! layer count and for every layer `u32 inputs`, `u32 outputs`, the row-major
//! weights and the biases as `f64`. The refiner follows as `u32 m`, `m` alphas,
//! `m` gammas, `m` lambdas and the weight floor. A trailing `u8` flags an
//! optional trainer state: `u64 update`, the `3m` unconstrained
//! hyperparameters, `u64 len` and the two Adam moment vectors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evalbench::{EvalReport, Method, OpsCase, OpsRow};
use crate::geometry::{rotation_error, translation_error, CameraIntrinsics, Correspondence, Pose, Rotation};
use crate::lm::LMConfig;
use crate::mlp::{Dense, NetParams, Scaling};
use crate::pipeline::PnpNet;
use crate::preprocess::ProblemInstance;
use crate::trainer::{RawHyper, TrainerState};
use crate::{Error, Result};

pub const DATASET_FORMAT: &str = "pnpnet-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const WEIGHTS_MAGIC: &[u8; 8] = b"PNPNETW\0";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub t: [f64; 3],
    pub omega: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let w = p.rot.omega();
        Self {
            t: [p.t.x, p.t.y, p.t.z],
            omega: [w.x, w.y, w.z],
        }
    }
}

impl From<&PoseRecord> for Pose {
    fn from(r: &PoseRecord) -> Self {
        Pose::new(Vector3::from(r.t), Rotation::new(Vector3::from(r.omega)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub f: f64,
    pub n: usize,
    pub a: Vec<[f64; 3]>,
    pub b: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PoseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
}

impl From<&ProblemInstance> for InstanceRecord {
    fn from(inst: &ProblemInstance) -> Self {
        Self {
            f: inst.intrinsics.f,
            n: inst.n(),
            a: inst.corrs.iter().map(|c| [c.a.x, c.a.y, c.a.z]).collect(),
            b: inst.corrs.iter().map(|c| [c.b.x, c.b.y]).collect(),
            truth: inst.truth.as_ref().map(PoseRecord::from),
            mask: inst.outlier_mask.clone(),
        }
    }
}

impl TryFrom<&InstanceRecord> for ProblemInstance {
    type Error = Error;

    fn try_from(r: &InstanceRecord) -> Result<Self> {
        if r.a.len() != r.n || r.b.len() != r.n {
            return Err(Error::ShapeMismatch {
                expected: r.n,
                actual: if r.a.len() != r.n { r.a.len() } else { r.b.len() },
            });
        }
        let corrs = r
            .a
            .iter()
            .zip(&r.b)
            .map(|(a, b)| Correspondence::new(Vector3::from(*a), Vector2::from(*b)))
            .collect();
        let inst = ProblemInstance {
            intrinsics: CameraIntrinsics { f: r.f },
            corrs,
            truth: r.truth.as_ref().map(Pose::from),
            outlier_mask: r.mask.clone(),
        };
        inst.validate()?;
        Ok(inst)
    }
}

fn json_err(line: usize, e: serde_json::Error) -> Error {
    Error::Format(format!("line {line}: {e}"))
}

pub fn write_dataset(mut w: impl Write, instances: &[ProblemInstance]) -> Result<()> {
    let header = Header {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
    };
    writeln!(w, "{}", serde_json::to_string(&header).map_err(|e| json_err(1, e))?)?;
    for (k, inst) in instances.iter().enumerate() {
        let rec = InstanceRecord::from(inst);
        writeln!(w, "{}", serde_json::to_string(&rec).map_err(|e| json_err(k + 2, e))?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(r: impl BufRead) -> Result<Vec<ProblemInstance>> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))??;
    let header: Header = serde_json::from_str(&first).map_err(|e| json_err(1, e))?;
    if header.format != DATASET_FORMAT {
        return Err(Error::Format(format!("unexpected format tag {:?}", header.format)));
    }
    if header.version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", header.version)));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| json_err(k + 2, e))?;
        let inst = ProblemInstance::try_from(&rec).map_err(|e| Error::Format(format!("line {}: {e}", k + 2)))?;
        out.push(inst);
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, instances: &[ProblemInstance]) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), instances)
}

pub fn load_dataset(path: &Path) -> Result<Vec<ProblemInstance>> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// A trained model, optionally with the state needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub model: PnpNet,
    pub state: Option<TrainerState>,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format("length exceeds u32".into()))?;
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        v.iter().try_for_each(|x| self.f64(*x))
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated weight file".into()),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        (0..len).map(|_| self.f64()).collect()
    }
}

/// Upper bound on any single array length accepted from a weight file.
const MAX_LEN: usize = 1 << 28;

impl WeightFile {
    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let mut w = Writer(w);
        let p = &self.model.params;
        w.0.write_all(WEIGHTS_MAGIC)?;
        w.u32(WEIGHTS_VERSION as usize)?;
        w.u64(p.n as u64)?;
        w.f64(self.model.f_const)?;
        w.f64s(&[p.scaling.world, p.scaling.image, p.scaling.translation])?;
        w.u32(p.layers().count())?;
        for l in p.layers() {
            w.u32(l.inputs)?;
            w.u32(l.outputs)?;
            w.f64s(&l.weights)?;
            w.f64s(&l.bias)?;
        }
        let lm = &self.model.lm;
        w.u32(lm.m())?;
        w.f64s(&lm.alpha)?;
        w.f64s(&lm.gamma)?;
        w.f64s(&lm.lambda)?;
        w.f64(lm.weight_floor)?;
        match &self.state {
            None => w.u8(0)?,
            Some(s) => {
                w.u8(1)?;
                w.u64(s.update)?;
                w.f64s(&s.hyper.alpha)?;
                w.f64s(&s.hyper.gamma)?;
                w.f64s(&s.hyper.lambda)?;
                w.u64(s.adam_m.len() as u64)?;
                w.f64s(&s.adam_m)?;
                w.f64s(&s.adam_v)?;
            }
        }
        w.0.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = Reader(r);
        if &r.bytes::<8>()? != WEIGHTS_MAGIC {
            return Err(Error::Format("not a pnpnet weight file".into()));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION as usize {
            return Err(Error::Format(format!("unsupported weight file version {version}")));
        }
        let n = r.u64()? as usize;
        let f_const = r.f64()?;
        let scaling = Scaling {
            world: r.f64()?,
            image: r.f64()?,
            translation: r.f64()?,
        };
        let count = r.u32()?;
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let inputs = r.u32()?;
            let outputs = r.u32()?;
            if inputs.saturating_mul(outputs) > MAX_LEN {
                return Err(Error::Format("layer too large".into()));
            }
            let weights = r.f64s(inputs * outputs)?;
            let bias = r.f64s(outputs)?;
            layers.push(Dense {
                inputs,
                outputs,
                weights,
                bias,
            });
        }
        let mut params = NetParams::zeros(0);
        params.n = n;
        params.scaling = scaling;
        let mut it = layers.into_iter();
        params.trunk = it.by_ref().take(3).collect();
        params.head_rot = it.by_ref().take(crate::mlp::HEAD_DEPTH + 1).collect();
        params.head_trans = it.collect();
        params.validate()?;

        let m = r.u32()?;
        if m > MAX_LEN {
            return Err(Error::Format("refiner too deep".into()));
        }
        let lm = LMConfig {
            alpha: r.f64s(m)?,
            gamma: r.f64s(m)?,
            lambda: r.f64s(m)?,
            weight_floor: r.f64()?,
        };
        lm.validate()?;
        let state = match r.u8()? {
            0 => None,
            1 => {
                let update = r.u64()?;
                let hyper = RawHyper {
                    alpha: r.f64s(m)?,
                    gamma: r.f64s(m)?,
                    lambda: r.f64s(m)?,
                    weight_floor: lm.weight_floor,
                };
                let len = r.u64()? as usize;
                if len > MAX_LEN {
                    return Err(Error::Format("optimizer state too large".into()));
                }
                Some(TrainerState {
                    update,
                    hyper,
                    adam_m: r.f64s(len)?,
                    adam_v: r.f64s(len)?,
                })
            }
            flag => return Err(Error::Format(format!("bad trainer-state flag {flag}"))),
        };
        if r.0.read(&mut [0u8; 1])? != 0 {
            return Err(Error::Format("trailing bytes after weight file".into()));
        }
        Ok(Self {
            model: PnpNet {
                params,
                lm,
                f_const,
            },
            state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// One row of an externally exported correspondence table. The pose maps
/// world to camera coordinates; `u, v` are relative to the principal point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportRow {
    pub image_id: String,
    pub point_id: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub u: f64,
    pub v: f64,
    pub f: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

pub fn read_import_table(r: impl Read) -> Result<Vec<ImportRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .enumerate()
        .map(|(k, row)| {
            row.map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(e) => Error::Io(e),
                other => Error::Format(format!("row {}: {other:?}", k + 1)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportConfig {
    pub trials: usize,
    pub n: usize,
    /// Corrupt two of the first `n` chosen points.
    pub outliers: bool,
    pub seed: u64,
}

impl Default for ImportConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            n: 9,
            outliers: false,
            seed: 0,
        }
    }
}

/// Number of corrupted points per record in outlier mode.
pub const IMPORT_OUTLIERS: usize = 2;

/// Samples instances from correspondence tables: pick an image, then `n`
/// of its points. In outlier mode `n + 1` points are picked and two of the
/// first `n` are corrupted, one taking the image point of the spare, the
/// other a uniform draw over the bounding box of the image's observations.
pub fn sample_imported(rows: &[ImportRow], cfg: &ImportConfig) -> Result<Vec<ProblemInstance>> {
    let need = cfg.n + usize::from(cfg.outliers);
    if cfg.n < 4 || (cfg.outliers && cfg.n < IMPORT_OUTLIERS) {
        return Err(Error::InvalidConfig("import needs n >= 4".into()));
    }
    let mut images: BTreeMap<&str, Vec<&ImportRow>> = BTreeMap::new();
    for row in rows {
        images.entry(row.image_id.as_str()).or_default().push(row);
    }
    for (id, pts) in &images {
        let first = pts[0];
        let same_camera = pts.iter().all(|p| {
            (p.f, p.tx, p.ty, p.tz, p.wx, p.wy, p.wz) == (first.f, first.tx, first.ty, first.tz, first.wx, first.wy, first.wz)
        });
        if !same_camera {
            return Err(Error::Format(format!("image {id}: rows disagree on camera parameters")));
        }
    }
    let usable: Vec<&Vec<&ImportRow>> = images.values().filter(|p| p.len() >= need).collect();
    if usable.is_empty() {
        return Err(Error::InsufficientPoints {
            required: need,
            actual: images.values().map(Vec::len).max().unwrap_or(0),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let pts = usable[rng.random_range(0..usable.len())];
        let chosen: Vec<&ImportRow> = sample(&mut rng, pts.len(), need).into_iter().map(|i| pts[i]).collect();
        let cam = chosen[0];
        let truth = Pose::new(
            Vector3::new(cam.tx, cam.ty, cam.tz),
            Rotation::new(Vector3::new(cam.wx, cam.wy, cam.wz)),
        );
        let mut corrs: Vec<Correspondence> = chosen[..cfg.n]
            .iter()
            .map(|p| Correspondence::new(Vector3::new(p.x, p.y, p.z), Vector2::new(p.u, p.v)))
            .collect();
        let mut mask = vec![false; cfg.n];
        if cfg.outliers {
            let (lo, hi) = pts.iter().fold(
                (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY)),
                |(lo, hi), p| (lo.inf(&Vector2::new(p.u, p.v)), hi.sup(&Vector2::new(p.u, p.v))),
            );
            let victims = sample(&mut rng, cfg.n, IMPORT_OUTLIERS).into_vec();
            let spare = chosen[cfg.n];
            corrs[victims[0]].b = Vector2::new(spare.u, spare.v);
            let uniform = Vector2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
            corrs[victims[1]].b = uniform;
            for v in victims {
                mask[v] = true;
            }
        }
        let inst = ProblemInstance {
            intrinsics: CameraIntrinsics::new(cam.f)?,
            corrs,
            truth: Some(truth),
            outlier_mask: Some(mask),
        };
        inst.validate()?;
        out.push(inst);
    }
    Ok(out)
}

/// One row of the `solve` output. Error cells are empty without ground truth;
/// pose cells are empty when the solver failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub record: usize,
    pub method: Method,
    pub status: String,
    pub tx: Option<f64>,
    pub ty: Option<f64>,
    pub tz: Option<f64>,
    pub wx: Option<f64>,
    pub wy: Option<f64>,
    pub wz: Option<f64>,
    pub rotation_error_deg: Option<f64>,
    pub translation_error: Option<f64>,
    pub message: Option<String>,
}

impl PoseRow {
    pub fn new(record: usize, method: Method, inst: &ProblemInstance, result: &Result<Pose>) -> Self {
        let mut row = PoseRow {
            record,
            method,
            status: "ok".into(),
            tx: None,
            ty: None,
            tz: None,
            wx: None,
            wy: None,
            wz: None,
            rotation_error_deg: None,
            translation_error: None,
            message: None,
        };
        match result {
            Ok(pose) => {
                let w = pose.rot.omega();
                (row.tx, row.ty, row.tz) = (Some(pose.t.x), Some(pose.t.y), Some(pose.t.z));
                (row.wx, row.wy, row.wz) = (Some(w.x), Some(w.y), Some(w.z));
                if let Some(truth) = &inst.truth {
                    row.rotation_error_deg = Some(rotation_error(pose, truth).to_degrees());
                    row.translation_error = Some(translation_error(pose, truth));
                }
            }
            Err(e) => {
                row.status = "failed".into();
                row.message = Some(e.to_string());
            }
        }
        row
    }
}

/// Summary row of an evaluation. `outliers` is set for sweep points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub outliers: Option<usize>,
    pub method: Method,
    pub trials: usize,
    pub rotation_success: f64,
    pub translation_success: f64,
    pub joint_success: f64,
    pub failures: usize,
    pub ops_total: Option<u64>,
}

pub fn summary_rows(report: &EvalReport, outliers: Option<usize>) -> Vec<SummaryRow> {
    report
        .summaries
        .iter()
        .map(|s| SummaryRow {
            outliers,
            method: s.method,
            trials: report.trials,
            rotation_success: s.rotation,
            translation_success: s.translation,
            joint_success: s.joint,
            failures: s.failures,
            ops_total: report
                .ops
                .iter()
                .find(|(m, _)| *m == s.method)
                .and_then(|(_, o)| o.map(|o| o.total)),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpsCsvRow {
    pub n: usize,
    pub method: Method,
    pub case: OpsCase,
    pub additions: u64,
    pub multiplications: u64,
    pub divisions: u64,
    pub transcendentals: u64,
    pub transcendental_cost: u64,
    pub total: u64,
}

impl From<&OpsRow> for OpsCsvRow {
    fn from(r: &OpsRow) -> Self {
        Self {
            n: r.n,
            method: r.method,
            case: r.case,
            additions: r.ops.additions,
            multiplications: r.ops.multiplications,
            divisions: r.ops.divisions,
            transcendentals: r.ops.transcendentals,
            transcendental_cost: r.ops.transcendental_cost,
            total: r.ops.total,
        }
    }
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(w: impl Write, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(mut w: impl Write, rows: &[T]) -> Result<()> {
    for (k, r) in rows.iter().enumerate() {
        writeln!(w, "{}", serde_json::to_string(r).map_err(|e| json_err(k + 1, e))?)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Format(format!("{other:?}")),
    }
}
