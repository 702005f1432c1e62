use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::record::pts3;
use super::{DatasetRecord, RecordReader};
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::geosearch::{refine, SearchConfig};
use crate::lifting::Lifter;
use crate::par::{self, Execution};
use crate::skeleton::{Pose2D, Pose3D, CROP_SIZE};

/// Focal length of the virtual camera assumed for records without
/// intrinsics, crop pixels.
pub const DEFAULT_VIRTUAL_FOCAL: f64 = 1150.0;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub search: SearchConfig,
    pub default_focal: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            search: SearchConfig::default(),
            default_focal: DEFAULT_VIRTUAL_FOCAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub total: u64,
    pub labeled: u64,
    pub failed: u64,
    pub wall_time_s: f64,
}

/// Source-frame camera equivalent to the default virtual camera in crop
/// coordinates.
fn default_camera(rec: &DatasetRecord, focal: f64) -> CameraIntrinsics {
    let c = &rec.crop;
    CameraIntrinsics {
        fx: focal / c.s,
        fy: focal / c.s,
        cx: CROP_SIZE / 2.0 / c.s + c.x0,
        cy: CROP_SIZE / 2.0 / c.s + c.y0,
    }
}

/// Fills in the default camera when the record has none.
fn with_camera(rec: &DatasetRecord, cfg: &LabelConfig) -> DatasetRecord {
    let mut out = rec.clone();
    if out.intrinsics.is_none() {
        out.intrinsics = Some(default_camera(rec, cfg.default_focal));
        out.meta.insert("default_camera".into(), Value::Bool(true));
    }
    out
}

fn input_pose(rec: &DatasetRecord, lifter: &Lifter) -> Result<Pose2D> {
    let schema = lifter.schema();
    if rec.schema_name != schema.name {
        return Err(Error::SchemaMismatch(format!(
            "record uses schema {}, models expect {}",
            rec.schema_name, schema.name
        )));
    }
    let pose = rec.pose2d(schema)?;
    if !pose.is_finite() {
        return Err(Error::InvalidConfig("non-finite 2D joints".into()));
    }
    Ok(pose)
}

fn finish(rec: DatasetRecord, pose: &Pose2D, coarse: &Pose3D, cfg: &LabelConfig) -> Result<DatasetRecord> {
    let k = rec.crop_intrinsics().expect("camera filled in")?;
    let refined = refine(coarse, pose, &k, &cfg.search)?;
    let mut out = rec;
    out.joints3d_rel = Some(pts3(&refined.pose_rel));
    out.joints3d_abs = Some(pts3(&refined.pose_abs));
    out.delta_z = Some(refined.delta_z);
    out.meta.insert("label_status".into(), Value::from("labeled"));
    out.meta.remove("label_error");
    Ok(out)
}

fn mark_failed(rec: &DatasetRecord, cfg: &LabelConfig, err: &Error) -> DatasetRecord {
    let mut out = with_camera(rec, cfg);
    out.meta.insert("label_status".into(), Value::from("failed"));
    out.meta.insert("label_error".into(), Value::from(err.to_string()));
    out
}

/// Lifts and refines one record. The 2D input, crop and id are unchanged.
pub fn label_record(rec: &DatasetRecord, lifter: &Lifter, cfg: &LabelConfig) -> Result<DatasetRecord> {
    let pose = input_pose(rec, lifter)?;
    let coarse = lifter.predict_coarse(&pose)?;
    finish(with_camera(rec, cfg), &pose, &coarse, cfg)
}

/// Labels a batch; failures are marked in each record's meta instead of
/// aborting. Returns the records and the failure count.
pub fn label_batch(recs: &[DatasetRecord], lifter: &Lifter, cfg: &LabelConfig, exec: Execution) -> Result<(Vec<DatasetRecord>, u64)> {
    let poses: Vec<Result<Pose2D>> = recs.iter().map(|r| input_pose(r, lifter)).collect();
    let valid: Vec<&Pose2D> = poses.iter().filter_map(|p| p.as_ref().ok()).collect();
    let mut coarse = lifter.predict_coarse_batch(&valid)?.into_iter();
    let jobs: Vec<(&DatasetRecord, Result<(Pose2D, Pose3D)>)> = recs
        .iter()
        .zip(poses)
        .map(|(r, p)| (r, p.map(|p| (p, coarse.next().expect("one output per valid input")))))
        .collect();
    let out = par::map(&jobs, exec, |(rec, job)| match job {
        Ok((pose, coarse)) => finish(with_camera(rec, cfg), pose, coarse, cfg).map_err(|e| mark_failed(rec, cfg, &e)),
        Err(e) => Err(mark_failed(rec, cfg, e)),
    });
    let failed = out.iter().filter(|r| r.is_err()).count() as u64;
    Ok((out.into_iter().map(|r| r.unwrap_or_else(|e| e)).collect(), failed))
}

/// Streams `input` through the labeler into `output`, keeping record order.
pub fn label_stream<R: std::io::BufRead, W: Write>(
    input: R,
    output: &mut W,
    lifter: &Lifter,
    cfg: &LabelConfig,
    exec: Execution,
) -> Result<LabelSummary> {
    cfg.search.validate()?;
    let start = Instant::now();
    let mut summary = LabelSummary {
        total: 0,
        labeled: 0,
        failed: 0,
        wall_time_s: 0.0,
    };
    let mut reader = RecordReader::new(input).peekable();
    while reader.peek().is_some() {
        let chunk: Vec<DatasetRecord> = reader
            .by_ref()
            .take(CHUNK)
            .map(|r| r.map(|(_, rec)| rec))
            .collect::<Result<_>>()?;
        let (labeled, failed) = label_batch(&chunk, lifter, cfg, exec)?;
        for rec in &labeled {
            writeln!(output, "{}", rec.to_line())?;
        }
        summary.total += chunk.len() as u64;
        summary.failed += failed;
        summary.labeled += chunk.len() as u64 - failed;
    }
    output.flush()?;
    summary.wall_time_s = start.elapsed().as_secs_f64();
    Ok(summary)
}

pub fn label_dataset(
    in_path: impl AsRef<Path>,
    out_path: impl AsRef<Path>,
    lifter: &Lifter,
    cfg: &LabelConfig,
    exec: Execution,
) -> Result<LabelSummary> {
    let (in_path, out_path) = (in_path.as_ref(), out_path.as_ref());
    let input = File::open(in_path).map_err(|e| Error::io(in_path, e))?;
    let out = crate::error::create_file(out_path)?;
    let mut w = BufWriter::new(out);
    label_stream(BufReader::new(input), &mut w, lifter, cfg, exec)
}
