//! Pose accuracy metrics. Protocol #1 only: poses are compared after root
//! alignment, with no rotation or scale fitting.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::skeleton::{JointSchema, Pose2D, Pose3D};

pub const PCKH_ALPHA: f64 = 0.5;
pub const PCK3D_THRESHOLD_MM: f64 = 150.0;
pub const AUC_STEPS: usize = 31;

/// Dataset-level metric: the mean of per-sample values, plus per-joint means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub per_joint: Vec<f64>,
    pub count: usize,
}

impl MetricReport {
    /// `metric,name,value,count`
    pub fn write_csv_row<W: Write>(&self, metric: &str, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{metric},{},{},{}", self.name, self.value, self.count)
    }
}

pub const CSV_HEADER: &str = "metric,name,value,count";

fn same_schema(a: &JointSchema, b: &JointSchema) -> Result<()> {
    a.ensure_same(b)
}

/// Per-joint Euclidean error after root alignment, mm.
pub fn joint_errors_3d(pred: &Pose3D, gt: &Pose3D) -> Result<Vec<f64>> {
    same_schema(&pred.schema, &gt.schema)?;
    let p = pred.root_aligned();
    let g = gt.root_aligned();
    Ok(p.joints.iter().zip(&g.joints).map(|(a, b)| a.distance(*b)).collect())
}

/// Mean per-joint position error after root alignment, mm.
pub fn mpjpe_protocol1(pred: &Pose3D, gt: &Pose3D) -> Result<f64> {
    let e = joint_errors_3d(pred, gt)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Fraction of joints within `alpha` head-segment lengths of the ground truth.
pub fn pckh(pred: &Pose2D, gt: &Pose2D, schema: &JointSchema, alpha: f64) -> Result<f64> {
    Ok(pckh_hits(pred, gt, schema, alpha)?.iter().filter(|&&h| h).count() as f64 / gt.joints.len() as f64)
}

fn pckh_hits(pred: &Pose2D, gt: &Pose2D, schema: &JointSchema, alpha: f64) -> Result<Vec<bool>> {
    same_schema(&pred.schema, &gt.schema)?;
    same_schema(&gt.schema, schema)?;
    let head = gt.joints[schema.head_top_index].distance(gt.joints[schema.neck_index]);
    if !(head > 0.0) {
        return Err(Error::ZeroHeadSegment);
    }
    let threshold = alpha * head;
    Ok(pred.joints.iter().zip(&gt.joints).map(|(a, b)| a.distance(*b) <= threshold).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PckAuc {
    pub pck: f64,
    pub auc: f64,
}

/// 3D PCK at `threshold_mm` and the mean PCK over `n_steps` thresholds
/// `threshold_mm * k / n_steps`, `k = 1..=n_steps`. The root is excluded: after
/// alignment its error is zero by construction.
pub fn pck3d_auc(pred: &Pose3D, gt: &Pose3D, threshold_mm: f64, n_steps: usize) -> Result<PckAuc> {
    let root = gt.schema.root_index;
    let e: Vec<f64> = joint_errors_3d(pred, gt)?
        .into_iter()
        .enumerate()
        .filter(|&(i, _)| i != root)
        .map(|(_, d)| d)
        .collect();
    let n = e.len() as f64;
    let frac = |t: f64| e.iter().filter(|&&d| d <= t).count() as f64 / n;
    let auc = (1..=n_steps).map(|k| frac(threshold_mm * k as f64 / n_steps as f64)).sum::<f64>() / n_steps as f64;
    Ok(PckAuc {
        pck: frac(threshold_mm),
        auc,
    })
}

fn aggregate(name: &str, per_sample: Vec<(f64, Vec<f64>)>) -> Result<MetricReport> {
    let count = per_sample.len();
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let n_joints = per_sample[0].1.len();
    let mut per_joint = vec![0.0; n_joints];
    let mut value = 0.0;
    for (v, joints) in &per_sample {
        value += v;
        for (acc, j) in per_joint.iter_mut().zip(joints) {
            *acc += j;
        }
    }
    per_joint.iter_mut().for_each(|v| *v /= count as f64);
    Ok(MetricReport {
        name: name.to_string(),
        value: value / count as f64,
        per_joint,
        count,
    })
}

/// Mean MPJPE over paired samples.
pub fn mpjpe_report(name: &str, pairs: &[(Pose3D, Pose3D)]) -> Result<MetricReport> {
    let per = pairs
        .iter()
        .map(|(p, g)| {
            let e = joint_errors_3d(p, g)?;
            Ok((e.iter().sum::<f64>() / e.len() as f64, e))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(name, per)
}

/// Mean PCKh over paired samples; per-joint values are hit rates.
pub fn pckh_report(name: &str, pairs: &[(Pose2D, Pose2D)], schema: &JointSchema, alpha: f64) -> Result<MetricReport> {
    let per = pairs
        .iter()
        .map(|(p, g)| {
            let hits = pckh_hits(p, g, schema, alpha)?;
            let joints: Vec<f64> = hits.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect();
            Ok((joints.iter().sum::<f64>() / joints.len() as f64, joints))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(name, per)
}

/// Mean 3D PCK and AUC over paired samples.
pub fn pck3d_reports(pairs: &[(Pose3D, Pose3D)], threshold_mm: f64, n_steps: usize) -> Result<(MetricReport, MetricReport)> {
    let mut pck = Vec::with_capacity(pairs.len());
    let mut auc = Vec::with_capacity(pairs.len());
    for (p, g) in pairs {
        let e = joint_errors_3d(p, g)?;
        let r = pck3d_auc(p, g, threshold_mm, n_steps)?;
        // The root entry is trivially within threshold.
        pck.push((r.pck, e.iter().map(|&d| if d <= threshold_mm { 1.0 } else { 0.0 }).collect()));
        auc.push((r.auc, vec![0.0; e.len()]));
    }
    Ok((aggregate("pck3d", pck)?, aggregate("auc", auc)?))
}
