use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DatasetRecord, RecordReader};
use crate::error::{Error, Result};
use crate::geometry::project;
use crate::par::{self, Execution};
use crate::skeleton::{JointSchema, CROP_SIZE};

/// Slack on the crop bounds, pixels.
pub const CROP_TOLERANCE_PX: f64 = 1.0;
pub const REPROJECTION_TOLERANCE_PX: f64 = 1e-3;
pub const ROOT_TOLERANCE_MM: f64 = 1e-6;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnknownSchema,
    Shape,
    NonFinite,
    OutOfCrop,
    Intrinsics,
    Reprojection,
    RootConsistency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub line: usize,
    pub id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

/// Every invariant violation of one record.
pub fn check_record(line: usize, rec: &DatasetRecord, schema: &JointSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, detail: String| {
        out.push(Violation {
            line,
            id: rec.id.clone(),
            kind,
            detail,
        })
    };
    let n = schema.len();
    let lens = [
        Some(rec.joints2d.len()),
        rec.joints3d_rel.as_ref().map(Vec::len),
        rec.joints3d_abs.as_ref().map(Vec::len),
    ];
    if lens.iter().flatten().any(|&l| l != n) {
        push(ViolationKind::Shape, format!("joint counts {lens:?}, schema has {n}"));
        return out;
    }
    let finite = rec.joints2d.iter().flatten().all(|v| v.is_finite())
        && rec.joints3d_rel.iter().flatten().flatten().all(|v| v.is_finite())
        && rec.joints3d_abs.iter().flatten().flatten().all(|v| v.is_finite());
    if !finite {
        push(ViolationKind::NonFinite, "non-finite coordinate".into());
        return out;
    }
    let bounds = -CROP_TOLERANCE_PX..=CROP_SIZE + CROP_TOLERANCE_PX;
    if let Some((j, _)) = rec
        .joints2d
        .iter()
        .enumerate()
        .find(|(_, [u, v])| !bounds.contains(u) || !bounds.contains(v))
    {
        push(ViolationKind::OutOfCrop, format!("joint {j} at {:?}", rec.joints2d[j]));
    }

    if let Some(abs) = &rec.joints3d_abs {
        match rec.crop_intrinsics() {
            None => push(ViolationKind::Intrinsics, "absolute pose without intrinsics".into()),
            Some(Err(e)) => push(ViolationKind::Intrinsics, e.to_string()),
            Some(Ok(k)) => {
                let mut worst: (f64, usize) = (0.0, 0);
                for (j, (&[x, y, z], &[u, v])) in abs.iter().zip(&rec.joints2d).enumerate() {
                    let err = match project(crate::geometry::Point3::new(x, y, z), &k) {
                        Ok(px) => ((px.u - u).powi(2) + (px.v - v).powi(2)).sqrt(),
                        Err(_) => f64::INFINITY,
                    };
                    if err > worst.0 {
                        worst = (err, j);
                    }
                }
                if worst.0 > REPROJECTION_TOLERANCE_PX {
                    push(
                        ViolationKind::Reprojection,
                        format!("joint {} reprojects {} px off", worst.1, worst.0),
                    );
                }
            }
        }
    }

    let root = schema.root_index;
    if let Some(rel) = &rec.joints3d_rel {
        let r = rel[root];
        if r.iter().any(|c| c.abs() > ROOT_TOLERANCE_MM) {
            push(ViolationKind::RootConsistency, format!("relative root at {r:?}"));
        }
        if let Some(abs) = &rec.joints3d_abs {
            let a0 = abs[root];
            let worst = abs
                .iter()
                .zip(rel)
                .map(|(a, r)| (0..3).map(|i| (a[i] - a0[i] - r[i]).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if worst > ROOT_TOLERANCE_MM {
                push(
                    ViolationKind::RootConsistency,
                    format!("root-aligned absolute pose differs from relative by {worst} mm"),
                );
            }
        }
    }
    out
}

/// Checks every record of a dataset stream. Parse failures abort.
pub fn validate_stream<R: BufRead>(input: R, exec: Execution) -> Result<Vec<Violation>> {
    let mut schemas: HashMap<String, Option<Arc<JointSchema>>> = HashMap::new();
    let mut out = Vec::new();
    let mut reader = RecordReader::new(input).peekable();
    while reader.peek().is_some() {
        let chunk: Vec<(usize, DatasetRecord)> = reader.by_ref().take(CHUNK).collect::<Result<_>>()?;
        let resolved: Vec<_> = chunk
            .iter()
            .map(|(_, rec)| {
                schemas
                    .entry(rec.schema_name.clone())
                    .or_insert_with(|| JointSchema::by_name(&rec.schema_name).ok().map(Arc::new))
                    .clone()
            })
            .collect();
        let jobs: Vec<_> = chunk.iter().zip(resolved).collect();
        for v in par::map(&jobs, exec, |((line, rec), schema)| match schema {
            Some(s) => check_record(*line, rec, s),
            None => vec![Violation {
                line: *line,
                id: rec.id.clone(),
                kind: ViolationKind::UnknownSchema,
                detail: format!("unknown schema {}", rec.schema_name),
            }],
        }) {
            out.extend(v);
        }
    }
    Ok(out)
}

pub fn validate_dataset(path: impl AsRef<Path>, exec: Execution) -> Result<Vec<Violation>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    validate_stream(BufReader::new(f), exec)
}
