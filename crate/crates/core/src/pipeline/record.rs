use std::collections::BTreeMap;
use std::io::BufRead;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::CropTransform;
use crate::error::{Error, Result};
use crate::geometry::{adjust_intrinsics_for_crop, CameraIntrinsics, Pixel2, Point3};
use crate::jsonfmt;
use crate::skeleton::{Frame, JointSchema, Pose2D, Pose3D};
use crate::synthgen::TrainingPair;

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub source: String,
    #[serde(rename = "schema")]
    pub schema_name: String,
    pub crop: CropTransform,
    /// Source-frame camera; absent for in-the-wild images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
    /// Crop coordinates, pixels.
    pub joints2d: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints3d_rel: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints3d_abs: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub meta: Map<String, Value>,
    /// Keys this version does not know about, written back unchanged.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

pub(crate) fn pts2(p: &Pose2D) -> Vec<[f64; 2]> {
    p.joints.iter().map(|q| [q.u, q.v]).collect()
}

pub(crate) fn pts3(p: &Pose3D) -> Vec<[f64; 3]> {
    p.joints.iter().map(|q| [q.x, q.y, q.z]).collect()
}

impl DatasetRecord {
    /// Record for a synthetic pair: identity crop, crop-frame intrinsics, both
    /// 3D fields, and the right view kept under `meta.right2d`.
    pub fn from_pair(id: String, pair: &TrainingPair, dx: f64) -> Self {
        let mut meta = Map::new();
        meta.insert("dx".into(), Value::from(dx));
        meta.insert(
            "right2d".into(),
            serde_json::to_value(pts2(&pair.right2d)).expect("finite pixels"),
        );
        DatasetRecord {
            id,
            source: "synth".into(),
            schema_name: pair.left2d.schema.name.clone(),
            crop: CropTransform::identity(),
            intrinsics: Some(pair.intrinsics),
            joints2d: pts2(&pair.left2d),
            joints3d_rel: Some(pts3(&pair.pose3d)),
            joints3d_abs: Some(pts3(&pair.pose3d_abs)),
            delta_z: Some(pair.pose3d_abs.root().z),
            meta,
            extra: BTreeMap::new(),
        }
    }

    pub fn to_line(&self) -> String {
        jsonfmt::to_string(self).expect("records serialize")
    }

    pub fn from_line(line: &str, line_no: usize) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })
    }

    pub fn pose2d(&self, schema: &Arc<JointSchema>) -> Result<Pose2D> {
        Pose2D::try_new(schema.clone(), self.joints2d.iter().map(|&[u, v]| Pixel2::new(u, v)).collect())
    }

    pub fn pose3d_rel(&self, schema: &Arc<JointSchema>) -> Option<Result<Pose3D>> {
        self.joints3d_rel.as_ref().map(|j| {
            Pose3D::new(schema.clone(), j.iter().map(|&[x, y, z]| Point3::new(x, y, z)).collect(), Frame::RootRelative)
        })
    }

    pub fn pose3d_abs(&self, schema: &Arc<JointSchema>) -> Option<Result<Pose3D>> {
        self.joints3d_abs.as_ref().map(|j| {
            Pose3D::new(schema.clone(), j.iter().map(|&[x, y, z]| Point3::new(x, y, z)).collect(), Frame::Absolute)
        })
    }

    /// Intrinsics valid in crop coordinates.
    pub fn crop_intrinsics(&self) -> Option<Result<CameraIntrinsics>> {
        self.intrinsics.map(|k| adjust_intrinsics_for_crop(&k, &self.crop))
    }

    /// Rebuilds the stereo training pair from the absolute 3D pose, using
    /// baseline `dx` for the right view.
    pub fn training_pair(&self, schema: &Arc<JointSchema>, dx: f64) -> Result<TrainingPair> {
        if self.schema_name != schema.name {
            return Err(Error::SchemaMismatch(format!(
                "record {} uses schema {}, expected {}",
                self.id, self.schema_name, schema.name
            )));
        }
        let abs = self
            .pose3d_abs(schema)
            .ok_or_else(|| Error::InvalidConfig(format!("record {} has no absolute 3D pose", self.id)))??;
        let k = self
            .crop_intrinsics()
            .ok_or_else(|| Error::InvalidConfig(format!("record {} has no intrinsics", self.id)))??;
        TrainingPair::from_absolute(abs, &k, dx)
    }
}

/// Line-numbered JSONL reader. Blank lines are skipped.
pub struct RecordReader<R> {
    inner: R,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(inner: R) -> Self {
        RecordReader {
            inner,
            line_no: 0,
            buf: String::new(),
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    /// `(line number, record)`
    type Item = Result<(usize, DatasetRecord)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {
                    self.line_no += 1;
                    let line = self.buf.trim();
                    if line.is_empty() {
                        continue;
                    }
                    return Some(DatasetRecord::from_line(line, self.line_no).map(|r| (self.line_no, r)));
                }
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

/// Reads a whole dataset into memory.
pub fn read_records(path: impl AsRef<std::path::Path>) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    RecordReader::new(std::io::BufReader::new(f))
        .map(|r| r.map(|(_, rec)| rec))
        .collect()
}
