//! Joint schemas and pose containers.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pixel2, Point3};

/// Side length of the square crop poses are normalized against, pixels.
pub const CROP_SIZE: f64 = 256.0;

/// Scale dividing root-relative millimeters into network units.
pub const DEFAULT_SCALE_MM: f64 = 1000.0;

/// Skeleton topology shared by every pose of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSchema {
    pub name: String,
    pub joint_names: Vec<String>,
    /// Parent index per joint; the root is its own parent.
    pub parent: Vec<usize>,
    pub root_index: usize,
    pub head_top_index: usize,
    pub neck_index: usize,
    pub left_right_pairs: Vec<(usize, usize)>,
}

impl JointSchema {
    /// 16-joint Human3.6M-style skeleton rooted at the pelvis.
    pub fn h36m16() -> Self {
        let names = [
            "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "spine", "neck",
            "head_top", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
        ];
        JointSchema {
            name: "h36m16".into(),
            joint_names: names.iter().map(|s| s.to_string()).collect(),
            parent: vec![0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 8, 10, 11, 8, 13, 14],
            root_index: 0,
            head_top_index: 9,
            neck_index: 8,
            left_right_pairs: vec![(4, 1), (5, 2), (6, 3), (10, 13), (11, 14), (12, 15)],
        }
    }

    /// A simple chain `0 <- 1 <- ... <- n-1`; joint 0 is the root, the last two
    /// joints play head-top and neck.
    pub fn chain(n: usize) -> Self {
        assert!(n >= 2);
        JointSchema {
            name: format!("chain{n}"),
            joint_names: (0..n).map(|i| format!("j{i}")).collect(),
            parent: (0..n).map(|i| i.saturating_sub(1)).collect(),
            root_index: 0,
            head_top_index: n - 1,
            neck_index: n - 2,
            left_right_pairs: Vec::new(),
        }
    }

    /// Looks up a built-in schema.
    pub fn by_name(name: &str) -> Result<Self> {
        if name == "h36m16" {
            return Ok(Self::h36m16());
        }
        if let Some(n) = name.strip_prefix("chain").and_then(|n| n.parse::<usize>().ok()) {
            if n >= 2 {
                return Ok(Self::chain(n));
            }
        }
        Err(Error::InvalidSchema(format!("unknown schema '{name}'")))
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// `(child, parent)` for every non-root joint, in joint order.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != self.root_index)
            .map(|(i, &p)| (i, p))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let bad = |m: String| Err(Error::InvalidSchema(m));
        if n < 2 {
            return bad(format!("need at least 2 joints, got {n}"));
        }
        if self.joint_names.len() != n {
            return bad("joint_names and parent lengths differ".into());
        }
        for &i in &[self.root_index, self.head_top_index, self.neck_index] {
            if i >= n {
                return bad(format!("joint index {i} out of range"));
            }
        }
        if self.head_top_index == self.neck_index {
            return bad("head_top and neck coincide".into());
        }
        if self.parent[self.root_index] != self.root_index {
            return bad("root must be its own parent".into());
        }
        for (i, &p) in self.parent.iter().enumerate() {
            if p >= n {
                return bad(format!("parent of joint {i} out of range"));
            }
            if i != self.root_index && p == i {
                return bad(format!("joint {i} is a second root"));
            }
        }
        // Every joint must reach the root within n steps.
        for start in 0..n {
            let mut j = start;
            let mut steps = 0;
            while j != self.root_index {
                j = self.parent[j];
                steps += 1;
                if steps > n {
                    return bad(format!("joint {start} is on a cycle"));
                }
            }
        }
        for &(a, b) in &self.left_right_pairs {
            if a >= n || b >= n || a == b {
                return bad(format!("invalid mirror pair ({a}, {b})"));
            }
        }
        Ok(())
    }

    /// Same topology check used when two poses meet.
    pub fn ensure_same(&self, other: &JointSchema) -> Result<()> {
        if self.name != other.name || self.len() != other.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} ({} joints) vs {} ({} joints)",
                self.name,
                self.len(),
                other.name,
                other.len()
            )));
        }
        Ok(())
    }
}

/// Whether a 3D pose carries absolute camera depth or is pelvis-centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Absolute,
    RootRelative,
}

impl Frame {
    fn label(self) -> &'static str {
        match self {
            Frame::Absolute => "absolute",
            Frame::RootRelative => "root-relative",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose2D {
    pub schema: Arc<JointSchema>,
    pub joints: Vec<Pixel2>,
}

impl Pose2D {
    /// Panics on a length mismatch; use [`Pose2D::try_new`] for untrusted input.
    pub fn new(schema: Arc<JointSchema>, joints: Vec<Pixel2>) -> Self {
        Self::try_new(schema, joints).expect("pose length must match schema")
    }

    pub fn try_new(schema: Arc<JointSchema>, joints: Vec<Pixel2>) -> Result<Self> {
        if joints.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} joints for schema {} with {}",
                joints.len(),
                schema.name,
                schema.len()
            )));
        }
        Ok(Pose2D { schema, joints })
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|p| p.is_finite())
    }

    /// `[u0, v0, u1, v1, ...]`
    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|p| [p.u, p.v]).collect()
    }

    pub fn from_flat(schema: Arc<JointSchema>, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * schema.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", 2 * schema.len()),
                found: format!("{} values", flat.len()),
            });
        }
        let joints = flat.chunks_exact(2).map(|c| Pixel2::new(c[0], c[1])).collect();
        Self::try_new(schema, joints)
    }

    pub fn map(&self, f: impl Fn(Pixel2) -> Pixel2) -> Pose2D {
        Pose2D {
            schema: self.schema.clone(),
            joints: self.joints.iter().map(|&p| f(p)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub schema: Arc<JointSchema>,
    pub joints: Vec<Point3>,
    pub frame: Frame,
}

impl Pose3D {
    pub fn new(schema: Arc<JointSchema>, joints: Vec<Point3>, frame: Frame) -> Result<Self> {
        if joints.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} joints for schema {} with {}",
                joints.len(),
                schema.name,
                schema.len()
            )));
        }
        if frame == Frame::RootRelative && joints[schema.root_index] != Point3::ORIGIN {
            return Err(Error::FrameMismatch {
                expected: "root at origin",
                found: "root-relative pose with nonzero root",
            });
        }
        Ok(Pose3D { schema, joints, frame })
    }

    pub fn expect_frame(&self, frame: Frame) -> Result<()> {
        if self.frame != frame {
            return Err(Error::FrameMismatch {
                expected: frame.label(),
                found: self.frame.label(),
            });
        }
        Ok(())
    }

    pub fn root(&self) -> Point3 {
        self.joints[self.schema.root_index]
    }

    /// Translates the pose so the root sits exactly at the origin.
    pub fn root_aligned(&self) -> Pose3D {
        let root = self.root();
        let ri = self.schema.root_index;
        let joints = self
            .joints
            .iter()
            .enumerate()
            .map(|(i, &p)| if i == ri { Point3::ORIGIN } else { p.sub(root) })
            .collect();
        Pose3D {
            schema: self.schema.clone(),
            joints,
            frame: Frame::RootRelative,
        }
    }

    pub fn translated(&self, t: Point3) -> Pose3D {
        Pose3D {
            schema: self.schema.clone(),
            joints: self.joints.iter().map(|p| p.add(t)).collect(),
            frame: Frame::Absolute,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|p| p.is_finite())
    }

    /// `[x0, y0, z0, x1, ...]`
    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    /// Builds a pose from a flat buffer. A root-relative request re-centres the
    /// result on the root.
    pub fn from_flat(schema: Arc<JointSchema>, flat: &[f64], frame: Frame) -> Result<Self> {
        if flat.len() != 3 * schema.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", 3 * schema.len()),
                found: format!("{} values", flat.len()),
            });
        }
        let joints = flat.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
        let pose = Pose3D {
            schema,
            joints,
            frame: Frame::Absolute,
        };
        Ok(match frame {
            Frame::Absolute => pose,
            Frame::RootRelative => pose.root_aligned(),
        })
    }
}

/// Translates a pose so its root is at `(0, 0, 0)`.
pub fn root_align(p: &Pose3D) -> Pose3D {
    p.root_aligned()
}

/// Euclidean length of every child-parent edge, root excluded.
pub fn bone_lengths(p: &Pose3D, s: &JointSchema) -> Vec<f64> {
    s.bones().map(|(c, par)| p.joints[c].distance(p.joints[par])).collect()
}

/// Maps crop pixel coordinates to `[-1, 1]`.
pub fn normalize2d(p: &Pose2D, crop_size: f64) -> Pose2D {
    p.map(|q| Pixel2::new(2.0 * q.u / crop_size - 1.0, 2.0 * q.v / crop_size - 1.0))
}

pub fn denormalize2d(p: &Pose2D, crop_size: f64) -> Pose2D {
    p.map(|q| Pixel2::new((q.u + 1.0) * crop_size / 2.0, (q.v + 1.0) * crop_size / 2.0))
}

/// Divides a root-relative pose by `scale_mm`.
pub fn normalize3d(p: &Pose3D, scale_mm: f64) -> Result<Pose3D> {
    p.expect_frame(Frame::RootRelative)?;
    Ok(Pose3D {
        schema: p.schema.clone(),
        joints: p.joints.iter().map(|q| q.scale(1.0 / scale_mm)).collect(),
        frame: Frame::RootRelative,
    })
}

pub fn denormalize3d(p: &Pose3D, scale_mm: f64) -> Result<Pose3D> {
    p.expect_frame(Frame::RootRelative)?;
    Ok(Pose3D {
        schema: p.schema.clone(),
        joints: p.joints.iter().map(|q| q.scale(scale_mm)).collect(),
        frame: Frame::RootRelative,
    })
}
