//! Pinhole camera model and the shift-and-reproject construction of a
//! virtual right view.
//!
//! Units: millimeters for camera-frame points, pixels for image points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::CropTransform;
use crate::skeleton::{Frame, Pose2D, Pose3D};

/// Default horizontal baseline of the virtual right camera, millimeters.
pub const DEFAULT_DX_MM: f64 = 500.0;

/// Zero-skew pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidIntrinsics("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }
}

/// A point in camera coordinates, millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn scale(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(self, o: Point3) -> f64 {
        self.sub(o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// An image point, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pixel2 {
    pub u: f64,
    pub v: f64,
}

impl Pixel2 {
    pub const fn new(u: f64, v: f64) -> Self {
        Pixel2 { u, v }
    }

    pub fn distance(self, o: Pixel2) -> f64 {
        (self.u - o.u).hypot(self.v - o.v)
    }

    pub fn is_finite(self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Perspective projection of a camera-frame point.
pub fn project(p: Point3, k: &CameraIntrinsics) -> Result<Pixel2> {
    if !(p.z > 0.0) {
        return Err(Error::NonPositiveDepth { z: p.z, joint: None });
    }
    Ok(Pixel2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Lifts a pixel to the camera-frame point at depth `z`.
pub fn back_project(px: Pixel2, z: f64, k: &CameraIntrinsics) -> Result<Point3> {
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth { z, joint: None });
    }
    Ok(Point3::new((px.u - k.cx) * z / k.fx, (px.v - k.cy) * z / k.fy, z))
}

/// Projects every joint of an absolute pose.
pub fn project_pose(pose: &Pose3D, k: &CameraIntrinsics) -> Result<Pose2D> {
    pose.expect_frame(Frame::Absolute)?;
    let joints = pose
        .joints
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            project(p, k).map_err(|_| Error::NonPositiveDepth { z: p.z, joint: Some(i) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pose2D::new(pose.schema.clone(), joints))
}

/// Right-view 2D pose seen by a camera displaced by `dx` along +x: each joint
/// is shifted to `(x + dx, y, z)` and reprojected with the same intrinsics.
pub fn synthesize_right_view(pose_abs: &Pose3D, k: &CameraIntrinsics, dx: f64) -> Result<Pose2D> {
    pose_abs.expect_frame(Frame::Absolute)?;
    let joints = pose_abs
        .joints
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            project(Point3::new(p.x + dx, p.y, p.z), k)
                .map_err(|_| Error::NonPositiveDepth { z: p.z, joint: Some(i) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pose2D::new(pose_abs.schema.clone(), joints))
}

/// Horizontal disparity `fx * dx / z` between the two views of a point at depth `z`.
pub fn disparity(k: &CameraIntrinsics, dx: f64, z: f64) -> f64 {
    k.fx * dx / z
}

/// Intrinsics valid in the coordinates of a cropped and resized image.
pub fn adjust_intrinsics_for_crop(k: &CameraIntrinsics, crop: &CropTransform) -> Result<CameraIntrinsics> {
    if !(crop.s > 0.0) || !crop.s.is_finite() {
        return Err(Error::InvalidCrop(crop.s));
    }
    Ok(CameraIntrinsics {
        fx: k.fx * crop.s,
        fy: k.fy * crop.s,
        cx: (k.cx - crop.x0) * crop.s,
        cy: (k.cy - crop.y0) * crop.s,
    })
}
