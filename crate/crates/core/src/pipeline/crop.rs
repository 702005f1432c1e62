use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pixel2;
use crate::skeleton::{Pose2D, CROP_SIZE};

/// Margin applied around the person box before cropping.
pub const CROP_MARGIN: f64 = 1.2;

/// Maps source-image pixels into the square crop: `(p - origin) * s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub x0: f64,
    pub y0: f64,
    pub s: f64,
}

impl CropTransform {
    pub fn identity() -> Self {
        CropTransform { x0: 0.0, y0: 0.0, s: 1.0 }
    }

    pub fn apply(&self, p: Pixel2) -> Pixel2 {
        Pixel2::new((p.u - self.x0) * self.s, (p.v - self.y0) * self.s)
    }

    pub fn invert(&self, p: Pixel2) -> Pixel2 {
        Pixel2::new(p.u / self.s + self.x0, p.v / self.s + self.y0)
    }
}

/// Axis-aligned person box in source pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Tight box around every joint.
    pub fn around(pose: &Pose2D) -> Self {
        let (mut lo_u, mut lo_v, mut hi_u, mut hi_v) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &pose.joints {
            lo_u = lo_u.min(p.u);
            lo_v = lo_v.min(p.v);
            hi_u = hi_u.max(p.u);
            hi_v = hi_v.max(p.v);
        }
        BBox {
            x: lo_u,
            y: lo_v,
            w: hi_u - lo_u,
            h: hi_v - lo_v,
        }
    }
}

/// Crops a square of side `1.2 * max(w, h)` centered on the box and scales it
/// to the standard crop size.
pub fn crop_pose_2d(pose: &Pose2D, bbox: &BBox) -> Result<(Pose2D, CropTransform)> {
    if !(bbox.w > 0.0 && bbox.h > 0.0) || !bbox.w.is_finite() || !bbox.h.is_finite() {
        return Err(Error::EmptyBBox);
    }
    let side = CROP_MARGIN * bbox.w.max(bbox.h);
    let (cu, cv) = (bbox.x + bbox.w / 2.0, bbox.y + bbox.h / 2.0);
    let t = CropTransform {
        x0: cu - side / 2.0,
        y0: cv - side / 2.0,
        s: CROP_SIZE / side,
    };
    Ok((pose.map(|p| t.apply(p)), t))
}
