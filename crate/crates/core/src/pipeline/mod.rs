//! Dataset records, crop bookkeeping, end-to-end labeling and validation.

mod crop;
mod label;
mod record;
mod validate;

pub use crop::{crop_pose_2d, BBox, CropTransform, CROP_MARGIN};
pub use label::{label_batch, label_dataset, label_record, label_stream, LabelConfig, LabelSummary, DEFAULT_VIRTUAL_FOCAL};
pub use record::{read_records, DatasetRecord, RecordReader};
pub use validate::{
    check_record, validate_dataset, validate_stream, Violation, ViolationKind, CROP_TOLERANCE_PX,
    REPROJECTION_TOLERANCE_PX, ROOT_TOLERANCE_MM,
};
