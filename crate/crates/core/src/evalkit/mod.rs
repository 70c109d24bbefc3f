//! Detection metrics: oriented-box IoU and per-class average precision over
//! the entire annotated area and the near-field driving corridor.

mod ap;
mod boxes;
mod iou;
mod report;

pub use ap::{average_precision, class_curve, ClassCurve, Interpolation};
pub use boxes::{read_boxes_jsonl, write_boxes_jsonl, Box3D, ObjectClass};
pub use iou::{bev_intersection_area, box_iou, convex_clip, iou_3d, polygon_area, rotated_iou_bev};
pub use report::{
    evaluate, evaluate_frames, filter_region, Corridor, EvalConfig, EvalReport, FrameBoxes, IouMode, Region,
    RegionReport,
};
