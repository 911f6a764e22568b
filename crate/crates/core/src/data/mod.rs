//! Annotations, tiling, synthetic scenes, datasets on disk and mAP.

pub mod dataset;
pub mod dota;
pub mod eval;
pub mod synthetic;
pub mod tile;

use serde::{Deserialize, Serialize};

use crate::geometry::OrientedBox;

pub use dataset::{read_detections, write_detections, Dataset, DetectionRecord, Sample};
pub use dota::{parse_dota, serialize_dota, AnnotationRecord};
pub use eval::{evaluate_map, ApMetric, ClassAp, MapReport};
pub use synthetic::{generate_scene, ClassSpec, Scene, SceneSpec};
pub use tile::{tile_image, tile_origins, Window};

/// One annotated object with a 0-based class id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub obb: OrientedBox,
    pub class_id: usize,
    #[serde(default)]
    pub difficult: bool,
}

impl Object {
    pub fn new(obb: OrientedBox, class_id: usize) -> Self {
        Self {
            obb,
            class_id,
            difficult: false,
        }
    }
}
