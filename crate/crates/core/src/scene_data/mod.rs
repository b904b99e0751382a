//! Domain types, dataset manifests, polygon rasterization, and the
//! deterministic synthetic scene generator.

mod io;
mod manifest;
mod rasterize;
mod synth;
mod types;

pub use io::{read_image_png, read_mask_png, write_image_png, write_mask_png};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, LoadedScene, SceneRecord};
pub use rasterize::{point_in_polygon, rasterize_annotations, rasterize_grade_map};
pub use synth::generate_synthetic_scene;
pub use types::{
    BuildingAnnotation, DamageGrade, HazardType, MaskStack, RasterImage, ScenePair, Split,
    MASK_CHANNELS, UNCLASSIFIED,
};
