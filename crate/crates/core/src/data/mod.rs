//! Scene files, context images, synthetic scenarios and dataset splits.

mod image_io;
mod scene_file;
mod split;
mod synth;

pub use image_io::{read_image, write_image};
pub use scene_file::{load_dataset, parse_scene, parse_scene_str, write_dataset, write_scene, write_scene_string};
pub use split::{split_dataset, Split};
pub use synth::{linear_track, synth_dataset, synth_generate, DatasetSpec, ScenarioKind, ScenarioSpec};
