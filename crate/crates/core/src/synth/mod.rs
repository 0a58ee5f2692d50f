//! Synthetic action videos with exact optical flow, foreground masks, and
//! camera homographies.

mod dataset;
mod files;
mod render;
mod scene;

pub use dataset::{
    aligned_crop, clip_seed, config_hash, generate_dataset, prepare_video, segment_starts, train_count, Crop,
    Dataset, FlowMode, InputConfig, Manifest, ManifestEntry, PreparedVideo, Split, MANIFEST_VERSION,
};
pub use files::{
    clip_dir, load_clip_from_files, load_dataset, read_flow_image, read_manifest, save_clip, save_dataset, BOUND_TAG,
};
pub use render::{generate_clip, ClipSample, Mask};
pub use scene::{ActionClass, BackgroundPattern, CameraMotion, ClassSet, SceneConfig, SpriteShape, FRAME_MARGIN};
