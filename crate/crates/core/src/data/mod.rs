//! Episode-grouped observation storage, random-policy collection and
//! frame-pair sampling for keypoint training.

mod disk;
mod store;

pub use disk::{load_store, read_manifest, save_store, Manifest, MANIFEST_FILE};
pub use store::{
    collect_random_transitions, sample_frame_pair, Episode, EpisodeStore, FrameIndex, FramePair,
    StoreMetadata,
};
pub(crate) use disk::{
    mask_path, read_mask_png, store_manifest, write_frames, write_manifest, write_mask_png,
};
