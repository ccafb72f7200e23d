//! Bundle and checkpoint formats.

pub mod blob;
mod bundle;
mod checkpoint;

pub use bundle::{
    BlobRef, BundleParts, EmbeddingBundle, Manifest, ManifestBlobs, Split, TaskPlan, TaskView,
    MANIFEST_FILE, MANIFEST_VERSION,
};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
