//! Synthesis and evaluation of spatially inconsistent multi-view image pairs.
//!
//! A posed multi-view scene ([`scene_bundle`]) is mined for frame triplets
//! (V1, V2, V3) and an object O that satisfy the selection filters
//! ([`triplet_select`]). O is erased from V2 ([`inpaint`]) and re-inserted
//! from V3 ([`compositor`]), which gives it a pose that no single rigid scene
//! could explain. V1 is then labeled with letters ([`labeling`]), the pairs
//! are packaged into a forced-choice benchmark ([`benchmark_build`]) and
//! models or humans are scored on finding the edited object
//! ([`eval_harness`]).

pub mod benchmark_build;
pub mod compositor;
pub mod eval_harness;
pub mod fixtures;
pub mod geometry;
pub mod inpaint;
pub mod jsonl;
pub mod labeling;
pub mod mock_http;
pub mod pipeline;
pub mod raster;
pub mod scene_bundle;
pub mod synth;
pub mod triplet_select;


pub use benchmark_build::{BenchmarkItem, BenchmarkManifest, PairMeta};
pub use compositor::{EditRecipe, EditedPair, Variant};
pub use eval_harness::{Trial, TrialStatus};
pub use geometry::{PixelMask, RelativePose};
pub use labeling::{AnswerKey, LabelAssignment};
pub use raster::{DepthMap, InstanceMap, Rect};
pub use scene_bundle::{CameraModel, InstanceId, SceneBundle, ViewFrame};
pub use triplet_select::{SelectionConfig, TripletCandidate};
