//! Panoptic occupancy NDT mapping.
//!
//! Integrates per-frame panoptic segmentations and depth into a sparse
//! octree of voxels that each carry an incremental surface Gaussian,
//! occupancy log-odds, a dense semantic histogram and a bounded sparse
//! instance histogram. Instances are tracked by back-projecting the
//! map into the camera plane and matching by IoU; per-voxel panoptic
//! labels are derived from the histograms on demand. A synthetic scene
//! simulator and a 2D/3D evaluation suite make the whole pipeline
//! testable without datasets.

pub mod classes;
pub mod cli;
pub mod eval;
pub mod frame;
pub mod geometry;
pub mod histogram;
pub mod integrator;
pub mod io;
pub mod map;
pub mod params;
pub mod propagation;
pub mod raster;
pub mod renderer;
pub mod sim;
pub mod tracker;

pub use classes::{ClassDef, ClassId, ClassKind, ClassTable, VOID_CLASS};
pub use frame::{merge_panoptic, panoptic_score, PanopticFrame, PanopticLabel2D};
pub use geometry::{project, unproject, Intrinsics, Pixel, Pose};
pub use integrator::{process_frame, FrameStats};
pub use map::{NdtShape, NdtVoxel, PanopticMap, VoxelIndex};
pub use params::MapParams;
pub use propagation::{export_labels, propagate_label, PanopticLabel3D};
pub use renderer::{render_view, vtou, RenderedView};
pub use tracker::{forward_map, match_instances, MatchDecision, MatchOutcome};
