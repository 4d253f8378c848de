//! Rigid-flow visual odometry toolkit.
//!
//! The crate covers the full loop used to study pixel-wise pose prediction:
//!
//! * [`synthesis`] builds seeded scenes (intrinsics, depth, camera and object
//!   motions) and renders their ego, object and total optical flow.
//! * [`estimator`] fits a 6-DoF motion hypothesis at every pixel together with
//!   per-channel log-variance maps.
//! * [`selection`] fuses the pixel-wise hypotheses into one global pose by
//!   picking the least uncertain pixel of each patch and softmax-weighting.
//! * [`refine`] polishes a global pose against a reference flow with damped
//!   Gauss-Newton on the reprojection residual.
//! * [`losses`] and [`metrics`] score predictions, and [`io`] reads and writes
//!   the on-disk formats.

pub mod error;
pub mod estimator;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod map;
pub mod metrics;
pub mod reduce;
pub mod refine;
pub mod selection;
pub mod synthesis;

pub use error::{Error, Result};
pub use estimator::{estimate_pixelwise, EstimatorConfig, PixelwisePose};
pub use geometry::{EulerAngles, Intrinsics, MotionSE3, PixelGrid};
pub use map::{DepthMap, FlowMap, Map, Map3, Mask};
pub use refine::{refine_pose, RefineConfig, RefineResult};
pub use selection::{GlobalPose, PatchGrid, WeightSign};
pub use synthesis::{generate_scene, rigid_flow, SceneConfig, SceneSample};
