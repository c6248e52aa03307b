//! Rigid registration initialization from coarse segmentations.
//!
//! Each label of a fixed (partial-view) and a moving (full-view) label map is
//! turned into an exact Euclidean distance map; the six rigid parameters are
//! then fitted by clamped gradient descent on the difference of the maps.
//!
//! ```
//! use distinit::edt::build_stack;
//! use distinit::evaluation::tre_mean;
//! use distinit::objective::ObjectiveConfig;
//! use distinit::optimizer::{optimize, OptimizerConfig};
//! use distinit::phantom::{generate, PhantomSpec};
//! use distinit::transform::ParamVector;
//!
//! let p = generate(&PhantomSpec { moving_dims: [48; 3], spacing: 2.0, ..Default::default() })?;
//! let ids = p.label_ids();
//! let fixed = build_stack(&p.fixed, &ids)?;
//! let moving = build_stack(&p.moving, &ids)?;
//! let start = p.ground_truth.perturb(&ParamVector::new([0.0; 3], [10.0, 0.0, 0.0]));
//! let cfg = OptimizerConfig { max_iters: 300, ..Default::default() };
//! let (t, _) = optimize(&fixed, &moving, &start, &ObjectiveConfig::default(), &cfg, &p.fixed_mask)?;
//! assert!(tre_mean(&t, &p.landmarks_fixed, &p.landmarks_moving)? < 2.0);
//! # Ok::<(), distinit::Error>(())
//! ```

pub mod baseline;
pub mod edt;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod objective;
pub mod optimizer;
pub mod phantom;
pub mod sweep;
pub mod transform;
pub mod volume;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/volumes.md")]
    mod volumes {}
    #[doc = include_str!("../../../book/src/distance-maps.md")]
    mod distance_maps {}
    #[doc = include_str!("../../../book/src/transforms.md")]
    mod transforms {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/optimizer.md")]
    mod optimizer {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/phantoms.md")]
    mod phantoms {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
