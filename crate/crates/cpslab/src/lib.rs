//! A numerical laboratory for shadow price systems inside proportional
//! bid-ask bands.
//!
//! Given a finite scenario tree whose prices can always stand still with
//! positive probability (a freeze branch at every node), this crate
//! constructs, exactly and reproducibly:
//!
//! * the band-exit stopping skeleton of the price process,
//! * an equivalent martingale measure for a compensated discrete process
//!   built on the skeleton, node by node,
//! * a shadow price at every tree node that stays within a multiplicative
//!   band of the quoted price while being a martingale under the new
//!   measure,
//! * exact and Monte Carlo checks of the stay-put (stickiness) hypothesis
//!   that drives the whole construction.
//!
//! Path ensembles (Brownian, geometric Brownian, fractional Brownian, and a
//! monotone integrated-|B| example) provide desk-scale instances; per-path
//! skeletons verify the band bounds on simulated data.

pub mod cps;
pub mod emm;
pub mod error;
pub mod io;
pub mod lp;
pub mod model;
pub mod simulate;
pub mod skeleton;
pub mod stickiness;
pub mod verify;

pub use cps::{adjust_epsilon, build_cps, build_cps_artifacts, CpsOptions, CpsResult};
pub use error::{Error, Result};
pub use model::{max_norm, validate_tree, EpsilonParams, PathEnsemble, PricePath, ScenarioTree};
pub use skeleton::{build_skeleton, SkeletonDecomposition, SkeletonOptions};
pub use stickiness::{check_tree_sticky, estimate_stickiness};
