//! Joint transmit precoder and hybrid receive combiner design for a perceptive
//! mobile network in which a passive target-monitoring terminal senses a target
//! using the base station's downlink signal.
//!
//! The crate provides:
//! - [`geometry`]: steering vectors, Saleh–Valenzuela user channels and scenes.
//! - [`metrics`]: user SINR, radar SCNR, the weighted objective and beam patterns.
//! - [`ao`]: the alternating-optimization design (quadratic transform, receive
//!   filter, manifold combiner and precoder QCQP updates).
//! - [`qcqp`]: an interior-point solver for concave QCQPs over complex vectors.
//! - [`linear`]: closed-form ZF, ZF-ISAC, beam-synthesis, MVDR and hybrid decomposition.
//! - [`harness`]: configuration, Monte-Carlo orchestration and CSV/JSON output.

// Negated comparisons reject NaN inputs on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ao;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod linear;
pub mod metrics;
pub mod qcqp;

pub use ao::{ao_solve, AoInit, AoState};
pub use error::{Error, Result};
pub use geometry::{generate_scene, steering_vector, ScenarioSpec, Scene, SceneParams, SvChannelParams, SystemConfig};
pub use linalg::{CMat, CVec, C64};
pub use metrics::{HybridReceiver, MetricReport, Precoder};
