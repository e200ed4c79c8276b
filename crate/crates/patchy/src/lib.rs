//! Synthesis and certification of nearly time-optimal stabilizing patchy
//! feedback controllers for nonlinear systems `dx = f(x, u)`.
//!
//! The pipeline has four stages:
//!
//! 1. [`value`] — solve the penalized optimal-stopping value function V on
//!    a grid (semi-Lagrangian value iteration) and measure its regularity.
//! 2. [`quadratic`] — cover the working sub-level annulus with quadratic
//!    upper approximants sharing one curvature coefficient, giving a
//!    piecewise-quadratic surrogate `~V = min_i V_i` with a control value
//!    per piece.
//! 3. [`patch`] — slice `~V` into level sets (unions of sphere arcs),
//!    build flow-tube lens patches over the arcs, trim them along bisector
//!    hyperplanes, and assemble the totally ordered patchy feedback.
//! 4. [`sim`] — integrate Caratheodory trajectories of the discontinuous
//!    closed loop with event localization and verify the near-optimality
//!    guarantee: arrival in the eps-ball within time `V(y) + eps`.
//!
//! See the `examples/` directory for one runnable example per stage and
//! the `patchy` binary for the file-based pipeline.

pub mod artifact;
pub mod constants;
pub mod error;
pub mod geometry;
pub mod math;
pub mod patch;
pub mod pipeline;
pub mod quadratic;
pub mod rng;
pub mod sim;
pub mod system;
pub mod value;

pub use constants::{derive_constants, ConstantsLedger, ConstantsOptions};
pub use error::{Error, Result};
pub use geometry::{Hyperplane, Sphere};

pub use system::{ControlSystem, ControlValue};
pub use value::{domain_bound, penalty, solve_value_function, GridSpec, GridValueFunction};
