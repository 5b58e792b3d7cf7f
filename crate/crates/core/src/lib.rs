//! Weak-field-homodyne (WFH) photon-counting tomography.
//!
//! An unknown state is interfered with a weak coherent probe on a beam
//! splitter and both outputs are read by mode-blind photon counters. This
//! crate builds the resulting POVMs on the block-diagonal "twirled" state
//! space, checks informational completeness, simulates counting data and
//! reconstructs twirled states by diluted RρR maximum likelihood.
//!
//! Every analytic construction has a brute-force counterpart on dense
//! truncated Fock spaces ([`sim::born_oracle`], [`twirl::twirl_oracle_mc`],
//! [`optics::plt_on_fock`]) so the formulas can be checked at desk scale.
//!
//! Linear-algebra code is generic over [`Real`]; the `*F64` aliases below
//! are what the CLI and the statistics layer use.

// `!(x > 0.0)` style guards reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fock;
pub mod linalg;
pub mod mle;
pub mod optics;
pub mod povm;
pub mod probes;
pub mod rng;
pub mod serde_complex;
pub mod sim;
pub mod stats;
pub mod twirl;

pub use error::{Error, Result};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar type accepted by the linear-algebra layer.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex scalar over `T`.
pub type C<T> = num_complex::Complex<T>;

pub type C64 = C<f64>;
pub type DenseOperatorF64 = fock::DenseOperator<f64>;
pub type BlockOperatorF64 = twirl::BlockOperator<f64>;
pub type PovmF64 = povm::Povm<f64>;
pub type PovmElementF64 = povm::PovmElement<f64>;
pub type MeasurementContextF64 = povm::MeasurementContext<f64>;
pub type ModeMatrixF64 = optics::ModeMatrix<f64>;
pub type ReconstructionReportF64 = mle::ReconstructionReport<f64>;

/// `x` converted into `T`.
#[inline]
pub(crate) fn re<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// `T` back to `f64`.
#[inline]
pub(crate) fn f64_of<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
