//! A small convolutional classifier with exact reverse-mode gradients.
//!
//! The network is generic over the scalar type: models are stored and run in
//! `f32`, while gradient checks cast them to `f64` so that finite differences
//! stay trustworthy.

mod arch;
mod loss;
mod net;
mod params;

use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use arch::{ArchSpec, LayerSpec, Shape};
pub use loss::{ce_loss, forget_margin, log_softmax, softmax, LossKind};
pub use net::{backward, backward_inputs, forward, forward_traced, BatchGradients, InputGradients, Trace};
pub(crate) use net::{backprop, BackpropRequest};
pub use params::{sgd_step, LayerParams, ModelParams, Params};

/// Scalar type the network can run in.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}
