//! Minimal numerical substrate: dense arrays, parameters, an LSTM cell,
//! softmax output layers, plain SGD with plateau annealing and a
//! finite-difference gradient checker.
//!
//! All kernels are generic over [`Real`] so the same code runs in 32-bit
//! (training) and 64-bit (gradient-check) precision.

mod array;
mod gradcheck;
mod lstm;
pub mod ops;
mod optim;
mod param;
mod rng;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

pub use array::DenseArray;
pub use gradcheck::{grad_check, grad_check_f32, GradCheckReport};
pub use lstm::{lstm_step, LstmCache, LstmParams};
pub use ops::{cross_entropy, linear_softmax};
pub use optim::{
    global_grad_norm, sgd_step, AnnealEvent, EpochRecord, MetricDirection, SgdState, TrainLog,
    MIN_LR,
};
pub use param::{Parameter, Params};
pub use rng::SeededRng;

/// Floating-point scalar used by every kernel.
pub trait Real:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
