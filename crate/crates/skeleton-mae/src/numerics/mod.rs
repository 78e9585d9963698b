//! Dense-tensor numerics: scalar abstraction, autodiff tape, parameter
//! storage, optimizers, seeded RNG streams, and the finite-difference
//! gradient oracle. Everything downstream (backbones, models, training)
//! is built on these pieces and nothing else.

pub mod gradcheck;
pub mod optim;
pub mod param;
pub mod rng;
pub mod scalar;
pub mod tape;

pub use gradcheck::{fd_check_params, finite_difference_check, FdReport, DEFAULT_FD_STEP};
pub use optim::{Adam, SgdMomentum};
pub use param::{Bound, GradAccum, ParamId, ParamStore, Parameter};
pub use rng::stream;
pub use scalar::Scalar;
pub use tape::{broadcast_shape, Tape, TensorId};
