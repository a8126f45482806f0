//! Dense reverse-mode differentiation, AdamW and gradient verification.

pub mod checkpoint;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckReport, ParamCheck, MIN_MAGNITUDE};
pub use optim::{adamw_step, AdamWConfig, AdamWState, Subset};
pub use tape::{Tape, Var};
pub use tensor::{Param, ParamRegistry, Partition, Tensor};
