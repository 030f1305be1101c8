//! Tensor-kernel scheduling with schedule reuse across kernels of the same
//! class.

pub mod autoscheduler;
pub mod executor;
pub mod loopnest;
pub mod records;
pub mod schedule;
pub mod transfer;
pub mod zoo;

mod par;
