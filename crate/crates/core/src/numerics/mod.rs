//! Dense tensors, a reverse-mode tape, Adam, and a finite-difference checker.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradcheck, relative_error, GradcheckReport, GroupReport, REL_ERR_FLOOR};
pub use graph::{Graph, Var};
pub use params::{LoraAdapter, Param, ParamId, ParamStore};
pub use tensor::{log_sum_exp, Tensor, LAYER_NORM_EPS};
