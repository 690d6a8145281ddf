//! Reverse-mode differentiation for small dense MLPs, including the
//! second-order path needed by the gradient penalty, plus Adam.

mod adam;
mod mlp;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{gradient_penalty, input_gradient, mlp_forward, Dense, MlpParams, MlpTrace, MlpVars, PenaltyOutput};
pub use tape::{Gradients, Tape, Var};

/// Applies one Adam update to every tensor of an MLP.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState) -> crate::Result<()> {
    state.update(params.tensors_mut(), grads.tensors())
}
