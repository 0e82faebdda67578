//! Sacrifice size, security budgets and the final key length.

mod deltas;
pub mod entropy;
mod final_key;
mod forms;
pub mod normal;
mod phase;
mod sacrifice;

pub use deltas::{ceil_log2, deltas_for, eve_info_bound, security_deltas, SecurityDeltas};
pub use entropy::{hbar, hbar_a};
pub use final_key::{final_key_size, swapped, KeyOutcome};
pub use forms::{FormBuilder, VacuumNormalisation};
pub use normal::phi_inv;
pub use phase::{phase_error_counts, phase_error_exponent, realized_delta_theta1, realized_theta};
pub use sacrifice::{
    choose_a, ml_context, sacrifice_size, theta_hat, worst_case_sacrifice, x_search_range, GridSpec,
    SacrificeBreakdown, SacrificeOptions, TangentChoice,
};

#[cfg(test)]
mod tests;
