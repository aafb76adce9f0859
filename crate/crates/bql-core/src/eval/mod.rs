//! Regime evaluation: held-out utility estimation, profit assembly,
//! selection frequencies, exact small-instance optimality oracles, and
//! empirical regret.

mod instance;
mod metrics;
mod oracle;

pub use instance::{random_instance, DiscreteInstance};
pub use metrics::{
    empirical_regret, ipw_utility, mc_profit_on_instance, profit_lambda, selection_frequencies,
    FrequencyTable, InstanceSubject,
};
pub use oracle::{
    backward_induction_optimal, brute_force_optimal, exact_profit, value_key, Key, OracleRegime,
};
