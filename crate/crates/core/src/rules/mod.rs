//! If-Then rules: when device A emits event Evt, run an ordered action list.

mod engine;
mod model;
pub mod template;

pub use engine::{RuleEngine, FIRE_LOG_CAPACITY, MAX_CHAIN_DEPTH};
pub use model::{
    alerts_pipeline, validate_spec, ActionOutcome, EventRef, FireLogEntry, Rule, RuleAction,
    RuleSpec, Trigger, BUILTIN_VARS, MAX_RULE_ACTIONS,
};
