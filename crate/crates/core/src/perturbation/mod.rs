//! Interaction-level edits and the selectors that choose which training
//! interactions to edit.

mod edit;
mod idag;
mod pseudo;
mod select;

pub use edit::{
    apply_plan, budget_count, least_popular_item, plan_from_record, plan_to_record, Edit, EditKind,
    EditRecord, PerturbationPlan, PlanRecord, TargetRef,
};
pub use idag::{all_cascading_scores, build_idag, cascading_score, Idag};
pub use pseudo::{
    perturbed_instances, sample_pseudo_perturbation, sample_pseudo_perturbation_with,
    PseudoPerturbation,
};
pub use select::{
    casper_ranking, pool_uids, select_casper, select_earliest_random, select_from_pool,
    select_latest_random, select_random, EditChoice, Pool,
};
