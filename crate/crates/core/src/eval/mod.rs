//! Progressive student evaluation and coreset baselines.

mod coreset;
mod student;

pub use coreset::{
    coreset_herding, coreset_kcenter, coreset_random, coreset_subset, herding_select, joint_embeddings, kcenter_select,
    CoresetMethod,
};
pub use student::{aggregate_reports, evaluate_student, train_student, train_student_progressive, EvalConfig};
