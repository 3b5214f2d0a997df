// SPDX-License-Identifier: Apache-2.0

//! Policy-gradient objectives on a tabular softmax policy.
//!
//! Objectives are maximised. Every variant returns an analytic gradient
//! with respect to the learner's logits; [`finite_diff_check`] verifies it.

mod gradcheck;
mod loss;
mod policy;
mod train;

pub use gradcheck::{finite_diff_check, GradReport, REL_ERR_FLOOR};
pub use loss::{
    grpo_advantages, loss_and_grad, trajectory_ratio, Advantages, Aggregation, LossConfig, LossOutput, PgVariant,
    Policies, Trajectory, TrajectoryRatio,
};
pub use policy::ToyPolicy;
pub use train::{toy_train_loop, BanditTask, CurvePoint, LearningCurve, SequenceTask, ToyTask, TrainConfig};
