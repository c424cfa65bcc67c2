//! Tandem speaker verification and spoofing countermeasure evaluation, and
//! joint optimization of the two detectors.
//!
//! * [`metrics`]: EER, DCF, t-DCF and the minimum normalized t-DCF
//! * [`nn`]: small MLP scorers with exact gradients
//! * [`calibration`]: affine score calibration
//! * [`soft_tdcf`]: differentiable t-DCF surrogate
//! * [`train`]: REINFORCE and finetuning of the tandem
//! * [`synth`]: synthetic tandem problems
//! * [`harness`]: multi-seed runs, telemetry and reports

pub mod calibration;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod soft_tdcf;
pub mod synth;
pub mod train;
pub mod types;

pub use calibration::{accept_probability, sigmoid, train_calibrator, Calibrator};
pub use config::Config;
pub use error::{Error, Result};
pub use metrics::{dcf, eer, hard_rates, min_norm_tdcf, tandem_error_rates, tdcf, MetricReport, Threshold};
pub use nn::{Activation, GradientTape, Scorer, StepDirection};
pub use soft_tdcf::{soft_rates, soft_tdcf_loss, soft_tdcf_train_step, SoftThresholds};
pub use synth::{generate_world, pretrain_pair, AttackSpec, WorldConfig};
pub use train::{
    reward, sample_action, tandem_action_probability, Method, PolicyPair, RewardKind, RewardSpec, TrainConfig,
};
pub use types::{
    tandem_ground_truth, validate_cost_params, AsvLabel, CmLabel, Decision, ErrorRates, ScoreEntry, ScoreSet,
    TandemCostParams, Trial, TrialClass, TrialLabel,
};
