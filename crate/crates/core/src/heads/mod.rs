//! Trainable HAR and TAL heads, their losses, and the training loop.

pub mod har;
pub mod losses;
pub mod tal;
pub mod train;

pub use har::{argmax, summarize, train_har, HarHead, HarModel, HarObjective, WirelessEncoder};
pub use losses::{
    cross_entropy_loss, focal_loss, localization_loss, one_hot, tal_total_loss, LocalizationLoss, LossValue,
    ALPHA_CLS, ALPHA_LOC, FOCAL_ALPHA, FOCAL_GAMMA,
};
pub use tal::{
    build_targets, frame_features, frame_rate, nms, train_tal, FrameNormalizer, LevelTargets, TalConfig,
    TalObjective, TalPyramid,
};
pub use train::{grad_check, train, train_monitored, Adam, Objective, TrainConfig, TrainOutcome};

/// ChaCha stream for head initialisation.
pub(crate) const HEAD_STREAM: u64 = 0;
/// ChaCha stream for text-branch initialisation.
pub(crate) const TEXT_STREAM: u64 = 1;
/// ChaCha stream for minibatch shuffling.
pub(crate) const SHUFFLE_STREAM: u64 = 2;
