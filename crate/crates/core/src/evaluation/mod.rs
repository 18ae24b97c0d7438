//! Detection metrics, evaluation protocols, robustness attacks on normal test
//! images, data-efficiency sweeps and zoom augmentation.

mod augment;
mod metrics;
mod protocols;
mod robustness;
mod sweep;

pub use augment::{zoom, zoom_augment, ZOOM_SCALES, ZOOM_TARGET};
pub use metrics::{
    auroc, fpr_at_tpr, mean_std, roc_curve, roc_svg, write_roc_csv, EvalReport, LabeledScores, RocPoint,
    DEFAULT_TPR_POINTS,
};
pub use protocols::{
    medical_split, monitor_set, pooled, protocol1_split, protocol2_split, repeat_protocol1, split_for,
    subsample_test, OneClassSplit, Protocol, RepeatedResult, DEFAULT_VAL_FRACTION, MEDICAL_TEST_NORMALS,
};
pub use robustness::{attack_batch, attack_normal, attack_sweep, AttackRow, AttackVariant, DEFAULT_ATTACK_EPSILONS};
pub use sweep::{data_efficiency_sweep, subsample_indices, subsample_size, subsample_split, SweepPoint};
