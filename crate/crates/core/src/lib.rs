//! One-class image anomaly detection by puzzle solving.
//!
//! A U-Net style reconstruction network is trained on normal images only: each
//! image is cut into grid cells, one cell is optionally blacked out or
//! desaturated, the cells are shuffled, and the network must return the
//! original image. Inputs are hardened with FGSM perturbations so that cell
//! borders and per-cell statistics cannot be used as shortcuts, and an optional
//! DCGAN-style discriminator adds a feature-matching loss.
//!
//! At test time every puzzle permutation is applied to the input, the
//! reconstruction errors are normalised by their validation means and
//! aggregated with `min`, `max` or `avg` into one anomaly score.
//!
//! Module map:
//!
//! * [`puzzle`]: grid permutations, masking and puzzle construction.
//! * [`models`]: the reconstruction network and the discriminator.
//! * [`adversarial`]: FGSM / PGD perturbations inside an ∞-norm ball.
//! * [`training`]: losses, plateau scheduling and the training loop.
//! * [`scoring`]: per-permutation scores, normalisation and aggregation.
//! * [`evaluation`]: AUROC, FPR at fixed TPR, protocols and robustness runs.
//! * [`data`]: IDX and image-folder loading, canvas fitting, grayscale.
//! * [`experiment`]: from a run config to train, validation and test images.
//! * [`checkpoint`], [`config`], [`manifest`]: persisted run artifacts.

pub mod adversarial;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod manifest;
pub mod models;
pub mod puzzle;
pub mod scoring;
pub mod training;

pub use adversarial::{AttackConfig, AttackTarget};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use data::{DatasetFormat, DatasetSpec, LabeledImages};
pub use error::{Error, Result};
pub use evaluation::{EvalReport, LabeledScores};
pub use models::{Discriminator, DiscriminatorConfig, Reconstructor, ReconstructionNet, UNetConfig};
pub use puzzle::{Grid, GridPermutation, ImageTensor, MaskMode, PermMode, PuzzleConfig};
pub use scoring::{Aggregation, NormalizerTable, ScoreTable};
pub use training::{EpochRecord, TrainConfig};
