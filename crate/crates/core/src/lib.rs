//! Cross-modal contrastive alignment of paired feature vectors.
//!
//! Two GLU projection heads map precomputed features of each modality into a
//! shared space, a dot-product similarity matrix scores every pair in a
//! mini-batch, and one of four contrastive losses (NCE, SHN, MMS or the
//! adaptive mean margin AMM) drives Adam updates. Evaluation ranks the paired
//! item in both retrieval directions and reports R@1/5/10 and mAP.

pub mod data_io;
pub mod error;
pub mod losses;
pub mod numeric;
pub mod optim;
pub mod projection;
pub mod retrieval;
pub mod similarity;
pub mod trainer;

pub use data_io::{Checkpoint, Dataset, EmbeddingStore, PairManifest, PairRecord, Split, SyntheticSpec};
pub use error::{Error, Result};
pub use losses::{AmmConfig, LossKind, LossOutput, LossParams, MmsSchedule};
pub use numeric::{Matrix, Rng};
pub use optim::{AdamHyper, AdamState};
pub use projection::{GluMlpHead, HeadDims, IdentityProjector, Projector};
pub use retrieval::{EvalOptions, RetrievalReport};
pub use similarity::SimilarityMatrix;
pub use trainer::{TrainConfig, TrainOutcome};
