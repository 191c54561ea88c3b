//! Two-branch patch-similarity network: shared-weight conv branches, a dense
//! head over the concatenated embeddings, BCE training with Adam.

mod arch;
mod checkpoint;
mod layers;
mod model;
mod real;
mod train;

pub use arch::{ArchConfig, ConvStage, PoolSpec, StageShape, EMBED_DIM};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use model::{sigmoid, BranchOutput, BranchSide, ModelState, Param, TrainMeta};
pub use real::{matmul, Real};
pub use train::{
    accuracy, mean_probability, train, DatasetView, EarlyStopping, EpochRecord, PairSource, TrainConfig, TrainLog,
};
