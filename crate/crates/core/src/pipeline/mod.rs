//! Two-stage training, weight transfer, tiled inference and evaluation.

mod data;
mod evaluate;
mod infer;
mod schedule;
mod train;
mod transfer;

pub use data::{kfold, select, split_indices, CellCrops, SomaTiles, Split, TrainItem, TrainSet};
pub use evaluate::{
    branch_report, evaluate_branch, evaluate_soma, score_cell, score_soma, soma_report, BranchReport, CellScore, EvalReport, SomaReport,
    SomaSampleScore, MIN_SOMA_SIZE,
};
pub use infer::{
    accumulate, binarize, extract_somas, prompt_window, segment_cell, segment_cells, sliding_window_infer, InferOptions, THRESHOLD,
};
pub use schedule::{cosine_lr, lr_at, TrainConfig};
pub use train::{sample_gradients, train_stage, TrainOutcome};
pub use transfer::{is_transferred, transfer_weights, TransferManifest};
