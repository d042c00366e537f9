//! Windowed supervised training, the held-out test buffer, and budgeted
//! grid search.

mod grid;
mod trainer;
mod windows;

pub use grid::{grid_search, halving_rungs, ArmResult, GridResult, GridSpace, RungRecord};
pub use trainer::{
    check_no_leak, data_hash, mean_loss, sample_loss, train_model, write_history, Budget,
    EpochRecord, HaltReason, TrainOutcome, TrainRun, Trainer,
};
pub use windows::{make_windows, split_train_test, windows_from_channels, Sample, WindowSpec};
