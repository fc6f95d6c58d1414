//! Linear recurrent networks trained on a memoryless teacher: closed-form
//! population losses, training, and diagnostics for whether the learned
//! solution extrapolates to longer sequences.

pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod nonlinear;
pub mod objective;
pub mod rng;
pub mod training;

pub use datagen::{Corruption, Group, LabeledDataset, Teacher};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{LinearRNN, Sequence, SequenceModel};
pub use nonlinear::{CellKind, GatedCell};
pub use objective::{GradTriple, LossEstimate, MemorylessTeacher};
pub use training::{InitScheme, InitSpec, OptimizerKind, OptimizerSpec, StepRecord, StopReason, TrainRecord};
