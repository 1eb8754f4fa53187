pub mod autodiff;
pub mod signal;
pub mod loss;
pub mod encoder;
pub mod train;

mod float_serde;
pub mod eval;

pub use autodiff::{Graph, Tensor, Var};
pub use encoder::{EncoderConfig, EncoderParams};
pub use eval::{EvalReport, EvalSpec};
pub use loss::LossConfig;
pub use signal::{Label, SequenceBatch};
pub use train::{Checkpoint, LossKind, TrainConfig};
