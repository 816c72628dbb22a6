//! Attention fusion of the text and lab embeddings, the prediction head, and the assembled model.

pub mod attention;
pub mod model;

pub use attention::{softmax_row, FusionParams, Head};
pub use model::{vocab_path, FusionModel, Mode, ModelConfig, Prepared, Task, TextInput, CHECKPOINT_VERSION};
