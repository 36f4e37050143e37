//! Tiny transformer encoder trained with a masked-LM objective.

mod adam;
mod checkpoint;
mod gradcheck;
mod masking;
mod model;
mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{
    init_model, is_embedding_tensor, layer_tensor_name, Checkpoint, ModelConfig, Tensor, TensorMap,
    FORMAT_VERSION, OUTPUT_EMBEDDING, POSITION_EMBEDDING, TOKEN_EMBEDDING,
};
pub use gradcheck::{compare_gradients, grad_check, numeric_gradients, GradCheckReport};
pub use masking::{mask_batch, MaskedBatch, MaskingPolicy};
pub use model::{forward, loss_and_grads, mlm_loss, ForwardOutput};
pub use train::{encode_corpus, encode_text, heldout_loss, pretrain, write_loss_curve, TrainRun};
pub(crate) use model::{Grads, Model, SeqCache};
