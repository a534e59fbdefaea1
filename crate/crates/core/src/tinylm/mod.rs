//! Small decoder-only transformer over the unified vocabulary.
//!
//! Pre-norm residual blocks with learned absolute positions, causal
//! multi-head self-attention and a GELU feed-forward layer. Gradients are
//! computed by hand; [`record_grad`] is the single entry point used by both
//! plain training and vision-conditioned fine-tuning.
//!
//! The training loss is the mean negative log-likelihood of the answer
//! tokens given everything before them. Prompt positions carry no loss
//! unless `loss_on_prompt` is set.

mod checkpoint;
mod generate;
mod model;
mod train;

pub use checkpoint::{decode_lm, decode_lm_prefix, encode_lm, load_lm, save_lm, LM_MAGIC};
pub(crate) use checkpoint::{read_blocks, write_blocks, Reader};
pub use generate::{generate, DecodeConfig, Generation, MotionGrammar};
pub use model::{
    backward, forward, forward_cached, logit_nll_grad, nll_loss, record_grad, ForwardCache, Fusion, GradSinks,
    LayerParams, LmParams, LmRecord, ModelConfig, RecordGrad, Want,
};
pub use train::{curve_csv, evaluate, train, train_with, CurvePoint, Schedule, TrainConfig};
pub(crate) use train::{clip_grad_norm, Batcher};
