//! Compositional pose quantization.
//!
//! A pose is split into five body-part vectors. Each part has its own small
//! encoder, codebook, and decoder, so one frame becomes five code indices.
//! Poses are quantized after removing the pelvis ground-plane position; the
//! removed track travels alongside the tokens.

mod checkpoint;
mod codec;
mod train;

pub use checkpoint::{decode_codecs, encode_codecs, load_codecs, save_codecs, VQ_MAGIC};
pub use codec::{
    nearest_code, vq_loss, Assignments, LossTerms, PartCodec, PartCodecs, PartData, TokenFrame, VqLossReport,
    BLOCK_NAMES, CODEBOOK_BLOCK,
};
pub use train::{
    detokenize_sequence, planar_center, rec_bound_mm, tokenize_sequence, train_vq, train_vq_with, training_frames,
    TokenSequence, VqConfig, VqTrainReport,
};
