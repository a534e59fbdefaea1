//! Scene-conditioned fine-tuning.
//!
//! A procedural renderer draws small egocentric panoramas containing one
//! red target object. A patch projector turns the image into visual tokens,
//! and every decoder layer gains a cross-attention adapter that reads them.
//! Fine-tuning updates only the projector and the adapters.
//!
//! A fresh adapter has a zero output projection, so attaching it changes
//! nothing until training moves that projection.

mod encoder;
mod fuse;
mod model;
mod scene;
mod toy;

pub use encoder::{patchify, position_encoding, PatchEncoder, Patches};
pub use fuse::{fuse_layer, fuse_layer_backward, CrossAttn, FuseCache};
pub use model::{
    decode_vla, encode_vla, finetune, finetune_with, generate_vla, load_vla, save_vla, FinetuneReport, FusionParams,
    VisConfig, VlaRecord, VLA_MAGIC,
};
pub use scene::{
    decode_ppm, encode_ppm, load_scene, render_scene, save_scene, Bearing, SceneAnnotation, SceneImage, HORIZON,
    IMAGE_SIZE, MAX_DISTANCE, MIN_DISTANCE, TARGET_COLOR,
};
pub use toy::{
    classify_bearing, evaluate_bearing, reference_tokens, sample_scenes, toy_dataset, toy_instructions, toy_prompt,
    BearingEval, ToyTask,
};
