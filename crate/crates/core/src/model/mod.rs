//! Trainable point encoder, frozen teacher, and the embedding-weighted heads
//! shared by both modalities.

mod checkpoint;
mod encoder;
mod head;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use encoder::{EncoderConfig, Linear, PointEncoder, PointForward, TeacherEncoder};
pub use head::{head_logits, head_logits_tensor, predict_labels};
