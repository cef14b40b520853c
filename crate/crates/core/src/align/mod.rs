//! Cross-modal alignment losses, pseudo-label generation and fusion, and
//! the segmentation losses.

mod contrastive;
mod labels;
mod seg_loss;

pub use contrastive::{
    class_prototype_loss, class_prototypes, info_nce, mcfa_loss, patch_feature_loss,
    ContrastiveMode, McfaConfig, McfaTerms, PrototypeSet,
};
pub use labels::{
    gen_2d_pseudo_labels, lift_and_fuse_labels, self_train_labels, upsample_nearest, LabelSource,
    PixelLabels, PseudoLabelSet, SeenAnnotations,
};
pub use seg_loss::{cross_entropy_loss, lovasz_softmax_from_probs, lovasz_softmax_loss, softmax};
