//! Personalized emotional prompt learning: the visual guider, the emotion
//! projector bank, prompt construction, the contrastive objective and its
//! pre-training loop.

mod checkpoint;
mod loss;
mod model;
mod train;

pub use checkpoint::{PeplCheckpoint, TrainingMetadata, CHECKPOINT_FORMAT_VERSION};
pub use loss::{contrastive_loss_l1, contrastive_loss_l1_grad, L1Gradients, L1Loss};
pub use model::{
    accumulate_l1, accumulate_l2, build_personalized_prompt, emotion_visual_embedding,
    personalized_text_embedding, personalized_text_embeddings, PeplGradients, PeplParams,
    ProjectorBank, ProjectorCache, ProjectorMode, PromptTable, VisualGuider,
};
pub use train::{
    pretrain_pepl, pretrain_with_vtedc_objective, retrieval_accuracy, CurvePoint, LossCurve,
    PeplConfig, PeplRun,
};
