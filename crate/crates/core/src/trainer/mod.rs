//! Training loop, checkpoints, and the render / eval commands.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod render;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, FORMAT_VERSION};
pub use config::{ModelConfig, TrainConfig, PRESETS};
pub use eval::{evaluate_dir, evaluate_model, render_options, score_view, write_report, DirEvaluation};
pub use render::{orbit_poses, resolve_poses, write_rendered_view, NamedPose, PoseSource};
pub use train::{
    numbered_checkpoint, record_training_loss, scene_box_for, schedule_of, ChunkTargets, StepRecord, Trainer,
    CHECKPOINT_FILE, LOG_FILE,
};
