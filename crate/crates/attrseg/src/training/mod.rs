//! Loss computation, freeze policy enforcement, the AdamW optimization
//! loop and checkpoint/resume plumbing.

pub mod fit;
pub mod loss;
pub mod optim;

pub use fit::{
    bitmap_to_column, fit, load_checkpoint, train_step, training_giou, FitReport, LossRecord,
    TrainSample,
};
pub use loss::{
    bce_loss, compute_loss, compute_loss_on, dice_loss, LossBreakdown, TrainConfig, TrainError,
};
pub use optim::AdamW;
