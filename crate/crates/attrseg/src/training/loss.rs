//! Mask loss: per-pixel binary cross-entropy plus DICE, combined as
//! `lambda_bce * BCE + lambda_dice * DICE`. One implementation on the tape
//! serves both training and the plain scalar API.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Mat, Tape, Var};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda_bce: f64,
    pub lambda_dice: f64,
    /// Desk-scale default; the reference setup trains with batch 160.
    pub batch_size: usize,
    /// Desk-scale default; the reference setup trains 12000 iterations.
    pub total_iterations: u64,
    pub seed: u64,
    pub dice_smooth: f64,
    /// Checkpoint cadence; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            lambda_bce: 1.0,
            lambda_dice: 0.5,
            batch_size: 8,
            total_iterations: 500,
            seed: 0,
            dice_smooth: 1.0,
            checkpoint_every: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("dice_smooth", self.dice_smooth),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(TrainError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("lambda_bce", self.lambda_bce),
            ("lambda_dice", self.lambda_dice),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(TrainError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bad training config: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iteration}; offending batch: {batch_ids:?}")]
    Divergence { iteration: u64, batch_ids: Vec<String> },
    #[error(transparent)]
    Seg(#[from] crate::segcore::SegError),
    #[error(transparent)]
    Checkpoint(#[from] crate::segcore::CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn check_shapes(pred: &Mat, gt: &Mat) -> Result<(), TrainError> {
    if pred.rows() != gt.rows() || pred.cols() != gt.cols() {
        return Err(TrainError::Shape(format!(
            "pred {}x{} vs gt {}x{}",
            pred.rows(),
            pred.cols(),
            gt.rows(),
            gt.cols()
        )));
    }
    if gt.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(TrainError::Shape("ground truth must be binary".into()));
    }
    Ok(())
}

/// BCE-with-logits on the tape (mean over pixels).
pub fn bce_on<'t>(logits: Var<'t>, gt: &Mat) -> Var<'t> {
    logits.bce_with_logits(gt)
}

/// DICE loss on the tape:
/// `1 - (2 * sum(sigmoid(M) * gt) + smooth) / (sum(sigmoid(M)) + sum(gt) + smooth)`.
pub fn dice_on<'t>(logits: Var<'t>, gt: &Mat, smooth: f64) -> Var<'t> {
    let tape = logits.tape();
    let probs = logits.sigmoid();
    let gt_const = tape.constant(gt.clone());
    let inter = probs.hadamard(gt_const).sum_all();
    let numerator = inter.scale(2.0).add_const(smooth);
    let denominator = probs.sum_all().add_const(gt.sum() + smooth);
    numerator.div_scalar(denominator).scale(-1.0).add_const(1.0)
}

/// Weighted combination on the tape; returns (total, bce, dice) nodes.
pub fn compute_loss_on<'t>(
    logits: Var<'t>,
    gt: &Mat,
    cfg: &TrainConfig,
) -> (Var<'t>, Var<'t>, Var<'t>) {
    let bce = bce_on(logits, gt);
    let dice = dice_on(logits, gt, cfg.dice_smooth);
    let total = bce.scale(cfg.lambda_bce).add(dice.scale(cfg.lambda_dice));
    (total, bce, dice)
}

pub fn bce_loss(logits: &Mat, gt: &Mat) -> Result<f64, TrainError> {
    check_shapes(logits, gt)?;
    let tape = Tape::new();
    Ok(bce_on(tape.constant(logits.clone()), gt).scalar())
}

pub fn dice_loss(logits: &Mat, gt: &Mat, smooth: f64) -> Result<f64, TrainError> {
    check_shapes(logits, gt)?;
    let tape = Tape::new();
    Ok(dice_on(tape.constant(logits.clone()), gt, smooth).scalar())
}

#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub total: f64,
    pub bce: f64,
    pub dice: f64,
}

pub fn compute_loss(logits: &Mat, gt: &Mat, cfg: &TrainConfig) -> Result<LossBreakdown, TrainError> {
    check_shapes(logits, gt)?;
    let tape = Tape::new();
    let (total, bce, dice) = compute_loss_on(tape.constant(logits.clone()), gt, cfg);
    Ok(LossBreakdown { total: total.scalar(), bce: bce.scalar(), dice: dice.scalar() })
}
