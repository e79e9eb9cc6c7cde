//! Evaluation metrics: gIoU and cIoU for masks, ROUGE-L and CIDEr-D for
//! generated text, plus the report writer.

pub mod cider;
pub mod iou;
pub mod report;
pub mod rouge;

pub use cider::{cider, CiderItem, CiderScore};
pub use iou::{ciou, giou, intersection_union, iou, EmptyPolicy, MetricError};
pub use report::{evaluate, write_report, EvalRow, EvalSummary};
pub use rouge::{rouge_l, tokenize, RougeScore};
