//! Train/eval split leakage check: any image id shared between the two
//! sides is reported, and CI treats a non-empty overlap as a failure.

use std::collections::BTreeSet;

use super::manifest::SampleRecord;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitReport {
    /// Image ids present in both splits, sorted.
    pub overlap: Vec<String>,
    pub train_images: usize,
    pub eval_images: usize,
}

impl SplitReport {
    pub fn is_clean(&self) -> bool {
        self.overlap.is_empty()
    }
}

fn image_id(record: &SampleRecord) -> String {
    record.image.to_string_lossy().into_owned()
}

pub fn validate_split(train: &[SampleRecord], eval: &[SampleRecord]) -> SplitReport {
    let train_ids: BTreeSet<String> = train.iter().map(image_id).collect();
    let eval_ids: BTreeSet<String> = eval.iter().map(image_id).collect();
    let overlap = train_ids.intersection(&eval_ids).cloned().collect();
    SplitReport { overlap, train_images: train_ids.len(), eval_images: eval_ids.len() }
}
