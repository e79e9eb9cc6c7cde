//! Weighted category mixing over per-category manifests. The stream is a
//! pure function of (manifests, weights, seed): sample `n` is derived from
//! the seed and the index alone, so training can resume mid-stream.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use super::manifest::{Category, SampleRecord};
use super::qa::{self, QaTemplate};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("weights must be non-negative and not all zero")]
    BadWeights,
    #[error("category {0} has positive weight but no samples")]
    EmptyCategory(Category),
    #[error(transparent)]
    Qa(#[from] qa::QaError),
}

/// One training sample as emitted by the stream: the record plus the step-1
/// (question, answer) pair, simulated for non-reasoning categories and
/// genuine for reasoning ones.
#[derive(Clone, Debug)]
pub struct EmittedSample {
    pub record: SampleRecord,
    pub question: String,
    pub answer: String,
    pub simulated: bool,
}

pub struct MixtureSampler {
    categories: Vec<(Category, f64, Vec<SampleRecord>)>,
    registry: Vec<QaTemplate>,
    seed: u64,
    total_weight: f64,
}

impl MixtureSampler {
    pub fn new(
        manifests: BTreeMap<Category, Vec<SampleRecord>>,
        weights: BTreeMap<Category, f64>,
        registry: Vec<QaTemplate>,
        seed: u64,
    ) -> Result<Self, SamplerError> {
        let mut categories = Vec::new();
        let mut total_weight = 0.0;
        for (category, weight) in &weights {
            if *weight < 0.0 || !weight.is_finite() {
                return Err(SamplerError::BadWeights);
            }
            if *weight == 0.0 {
                continue;
            }
            let records = manifests.get(category).cloned().unwrap_or_default();
            if records.is_empty() {
                return Err(SamplerError::EmptyCategory(*category));
            }
            total_weight += *weight;
            categories.push((*category, *weight, records));
        }
        if categories.is_empty() || total_weight <= 0.0 {
            return Err(SamplerError::BadWeights);
        }
        Ok(Self { categories, registry, seed, total_weight })
    }

    /// The `n`-th sample of the stream.
    pub fn sample(&self, n: u64) -> Result<EmittedSample, SamplerError> {
        let mut rng = crate::rng::derive_rng_indexed(self.seed, "mixture", n);
        let mut pick = rng.random::<f64>() * self.total_weight;
        let mut chosen = &self.categories[self.categories.len() - 1];
        for entry in &self.categories {
            if pick < entry.1 {
                chosen = entry;
                break;
            }
            pick -= entry.1;
        }
        let (category, _, records) = chosen;
        let record = records[rng.random_range(0..records.len())].clone();
        let (question, answer, simulated) = match category {
            Category::Reasoning => {
                let question = record.query.clone().unwrap_or_default();
                let answer = record.description.clone().unwrap_or_default();
                (question, answer, false)
            }
            _ => {
                let mut qa_stream = qa::qa_rng(self.seed, &record.sample_id);
                let (q, a) = qa::simulate_step1(&record, &self.registry, &mut qa_stream)?;
                (q, a, true)
            }
        };
        Ok(EmittedSample { record, question, answer, simulated })
    }

    /// Infinite iterator view of the stream.
    pub fn iter(&self) -> impl Iterator<Item = Result<EmittedSample, SamplerError>> + '_ {
        (0u64..).map(move |n| self.sample(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::manifest::MaskRef;
    use crate::datakit::qa::default_registry;
    use crate::datakit::rle::RleMask;
    use std::path::PathBuf;

    fn records(category: Category, n: usize) -> Vec<SampleRecord> {
        (0..n)
            .map(|i| SampleRecord {
                sample_id: format!("{category}-{i}"),
                image: PathBuf::from("img.ppm"),
                mask: MaskRef::Rle(RleMask { size: (1, 1), counts: vec![1] }),
                category,
                phrase: Some("the blue square".into()),
                query: Some("Which square looks calm?".into()),
                description: Some("The blue square sits on the left.".into()),
            })
            .collect()
    }

    fn sampler(weights: &[(Category, f64)]) -> Result<MixtureSampler, SamplerError> {
        let mut manifests = BTreeMap::new();
        manifests.insert(Category::Referring, records(Category::Referring, 5));
        manifests.insert(Category::Reasoning, records(Category::Reasoning, 5));
        manifests.insert(Category::Semantic, records(Category::Semantic, 5));
        MixtureSampler::new(
            manifests,
            weights.iter().cloned().collect(),
            default_registry(),
            99,
        )
    }

    #[test]
    fn degenerate_weights_pick_single_category() {
        let s = sampler(&[(Category::Referring, 1.0), (Category::Reasoning, 0.0)]).unwrap();
        for n in 0..200 {
            let e = s.sample(n).unwrap();
            assert_eq!(e.record.category, Category::Referring);
            assert!(e.simulated);
        }
    }

    #[test]
    fn two_way_frequencies_within_3_sigma() {
        let s = sampler(&[(Category::Referring, 1.0), (Category::Reasoning, 1.0)]).unwrap();
        let n = 10_000u64;
        let mut referring = 0usize;
        for i in 0..n {
            if s.sample(i).unwrap().record.category == Category::Referring {
                referring += 1;
            }
        }
        let freq = referring as f64 / n as f64;
        let sigma = (0.25f64 / n as f64).sqrt();
        assert!((freq - 0.5).abs() < 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn stream_reproducible_from_seed() {
        let a = sampler(&[(Category::Referring, 1.0), (Category::Semantic, 2.0)]).unwrap();
        let b = sampler(&[(Category::Referring, 1.0), (Category::Semantic, 2.0)]).unwrap();
        let ids_a: Vec<String> = (0..100).map(|n| a.sample(n).unwrap().record.sample_id).collect();
        let ids_b: Vec<String> = (0..100).map(|n| b.sample(n).unwrap().record.sample_id).collect();
        assert_eq!(ids_a, ids_b);
    }

    #[test]
    fn reasoning_bypasses_simulation() {
        let s = sampler(&[(Category::Reasoning, 1.0)]).unwrap();
        let e = s.sample(0).unwrap();
        assert!(!e.simulated);
        assert_eq!(e.question, "Which square looks calm?");
    }

    #[test]
    fn config_errors() {
        assert!(matches!(
            sampler(&[(Category::Referring, 0.0)]),
            Err(SamplerError::BadWeights)
        ));
        let mut manifests = BTreeMap::new();
        manifests.insert(Category::Referring, Vec::new());
        let err = MixtureSampler::new(
            manifests,
            [(Category::Referring, 1.0)].into_iter().collect(),
            default_registry(),
            1,
        );
        assert!(matches!(err, Err(SamplerError::EmptyCategory(Category::Referring))));
    }
}
