//! CIDEr-D: consensus-based caption scoring over 1..4-gram TF-IDF vectors
//! with hypothesis-count clipping and a Gaussian length penalty (sigma 6),
//! scaled by 10. IDF comes from the reference corpus.

use std::collections::BTreeMap;

use thiserror::Error;

use super::rouge::tokenize;

pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;

#[derive(Clone, Debug)]
pub struct CiderItem {
    pub hypothesis: String,
    pub references: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct CiderScore {
    pub corpus: f64,
    pub per_item: Vec<f64>,
    /// True when the corpus has fewer than two images, making the IDF
    /// degenerate (all zero for grams present everywhere).
    pub degenerate_idf: bool,
}

#[derive(Debug, Error)]
pub enum CiderError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("item {0} has no references")]
    NoReferences(usize),
}

type NgramCounts = BTreeMap<Vec<String>, f64>;

fn ngram_counts(tokens: &[String], n: usize) -> NgramCounts {
    let mut counts = NgramCounts::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    counts
}

struct TfIdfVec {
    /// gram -> count * idf, per n.
    vecs: Vec<NgramCounts>,
    norms: Vec<f64>,
    length: usize,
}

fn to_tfidf(tokens: &[String], idf: &[NgramCounts], unseen_idf: f64) -> TfIdfVec {
    let mut vecs = Vec::with_capacity(CIDER_MAX_N);
    let mut norms = Vec::with_capacity(CIDER_MAX_N);
    for (n, idf_n) in idf.iter().enumerate() {
        let counts = ngram_counts(tokens, n + 1);
        let mut vec = NgramCounts::new();
        let mut norm = 0.0;
        for (gram, count) in counts {
            // Grams never seen in any reference keep idf = ln(N).
            let w = count * idf_n.get(&gram).copied().unwrap_or(unseen_idf);
            norm += w * w;
            vec.insert(gram, w);
        }
        vecs.push(vec);
        norms.push(norm.sqrt());
    }
    TfIdfVec { vecs, norms, length: tokens.len() }
}

#[allow(clippy::needless_range_loop)]
fn sim(hyp: &TfIdfVec, refr: &TfIdfVec) -> [f64; CIDER_MAX_N] {
    let delta = hyp.length as f64 - refr.length as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut out = [0.0; CIDER_MAX_N];
    for n in 0..CIDER_MAX_N {
        let mut dot = 0.0;
        for (gram, &hw) in &hyp.vecs[n] {
            if let Some(&rw) = refr.vecs[n].get(gram) {
                // Clip the hypothesis weight to the reference weight.
                dot += hw.min(rw) * rw;
            }
        }
        if hyp.norms[n] != 0.0 && refr.norms[n] != 0.0 {
            out[n] = dot / (hyp.norms[n] * refr.norms[n]) * penalty;
        }
    }
    out
}

#[allow(clippy::needless_range_loop)]
pub fn cider(items: &[CiderItem]) -> Result<CiderScore, CiderError> {
    if items.is_empty() {
        return Err(CiderError::EmptyCorpus);
    }
    for (i, item) in items.iter().enumerate() {
        if item.references.is_empty() {
            return Err(CiderError::NoReferences(i));
        }
    }
    let n_images = items.len() as f64;
    let degenerate_idf = items.len() < 2;

    // Document frequency: number of images whose references contain a gram.
    let mut idf: Vec<NgramCounts> = vec![NgramCounts::new(); CIDER_MAX_N];
    for item in items {
        for n in 0..CIDER_MAX_N {
            let mut seen: NgramCounts = NgramCounts::new();
            for reference in &item.references {
                for (gram, _) in ngram_counts(&tokenize(reference), n + 1) {
                    seen.insert(gram, 1.0);
                }
            }
            for (gram, _) in seen {
                *idf[n].entry(gram).or_insert(0.0) += 1.0;
            }
        }
    }
    for idf_n in idf.iter_mut() {
        for value in idf_n.values_mut() {
            *value = n_images.ln() - value.max(1.0).ln();
        }
    }
    let unseen_idf = n_images.ln();

    let mut per_item = Vec::with_capacity(items.len());
    for item in items {
        let hyp = to_tfidf(&tokenize(&item.hypothesis), &idf, unseen_idf);
        let mut acc = [0.0; CIDER_MAX_N];
        for reference in &item.references {
            let rv = to_tfidf(&tokenize(reference), &idf, unseen_idf);
            let s = sim(&hyp, &rv);
            for n in 0..CIDER_MAX_N {
                acc[n] += s[n];
            }
        }
        let mean_n: f64 = acc.iter().sum::<f64>() / CIDER_MAX_N as f64;
        per_item.push(mean_n / item.references.len() as f64 * 10.0);
    }
    let corpus = per_item.iter().sum::<f64>() / per_item.len() as f64;
    Ok(CiderScore { corpus, per_item, degenerate_idf })
}
