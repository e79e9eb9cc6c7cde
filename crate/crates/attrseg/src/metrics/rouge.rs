//! ROUGE-L: longest-common-subsequence F-measure between a hypothesis and a
//! reference, beta = 1.2, computed on lowercased punctuation-stripped word
//! sequences.

pub const ROUGE_BETA: f64 = 1.2;

/// Lowercases, strips punctuation and splits on whitespace. Shared by
/// ROUGE-L and CIDEr so scores stay comparable within the artifact.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Clone, Copy, Debug)]
pub struct RougeScore {
    pub f: f64,
    /// Set when the hypothesis or reference tokenized to nothing; the score
    /// is 0.0 in that case.
    pub empty_input: bool,
}

pub fn rouge_l(hypothesis: &str, reference: &str) -> RougeScore {
    let hyp = tokenize(hypothesis);
    let refr = tokenize(reference);
    if hyp.is_empty() || refr.is_empty() {
        return RougeScore { f: 0.0, empty_input: true };
    }
    let lcs = lcs_len(&hyp, &refr) as f64;
    if lcs == 0.0 {
        return RougeScore { f: 0.0, empty_input: false };
    }
    let recall = lcs / refr.len() as f64;
    let precision = lcs / hyp.len() as f64;
    let beta2 = ROUGE_BETA * ROUGE_BETA;
    let f = (1.0 + beta2) * recall * precision / (recall + beta2 * precision);
    RougeScore { f, empty_input: false }
}
