//! Evaluation report file: per-sample rows followed by an aggregate block,
//! tab separated with a stable column order so reports diff cleanly.

use std::io::Write;
use std::path::Path;

use super::cider::{cider, CiderItem};
use super::iou::{ciou, giou, EmptyPolicy, MetricError};
use super::rouge::rouge_l;
use crate::datakit::mask::Bitmap;

#[derive(Clone, Debug)]
pub struct EvalRow {
    pub sample_id: String,
    pub pred: Bitmap,
    pub gt: Bitmap,
    /// (hypothesis, references); absent for samples without reference text.
    pub text: Option<(String, Vec<String>)>,
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub giou: f64,
    pub ciou: f64,
    pub rouge_l: Option<f64>,
    pub cider: Option<f64>,
    pub samples: usize,
}

/// Per-sample scores: (sample id, IoU, optional ROUGE-L).
pub type SampleScores = Vec<(String, f64, Option<f64>)>;

pub fn evaluate(rows: &[EvalRow]) -> Result<(EvalSummary, SampleScores), MetricError> {
    let pairs: Vec<(Bitmap, Bitmap)> =
        rows.iter().map(|r| (r.pred.clone(), r.gt.clone())).collect();
    let g = giou(&pairs, EmptyPolicy::ScoreOne)?;
    let c = ciou(&pairs, EmptyPolicy::ScoreOne)?;

    let mut per_sample = Vec::with_capacity(rows.len());
    let mut cider_items = Vec::new();
    let mut rouge_scores = Vec::new();
    for row in rows {
        let iou = super::iou::iou(&row.pred, &row.gt)?;
        let rl = row.text.as_ref().map(|(hyp, refs)| {
            let score = refs
                .iter()
                .map(|r| rouge_l(hyp, r).f)
                .fold(0.0f64, f64::max);
            cider_items.push(CiderItem { hypothesis: hyp.clone(), references: refs.clone() });
            rouge_scores.push(score);
            score
        });
        per_sample.push((row.sample_id.clone(), iou, rl));
    }
    let rouge_mean = if rouge_scores.is_empty() {
        None
    } else {
        Some(rouge_scores.iter().sum::<f64>() / rouge_scores.len() as f64)
    };
    let cider_score = if cider_items.is_empty() {
        None
    } else {
        Some(cider(&cider_items).map(|s| s.corpus).unwrap_or(0.0))
    };
    Ok((
        EvalSummary { giou: g, ciou: c, rouge_l: rouge_mean, cider: cider_score, samples: rows.len() },
        per_sample,
    ))
}

pub fn write_report(
    path: &Path,
    summary: &EvalSummary,
    per_sample: &[(String, f64, Option<f64>)],
) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "sample_id\tiou\trouge_l")?;
    for (id, iou, rl) in per_sample {
        match rl {
            Some(rl) => writeln!(f, "{id}\t{iou:.6}\t{rl:.6}")?,
            None => writeln!(f, "{id}\t{iou:.6}\t-")?,
        }
    }
    writeln!(f, "# aggregate")?;
    writeln!(f, "samples\t{}", summary.samples)?;
    writeln!(f, "giou\t{:.6}", summary.giou)?;
    writeln!(f, "ciou\t{:.6}", summary.ciou)?;
    match summary.rouge_l {
        Some(v) => writeln!(f, "rouge_l\t{v:.6}")?,
        None => writeln!(f, "rouge_l\t-")?,
    }
    match summary.cider {
        Some(v) => writeln!(f, "cider\t{v:.6}")?,
        None => writeln!(f, "cider\t-")?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_layout_is_stable() {
        let full = Bitmap::from_fn(2, 2, |_, _| true);
        let rows = vec![
            EvalRow {
                sample_id: "s1".into(),
                pred: full.clone(),
                gt: full.clone(),
                text: Some(("a red box sits here".into(), vec!["a red box sits here".into()])),
            },
            EvalRow { sample_id: "s2".into(), pred: Bitmap::zeros(2, 2), gt: full, text: None },
        ];
        let (summary, per_sample) = evaluate(&rows).unwrap();
        assert!((summary.giou - 0.5).abs() < 1e-12);
        let dir = std::env::temp_dir().join(format!("attrseg-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("report.tsv");
        write_report(&path, &summary, &per_sample).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.starts_with("sample_id\tiou\trouge_l\n"));
        assert!(body.contains("# aggregate"));
        assert!(body.contains("giou\t0.5"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
