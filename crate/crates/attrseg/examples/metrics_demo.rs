//! Worked metric computations: IoU aggregates on constructed mask pairs,
//! ROUGE-L on a small hypothesis/reference pair, CIDEr on a toy corpus.
//!
//! ```bash
//! cargo run -p attrseg --release --example metrics_demo
//! ```

use attrseg::datakit::mask::Bitmap;
use attrseg::metrics::{cider, ciou, giou, iou, rouge_l, CiderItem, EmptyPolicy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Two pairs: IoU 1/3 (areas 4 and 4 overlapping in 2) and IoU 1.
    let mut pred = Bitmap::zeros(4, 4);
    let mut gt = Bitmap::zeros(4, 4);
    for (y, x) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        pred.set(y, x, true);
    }
    for (y, x) in [(1, 0), (1, 1), (2, 0), (2, 1)] {
        gt.set(y, x, true);
    }
    let same = Bitmap::from_fn(2, 2, |y, x| y == 0 && x == 0);
    let pairs = vec![(pred.clone(), gt.clone()), (same.clone(), same)];

    println!("pair IoU:  {:.6} (expect 1/3)", iou(&pred, &gt)?);
    println!("gIoU:      {:.6} (expect 2/3)", giou(&pairs, EmptyPolicy::ScoreOne)?);
    println!("cIoU:      {:.6} (expect 3/7)", ciou(&pairs, EmptyPolicy::ScoreOne)?);

    let score = rouge_l("a c d", "a b c d");
    println!("ROUGE-L:   {:.6} (expect ~0.8356)", score.f);

    let items = vec![
        CiderItem {
            hypothesis: "a red circle sits in the upper left".into(),
            references: vec!["a red circle sits in the upper left".into()],
        },
        CiderItem {
            hypothesis: "the blue square fills the lower half".into(),
            references: vec!["the blue square fills the lower half".into()],
        },
    ];
    let cider_score = cider(&items)?;
    println!("CIDEr:     {:.6} (identical captions; expect 10)", cider_score.corpus);

    let partial = vec![
        CiderItem {
            hypothesis: "a large red circle in the image".into(),
            references: vec!["the large red circle sits in the image".into()],
        },
        CiderItem {
            hypothesis: "a dog runs over green grass".into(),
            references: vec!["a brown dog runs across the green grass".into()],
        },
        CiderItem {
            hypothesis: "completely unrelated words here now".into(),
            references: vec!["the yellow kite flies above the beach".into()],
        },
    ];
    let partial_score = cider(&partial)?;
    println!("CIDEr (partial-overlap corpus): {:.6}", partial_score.corpus);
    for (i, s) in partial_score.per_item.iter().enumerate() {
        println!("  item {i}: {s:.6}");
    }
    Ok(())
}
