//! Object-level F1, object Dice and Jaccard on a small hand-drawn scene.
//!
//! ```text
//! cargo run -p segal --example segmentation_metrics
//! ```

use segal::grid::LabelMask;
use segal::metrics::{connected_components, match_objects, object_f1, segmentation_scores};

fn draw(h: usize, w: usize, boxes: &[(usize, usize, usize, usize)]) -> LabelMask {
    let mut m = LabelMask::filled(h, w, 0);
    for &(top, left, bh, bw) in boxes {
        for r in top..top + bh {
            for c in left..left + bw {
                m.set(r, c, 1);
            }
        }
    }
    m
}

fn main() -> segal::Result<()> {
    // two ground-truth objects; the prediction finds one well, one poorly, plus a false positive
    let gt = draw(24, 24, &[(2, 2, 6, 6), (14, 12, 8, 8)]);
    let pred = draw(24, 24, &[(2, 3, 6, 6), (18, 18, 3, 3), (14, 2, 3, 3)]);

    let (p, g) = (connected_components(&pred, 1), connected_components(&gt, 1));
    println!("{} predicted objects, {} ground-truth objects", p.len(), g.len());
    let matched = match_objects(&p, &g);
    for (pi, gi, iou) in &matched.pairs {
        println!("predicted object {pi} matches ground truth {gi} with IoU {iou:.3}");
    }
    println!("unmatched predictions {:?}, missed objects {:?}", matched.unmatched_pred, matched.unmatched_gt);
    let (precision, recall, f1) = object_f1(&p, &g, 0.5);
    println!("precision {precision:.3} recall {recall:.3} F1 {f1:.3}");
    let s = segmentation_scores(&pred, &gt, 0.5)?;
    println!("object Dice {:.3}, Jaccard {:.3}", s.dice_obj, s.jaccard);
    Ok(())
}
