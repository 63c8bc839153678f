//! Regression and thresholded classification metrics on hand-made data.

use anyhow::Result;
use songpop::evaluation::{error_histogram, mae, pearson, threshold_metrics, ThresholdMetrics};

fn main() -> Result<()> {
    let actual = [80.0, 60.0, 90.0, 50.0, 72.0, 68.0];
    let predicted = [75.0, 65.0, 85.0, 40.0, 69.0, 71.0];
    println!("mae {:.3}", mae(&predicted, &actual)?);
    println!("pearson {:.5}", pearson(&predicted, &actual)?);

    let m = threshold_metrics(&predicted, &actual, 70.0)?;
    println!(
        "T=70 tp {} fp {} tn {} fn {}  accuracy {:.3}  precision {:?}  recall {:?}  f1 {:?}",
        m.tp, m.fp, m.tn, m.fn_, m.accuracy, m.precision, m.recall, m.f1
    );

    // heavy class imbalance: 2398 actual positives, 103 false positives
    let skewed = ThresholdMetrics::from_confusion(70.0, 2393, 103, 0, 5);
    println!(
        "imbalanced: precision {:.4} recall {:.4} f1 {:.4} positive rate {:.3}",
        skewed.precision.unwrap(),
        skewed.recall.unwrap(),
        skewed.f1.unwrap(),
        skewed.positive_rate
    );

    let h = error_histogram(&predicted, &actual, 4)?;
    println!("error histogram edges {:?} counts {:?} mean {:.3}", h.edges, h.counts, h.mean_error);
    Ok(())
}
