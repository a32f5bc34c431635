//! Confusion-matrix rates, ROC curve and AUC for a set of scores.

use rasnet::metrics::{confusion, roc_auc};
use rasnet::plot::{roc_csv, roc_svg};

fn main() -> rasnet::Result<()> {
    let scores = [0.95, 0.9, 0.8, 0.7, 0.65, 0.6, 0.4, 0.35, 0.2, 0.1];
    let labels = [1, 1, 0, 1, 1, 0, 1, 0, 0, 0];
    let c = confusion(&scores, &labels, 0.5)?;
    println!("{c:?}");
    println!(
        "accuracy {:.2}, sensitivity {:.2}, specificity {:.2}",
        c.accuracy()?,
        c.sensitivity()?,
        c.specificity()?
    );

    let curve = roc_auc(&scores, &labels)?;
    println!("AUC {:.3}", curve.auc);
    print!("{}", roc_csv(&curve));
    let path = std::env::temp_dir().join("rasnet-roc-example.svg");
    std::fs::write(&path, roc_svg(&[("example".to_string(), &curve)]))?;
    println!("wrote {}", path.display());
    Ok(())
}
