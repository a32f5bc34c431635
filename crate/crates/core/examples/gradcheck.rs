//! Compare analytic and finite-difference gradients for each model stage.

use rasnet::checks::{check_stage, Stage, TOLERANCE};

fn main() -> rasnet::Result<()> {
    for stage in Stage::ALL {
        let check = check_stage(stage, 0, None)?;
        let worst = check.worst().map(|t| (t.name.as_str(), t.report.max_rel_error));
        println!(
            "{:<8} {} tensors, worst {worst:?}, pass {}",
            stage.name(),
            check.tensors.len(),
            check.passed()
        );
    }
    // a deliberately wrong backward pass is caught and named
    let broken = check_stage(Stage::Fusion, 0, Some(Stage::Fusion))?;
    for t in broken.tensors.iter().filter(|t| !t.report.passed) {
        println!(
            "caught: {} rel error {:.2e} > {TOLERANCE:e}",
            t.name, t.report.max_rel_error
        );
    }
    Ok(())
}
