//! Validation metrics on hand-sized series, including the samples they skip.
//!
//! cargo run --example metrics

use twinwatch::metrics::{avg_rel_err, max_rel_err, mean_ned, ned_pointwise, rmse, total_ned, MetricConfig};

fn main() -> twinwatch::Result<()> {
    let cfg = MetricConfig::default();

    println!("rmse([1,2,3], [2,3,4]) = {}", rmse(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0])?.value);

    // Two replicated predictions, one measurement each. The first sample has
    // no spread at all, so the normalized distance leaves it out.
    let mean = [0.0, 1.0, 2.0, 3.0];
    let std = [0.0, 0.5, 0.5, 0.25];
    let measured = [0.0, 1.5, 3.0, 2.0];
    let ned = ned_pointwise(&mean, &std, &measured, &cfg)?;
    println!("pointwise ned = {:?} (included {:?})", ned.distances, ned.included);
    let m = mean_ned(&ned)?;
    let t = total_ned(&ned)?;
    println!("mean ned = {:.4}  total ned = {:.4}  over {} samples, {} skipped", m.value, t.value, m.included, m.excluded);

    // Relative errors divide by the prediction, so zero predictions are skipped.
    let times = [0.0, 0.01, 0.02, 0.03];
    let avg = avg_rel_err(&mean, &measured, &times, &cfg)?;
    let max = max_rel_err(&mean, &measured, &cfg)?;
    println!("avg rel err = {:.4}  max rel err = {:.4}  ({} skipped)", avg.value, max.value, avg.excluded);
    Ok(())
}
