//! Balanced-case shrinkage on synthetic data: the James–Stein estimator
//! dominates the direct estimator, and its exact risk formula predicts the
//! simulated improvement. Also shows the balanced-loss compromise family.
//!
//! Run with: cargo run --release --example james_stein

use smallarea::fay_herriot::{
    balanced_loss_estimate, james_stein, james_stein_risk, AreaDataset, BSource,
};
use smallarea::numeric::rng::RngStream;

fn main() -> smallarea::Result<()> {
    let m = 15;
    let (v, a) = (1.0f64, 1.0f64);
    let b_true = v / (v + a);
    let mut rng = RngStream::seed_from(42);

    // simulate the two-stage model and accumulate risks
    let reps = 30_000;
    let (mut direct_sse, mut js_sse) = (0.0, 0.0);
    let mut example: Option<AreaDataset> = None;
    for _ in 0..reps {
        let theta: Vec<f64> = (0..m).map(|_| 2.0 + rng.next_normal() * a.sqrt()).collect();
        let y: Vec<f64> = theta
            .iter()
            .map(|t| t + rng.next_normal() * v.sqrt())
            .collect();
        let data = AreaDataset::new(
            (0..m).map(|i| i.to_string()).collect(),
            y.clone(),
            vec![vec![1.0]; m],
            vec![v; m],
        )?;
        let js = james_stein(&data, false)?;
        for i in 0..m {
            direct_sse += (y[i] - theta[i]).powi(2);
            js_sse += (js.estimate[i] - theta[i]).powi(2);
        }
        example.get_or_insert(data);
    }
    let direct_risk = direct_sse / reps as f64;
    let js_risk = js_sse / reps as f64;
    let predicted = james_stein_risk(example.as_ref().unwrap(), b_true)?;

    println!("m = {m}, V = {v}, A = {a}  (true B = {b_true})");
    println!(
        "simulated total risk, direct estimator: {direct_risk:.3}  (theory: {})",
        m
    );
    println!(
        "simulated total risk, James-Stein:       {js_risk:.3}  (theory: {:.3})",
        predicted.total
    );
    println!(
        "risk saved: {:.1}%\n",
        100.0 * (direct_risk - js_risk) / direct_risk
    );

    // balanced loss: slide between goodness of fit (w=1) and precision (w=0)
    let data = example.unwrap();
    println!(
        "balanced-loss estimates for area 0 (direct y = {:.3}):",
        data.y()[0]
    );
    for w in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let est = balanced_loss_estimate(
            &data,
            w,
            BSource::EmpiricalBayes {
                positive_part: true,
            },
        )?;
        println!("  w = {w:.2} -> {:.3}", est[0]);
    }
    Ok(())
}
