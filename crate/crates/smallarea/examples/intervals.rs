//! Empirical-Bayes confidence intervals: the naive z-interval, both
//! calibrated balanced-case cut-offs, and the unbalanced width-corrected
//! interval on the bundled dataset.
//!
//! Run with: cargo run --release --example intervals

use smallarea::fay_herriot::{AreaDataset, FayHerriotFit, FhMethod};
use smallarea::intervals::{
    calibrated_interval, conditional_interval, known_a_interval, naive_interval, smith_interval,
    IntervalMode, IntervalSpec,
};
use smallarea::numeric::rng::RngStream;
use smallarea::repro::seinc15;

fn main() -> smallarea::Result<()> {
    // balanced synthetic data to show the whole cut-off family
    let m = 30;
    let (v, b_true) = (1.0f64, 0.6f64);
    let a = v * (1.0 - b_true) / b_true;
    let mut rng = RngStream::seed_from(11);
    let y: Vec<f64> = (0..m)
        .map(|_| rng.next_normal() * a.sqrt() + rng.next_normal() * v.sqrt())
        .collect();
    let data = AreaDataset::new(
        (0..m).map(|i| i.to_string()).collect(),
        y,
        vec![vec![1.0]; m],
        vec![v; m],
    )?;
    let spec = IntervalSpec::new(0.05, data.p(), IntervalMode::Calibrated)?;
    let area = 0;
    let known = known_a_interval(&data, b_true, area, 0.05)?;
    let naive = naive_interval(&data, &spec, area)?;
    let calib = calibrated_interval(&data, &spec, area)?;
    let cond = conditional_interval(&data, &spec, area)?;
    println!("balanced synthetic data, area 0, nominal 95%:");
    for (name, iv) in [
        ("known-A (exact)", known),
        ("naive z", naive),
        ("calibrated t*", calib),
        ("conditional t*", cond),
    ] {
        println!(
            "  {name:16} [{:>7.3}, {:>7.3}]  cutoff {:.4}  width {:.3}",
            iv.lo,
            iv.hi,
            iv.cutoff,
            iv.hi - iv.lo
        );
    }
    println!(
        "the calibrated cut-offs widen the naive interval to repair its O(1/m)\ncoverage deficit\n"
    );

    // unbalanced real data: width-corrected intervals per state
    let data = seinc15();
    let fit = FayHerriotFit::fit(&data, FhMethod::Reml)?;
    println!(
        "bundled income data, width-corrected 95% intervals (REML Â = {:.0}):",
        fit.a_hat
    );
    for i in 0..5 {
        let (iv, terms) = smith_interval(&data, &fit, i, 0.05)?;
        println!(
            "  {:>3}  θ̂ = {:>8.0}  [{:>8.0}, {:>8.0}]  width inflation c*/h² = {:.3}",
            data.ids()[i],
            iv.center,
            iv.lo,
            iv.hi,
            terms.c_star / terms.h2
        );
    }
    Ok(())
}
