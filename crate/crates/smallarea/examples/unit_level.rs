//! Nested-error regression end to end on synthetic unit-level data:
//! ANOVA variance components, EBLUP of the finite-population means with
//! second-order MSE, and the hierarchical-Bayes counterpart by quadrature.
//!
//! Run with: cargo run --release --example unit_level

use smallarea::numeric::rng::RngStream;
use smallarea::unit_level::{
    anova_components, unit_blup, unit_hb, unit_mse, HbPrior, UnitArea, UnitDataset,
};

fn main() -> smallarea::Result<()> {
    // 8 areas, 4-7 sampled units each out of populations of ~40
    let (sigma_v, sigma_e) = (0.9f64, 1.1f64);
    let beta = [2.0, 0.8];
    let mut rng = RngStream::seed_from(5);
    let mut areas = Vec::new();
    for i in 0..8 {
        let n_i = 4 + (rng.next_u64() % 4) as usize;
        let n_pop = 40u64;
        let v_i = rng.next_normal() * sigma_v;
        let mut pop_x_sum = 0.0;
        let mut y = Vec::new();
        let mut x_rows = Vec::new();
        for unit in 0..n_pop {
            let x = rng.next_normal() + i as f64 * 0.3;
            pop_x_sum += x;
            if (unit as usize) < n_i {
                y.push(beta[0] + beta[1] * x + v_i + rng.next_normal() * sigma_e);
                x_rows.push(vec![1.0, x]);
            }
        }
        areas.push(UnitArea {
            id: format!("area{i}"),
            y,
            x_rows,
            n_pop,
            x_pop_mean: vec![1.0, pop_x_sum / n_pop as f64],
        });
    }
    let data = UnitDataset::new(areas)?;

    let psi = anova_components(&data)?;
    println!(
        "ANOVA components: σ̂²_e = {:.3} (true {:.3}), σ̂²_v = {:.3} (true {:.3})",
        psi.sigma2_e,
        sigma_e * sigma_e,
        psi.sigma2_v,
        sigma_v * sigma_v
    );
    println!("n* = {:.2}, p* = {}\n", psi.n_star, psi.p_star);

    let fit = unit_blup(&data, &psi)?;
    let mse = unit_mse(&data, &psi)?;
    let hb = unit_hb(&data, &HbPrior::default(), 1e-8)?;

    println!(
        "{:>6} {:>4} {:>8} {:>8} {:>9} {:>9} {:>9}",
        "area", "n_i", "ȳ_s", "γ̃ (EB)", "rmse(EB)", "γ̂ (HB)", "sd(HB)"
    );
    for i in 0..data.m() {
        println!(
            "{:>6} {:>4} {:>8.3} {:>8.3} {:>9.3} {:>9.3} {:>9.3}",
            data.areas()[i].id,
            data.n_i(i),
            data.ybar_s()[i],
            fit.gamma[i],
            mse.total[i].sqrt(),
            hb.gamma[i],
            hb.variance[i].sqrt()
        );
    }
    println!(
        "\nposterior of λ = σ²_e/σ²_v: mode {:.2}, mean {:.2} (true {:.2})",
        hb.lambda_mode,
        hb.e_lambda,
        (sigma_e * sigma_e) / (sigma_v * sigma_v)
    );
    Ok(())
}
