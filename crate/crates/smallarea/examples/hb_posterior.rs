//! Inspect the posterior of the between-area variance under the flat
//! prior: mode vs mean (the long right tail pulls the mean far beyond the
//! frequentist point estimates), plus the exact balanced-case posterior of
//! the shrinkage weight B.
//!
//! Run with: cargo run --release --example hb_posterior

use smallarea::fay_herriot::{estimate_a, FhMethod};
use smallarea::hb::{balanced_posterior_b, posterior_a};
use smallarea::repro::{seinc15, seinc15_balanced};

fn main() -> smallarea::Result<()> {
    let data = seinc15();
    let post = posterior_a(&data, 1e-8)?;
    let moment = estimate_a(&data, FhMethod::FhMoment)?;
    let anova = estimate_a(&data, FhMethod::PrAnova)?;

    println!("unbalanced setup:");
    println!("  ANOVA Â            = {:>12.0}", anova.a_hat);
    println!("  moment Â           = {:>12.0}", moment.a_hat);
    println!("  posterior mode of A = {:>12.0}", post.mode);
    println!("  posterior mean E[A|y] = {:>10.0}", post.e_a);
    println!("  normalizer quadrature error ≈ {:.2e}", post.quad_error);
    println!(
        "  density evaluations: {} grid points on [{:.1}, {:.3e}]",
        post.grid.len(),
        post.grid.first().unwrap(),
        post.grid.last().unwrap()
    );
    println!(
        "\nthe posterior mean sits ~{:.1}x above the moment estimate: the tail of",
        post.e_a / moment.a_hat
    );
    println!("π(A|y) decays only polynomially, so upper truncation would be unsafe\n");

    let bal = seinc15_balanced();
    let post_b = balanced_posterior_b(&bal)?;
    println!("balanced variant, posterior of B = V/(V+A):");
    println!("  E[B|y]   = {:.4}", post_b.e_b);
    println!("  sd[B|y]  = {:.4}", post_b.var_b.sqrt());
    println!("  mode     = {:.4}  (min((m-p-4)V/S, 1))", post_b.mode_b);
    Ok(())
}
