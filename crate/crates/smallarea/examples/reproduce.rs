//! Recompute the bundled 15-state income example under the documented
//! configurations and print per-column deviations from the published
//! reference figures, including the best-configuration resolution of the
//! two EB columns.
//!
//! Run with: cargo run --release --example reproduce

fn main() -> smallarea::Result<()> {
    let report = smallarea::repro::run_reproduction(1e-8)?;
    println!("{report}");
    Ok(())
}
