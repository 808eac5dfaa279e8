//! Prints the row layout of each allocation scheme and its effective bit-width.

use mpqad::layout::{build_plan, effective_bitwidth, Scheme};

fn main() -> mpqad::Result<()> {
    for rho in [0.5, 0.25, 0.125] {
        println!("rho = {rho}");
        for scheme in [
            Scheme::SuperGroup,
            Scheme::Stacked,
            Scheme::Random { seed: 42 },
        ] {
            let plan = build_plan(32, rho, scheme)?;
            println!(
                "  {:<12} {}  {:.4} bits",
                scheme.name(),
                plan.bit_string(),
                effective_bitwidth(&plan)
            );
        }
    }
    Ok(())
}
