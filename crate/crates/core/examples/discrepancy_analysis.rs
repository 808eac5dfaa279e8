//! Star discrepancy, Koksma-Hlawka bound and surrogate loss for each scheme
//! on a salience profile with a few steps.

use mpqad::alloc_analysis::{analyze, SalienceProfile};
use mpqad::layout::{build_plan, Scheme};

fn main() -> mpqad::Result<()> {
    let d_out = 256;
    let salience = SalienceProfile::new((0..d_out).map(|i| 1.0 + ((i / 40) % 3) as f64).collect())?;
    println!(
        "{:<12} {:>4} {:>9} {:>9} {:>9} {:>10}",
        "scheme", "N", "D*", "KH", "gap", "surrogate"
    );
    for scheme in [
        Scheme::SuperGroup,
        Scheme::Random { seed: 42 },
        Scheme::Stacked,
    ] {
        let r = analyze(&build_plan(d_out, 0.125, scheme)?, &salience, 0.3, 0.05)?;
        println!(
            "{:<12} {:>4} {:>9.5} {:>9.3} {:>9.3} {:>10.3}",
            r.scheme,
            r.high_precision_rows,
            r.discrepancy,
            r.kh_bound,
            r.empirical_gap,
            r.surrogate
        );
    }
    Ok(())
}
