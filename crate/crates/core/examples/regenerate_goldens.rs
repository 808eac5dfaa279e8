//! Rewrites the fixture manifests and golden cases, then verifies them.
//!
//! cargo run --example regenerate_goldens

use mpqad::fixtures::{fixture_dir, regenerate, verify_goldens};

fn main() -> mpqad::Result<()> {
    let dir = fixture_dir();
    let cases = regenerate(&dir)?;
    let report = verify_goldens(&dir)?;
    for c in &report.cases {
        println!(
            "{:<36} {}",
            c.name,
            if c.passed { "ok" } else { "MISMATCH" }
        );
    }
    println!("{} cases written to {}", cases.len(), dir.display());
    if !report.all_passed() {
        std::process::exit(1);
    }
    Ok(())
}
