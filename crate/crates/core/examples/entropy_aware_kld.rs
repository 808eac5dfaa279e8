//! Forward, reverse and entropy-mixed KL divergence on a batch with one
//! confident and one uncertain teacher token.

use mpqad::eakld::{summarize, KldConfig, LogitBatch};
use mpqad::Matrix;

fn main() -> mpqad::Result<()> {
    let teacher = Matrix::new(2, 4, vec![6.0, 0.0, 0.0, 0.0, 0.2, 0.1, 0.0, -0.1])?;
    let student = Matrix::new(2, 4, vec![2.0, 1.0, 0.0, 0.0, 1.0, -1.0, 0.5, 0.0])?;
    let batch = LogitBatch::new(teacher, student, Some(vec![0, 0]), vec![true, true], 2)?;
    for k in [4, 16, 256] {
        let s = summarize(&batch, &KldConfig::new(k)?)?;
        println!("K={k}: {}", serde_json::to_string(&s)?);
    }
    Ok(())
}
