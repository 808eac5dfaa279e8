//! Picks the layers whose features change most, by lowest mean cosine to the
//! previous layer, and evaluates the feature loss on them.

use mpqad::lafd::{adaptive_feature_loss, layer_cosine_scores, select_layers, FeatureStack};
use mpqad::rng::SeededRng;
use mpqad::Matrix;

fn main() -> mpqad::Result<()> {
    let mut rng = SeededRng::new(3);
    let (layers, tokens, d) = (7, 12, 16);
    let mut h = Matrix::<f64>::from_fn(tokens, d, |_, _| rng.normal());
    let mut teacher = vec![h.clone()];
    for l in 1..layers {
        // even layers barely move, odd layers add a large update
        let step = if l % 2 == 0 { 0.05 } else { 1.5 };
        h.data_mut()
            .iter_mut()
            .for_each(|v| *v += step * rng.normal());
        teacher.push(h.clone());
    }
    let mask: Vec<bool> = (0..tokens).map(|t| t != 0).collect();
    let student: Vec<_> = teacher
        .iter()
        .map(|m| m.map(|v| v + 0.1 * v.signum()))
        .collect();
    let t = FeatureStack::new(teacher, mask.clone())?;
    let s = FeatureStack::new(student, mask)?;
    let scores = layer_cosine_scores(&t);
    let selected = select_layers(&scores, 3)?;
    let rounded: Vec<String> = scores.iter().map(|c| format!("{c:.3}")).collect();
    println!("scores   [{}]", rounded.join(", "));
    println!("selected {selected:?}");
    println!(
        "feature loss {:.5}",
        adaptive_feature_loss(&t, &s, &selected)?
    );
    Ok(())
}
