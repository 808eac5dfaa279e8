//! Pretrains a full-precision teacher on the copy task, then distills it into
//! a 1.88-bit student and prints the loss before and after.

use std::time::Instant;

use mpqad::rng::SeededRng;
use mpqad::trainer::{
    copy_task_batch, evaluate, pretrain_teacher, run_qad, Precision, TrainerConfig,
};

fn main() -> mpqad::Result<()> {
    let cfg = TrainerConfig::default();
    let start = Instant::now();
    let teacher = pretrain_teacher(cfg.model, 300, 1e-2, 16, cfg.seed)?;
    let eval = copy_task_batch(
        &mut SeededRng::new(7),
        cfg.model.vocab,
        cfg.model.seq_len,
        64,
    )?;
    let t = evaluate(&teacher, &eval, &Precision::Full)?;
    println!(
        "teacher: loss {:.4} accuracy {:.3} ({:.1?})",
        t.task_loss,
        t.accuracy,
        start.elapsed()
    );

    let student_prec = cfg.student_precision()?;
    let before = evaluate(&teacher, &eval, &student_prec)?;
    let run = run_qad(&teacher, &teacher, &cfg)?;
    let after = evaluate(&run.student, &eval, &student_prec)?;
    println!(
        "student rho={}: loss {:.4} -> {:.4}, accuracy {:.3} -> {:.3} ({:.1?})",
        cfg.rho,
        before.task_loss,
        after.task_loss,
        before.accuracy,
        after.accuracy,
        start.elapsed()
    );
    let first = &run.history[0];
    let last = run.history.last().expect("at least one step");
    println!(
        "batch task loss {:.4} -> {:.4}, lambda {:.3}",
        first.task, last.task, last.lambda
    );
    Ok(())
}
