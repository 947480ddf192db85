//! Reference run on oracle data: full adversarial training against the
//! BCE-only ablation, reporting held-out multi-step AUC overall and per step
//! bucket. Usage:
//! `cargo run --release --example oracle_reference [max_epochs] [key=value ...]`,
//! where overrides apply to both runs before the ablation is derived.

use std::time::Instant;

use advkt::corpus::split;
use advkt::eval::{evaluate_with, EvalOptions};
use advkt::generator::Mode;
use advkt::oracle::{simulate, OracleConfig};
use advkt::trainer::{train, TrainConfig};

fn main() -> advkt::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let sim = simulate(&OracleConfig::default())?;
    let (rest, test) = split(&sim.dataset, 0.2, 1)?;
    let (tr, val) = split(&rest, 0.15, 2)?;
    println!("train {} val {} test {}", tr.len(), val.len(), test.len());
    let (mut labels, mut truth) = (Vec::new(), Vec::new());
    for s in &test.sequences {
        labels.extend(s.responses());
        truth.extend(&sim.truth.p_true[(s.student_id - 1) as usize]);
    }
    println!("oracle ceiling auc on test: {:.4}", advkt::eval::auc(&labels, &truth)?);

    let mut base = TrainConfig::default();
    for kv in ["embed_dim=16", "hidden_dim=16", "heads=2", "batch_size=16", "seed=1"] {
        base.apply_override(kv)?;
    }
    base.max_epochs = epochs;
    for kv in std::env::args().skip(2) {
        base.apply_override(&kv)?;
    }
    let mut ablation = base.clone();
    ablation.lambda1 = 0.0;
    ablation.d_update_period = None;

    let only = std::env::var("ONLY").unwrap_or_default();
    for (name, cfg) in [("advkt", &base), ("bce_only", &ablation)] {
        if !only.is_empty() && only != name {
            continue;
        }
        let t0 = Instant::now();
        let run = train(cfg, &tr, &val)?;
        let report = evaluate_with(&run.generator, &test, Mode::MultiStep, &EvalOptions::default())?;
        println!(
            "== {name}: {} epochs, best {} (val auc {:.4}, {:.1}s)",
            run.history.len(),
            run.best_epoch,
            run.best_val_auc,
            t0.elapsed().as_secs_f64()
        );
        for r in &run.history {
            println!("{}", r.csv_row());
        }
        print!("{report}");
    }
    Ok(())
}
