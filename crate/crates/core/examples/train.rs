//! Trains the association network on simulated scenes and scores it on
//! held-out ones.
//!
//! `cargo run --release --example train -- [steps] [out.ckpt]`
//!
//! The desk-scale acceptance runs use 3000 steps; a few hundred already give
//! a usable affinity.

use std::time::Instant;

use stif::net::NetConfig;
use stif::sim::{generate_set, ScenarioConfig};
use stif::train::{association_accuracy, evaluate, fit, TrainConfig};

fn main() -> stif::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse().expect("steps")).unwrap_or(400);
    let out = args.next();

    let tmpl = ScenarioConfig::default();
    let train = generate_set(&tmpl, 64, [6, 10], 1)?;
    let val = generate_set(&tmpl, 16, [6, 10], 2)?;
    let cfg = TrainConfig {
        epochs: 4,
        steps_per_epoch: steps.div_ceil(4),
        learning_rate: 1e-3,
        lr_drop_epochs: vec![3],
        warmup_steps: (steps / 10) as u64,
        use_consistency_loss: false,
        validate: false,
        ..Default::default()
    };
    let t0 = Instant::now();
    let r = fit(&cfg, &NetConfig::default(), &train, &[], None, |l| {
        if l.step % 50 == 0 {
            println!(
                "step {:>5}  lr {:.2e}  tracking {:.4}  total {:.4}",
                l.step, l.lr, l.loss.tracking, l.loss.total
            );
        }
    })?;
    println!("trained in {:.1}s", t0.elapsed().as_secs_f64());

    let net = r.last.to_net()?;
    println!("row-argmax accuracy {:.4}", association_accuracy(&net, &val, 1)?);
    let m = evaluate(&net, &val, &cfg.tracker, &cfg.eval)?;
    println!(
        "MOTA {:.4}  MOTP {:.3} m  IDS {}  AMOTA {:.4}  AMOTP {:.3} m",
        m.clear.mota, m.clear.motp, m.clear.id_switches, m.amota, m.amotp
    );
    if let Some(path) = out {
        stif::io::save_checkpoint(std::path::Path::new(&path), &r.last)?;
        println!("wrote {path}");
    }
    Ok(())
}
