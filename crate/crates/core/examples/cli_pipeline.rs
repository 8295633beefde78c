//! simulate -> train -> track -> eval -> report through the command layer,
//! in a temporary directory, with a deliberately tiny network.

use stif::cli::{self, SimulateConfig, TrainRunConfig};
use stif::net::NetConfig;

fn main() -> stif::Result<()> {
    let dir = std::env::temp_dir().join(format!("stif-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = |name: &str| dir.join(name).display().to_string();

    let sim = SimulateConfig {
        scenes: 6,
        ..Default::default()
    };
    stif::io::write_json(&dir.join("simulate.json"), &sim)?;
    let mut train = TrainRunConfig {
        net: NetConfig {
            d: 32,
            heads: 4,
            ffn_hidden: 64,
            ..Default::default()
        },
        ..Default::default()
    };
    train.train.epochs = 2;
    train.train.steps_per_epoch = 25;
    train.train.learning_rate = 1e-3;
    train.train.warmup_steps = 10;
    stif::io::write_json(&dir.join("train.json"), &train)?;

    let steps: Vec<Vec<String>> = vec![
        vec!["simulate".into(), "--config".into(), path("simulate.json"), "--out".into(), path("scenes")],
        vec!["train".into(), "--config".into(), path("train.json"), "--scenes".into(), path("scenes"), "--out".into(), path("run")],
        vec!["track".into(), "--checkpoint".into(), path("run/best.ckpt"), "--input".into(), path("scenes"), "--out".into(), path("tracks")],
        vec!["eval".into(), "--gt".into(), path("scenes"), "--tracks".into(), path("tracks"), "--out".into(), path("eval")],
        vec!["report".into(), "--tracks".into(), path("tracks"), "--train-dir".into(), path("run"), "--out".into(), path("report")],
    ];
    for args in steps {
        println!("stif {}", args.join(" "));
        cli::run(std::iter::once("stif".to_string()).chain(args.into_iter().chain(["--verbose".to_string()])))?;
    }
    println!("{}", std::fs::read_to_string(dir.join("eval").join(cli::METRICS_CSV))?);
    println!("outputs left in {}", dir.display());
    Ok(())
}
