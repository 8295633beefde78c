//! The two learning-free baselines and the learned tracker on the same
//! scenes. Pass a checkpoint path to use trained weights.

use stif::metrics::{evaluate_tracks, EvalConfig};
use stif::net::{AssocNet, NetConfig};
use stif::sim::{generate_set, ScenarioConfig};
use stif::tracker::{track_sequence, AppearanceTracker, GreedyBevTracker, TrackerConfig};

fn main() -> stif::Result<()> {
    let net = match std::env::args().nth(1) {
        Some(path) => stif::io::load_checkpoint(path.as_ref())?.to_net()?,
        None => AssocNet::new(NetConfig::default())?,
    };
    let scenes = generate_set(&ScenarioConfig::default(), 4, [6, 10], 2)?;
    let tcfg = TrackerConfig::default();
    let ecfg = EvalConfig::default();

    let mut greedy = Vec::new();
    let mut appearance = Vec::new();
    let mut learned = Vec::new();
    for s in &scenes {
        let mut g = GreedyBevTracker::new(2.0, tcfg.max_missed, tcfg.min_confidence);
        greedy.push(s.detections.iter().map(|f| g.step(f)).collect::<Vec<_>>());
        let mut a = AppearanceTracker::new(0.5, tcfg.max_missed, tcfg.min_confidence);
        appearance.push(s.detections.iter().map(|f| a.step(f)).collect::<stif::Result<Vec<_>>>()?);
        learned.push(track_sequence(&net, &tcfg, &s.detections)?);
    }
    for (name, tracks) in [("greedy BEV", &greedy), ("appearance", &appearance), ("learned", &learned)] {
        let seqs: Vec<_> = scenes.iter().zip(tracks).map(|(s, t)| (s.ground_truth.as_slice(), t.as_slice())).collect();
        let r = evaluate_tracks(&seqs, &ecfg)?;
        println!(
            "{name:>11}: MOTA {:.3}  AMOTA {:.3}  IDS {:>4}  FP {:>4}  FN {:>4}",
            r.clear.mota, r.amota, r.clear.id_switches, r.clear.false_positives, r.clear.misses
        );
    }
    Ok(())
}
