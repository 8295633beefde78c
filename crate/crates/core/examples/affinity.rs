//! Association probabilities between two frames from a (randomly
//! initialized or loaded) network, next to the ground-truth table.

use stif::net::{AssocNet, FrameInput, NetConfig};
use stif::sim::{generate, gt_association, ScenarioConfig};

fn main() -> stif::Result<()> {
    let net = match std::env::args().nth(1) {
        Some(path) => stif::io::load_checkpoint(path.as_ref())?.to_net()?,
        None => AssocNet::new(NetConfig::default())?,
    };
    let s = generate(&ScenarioConfig {
        n_objects: 5,
        seed: 4,
        ..Default::default()
    })?;
    let (prev, cur) = (&s.detections[9], &s.detections[10]);
    let cfg = net.config();
    let fp = net.encode_frame(&FrameInput::from_detections(&prev.detections, prev.detections.len(), prev.timestamp, cfg)?)?;
    let fc = net.encode_frame(&FrameInput::from_detections(&cur.detections, cur.detections.len(), cur.timestamp, cfg)?)?;
    let out = net.associate(&fc.spatial, &fc.valid_mask, &fp.spatial, &fp.valid_mask, cur.timestamp - prev.timestamp)?;
    let gt = gt_association(&cur.detections, &prev.detections, cur.detections.len(), prev.detections.len())?;

    println!("rows: current detections + un-identified; columns: previous + un-identified");
    let p = &out.association;
    for i in 0..p.rows() {
        let probs: Vec<String> = p.row(i).iter().map(|v| format!("{v:.2}")).collect();
        let truth: Vec<String> = gt.matrix.row(i).iter().map(|v| format!("{v:.0}")).collect();
        println!("{}   | {}", probs.join(" "), truth.join(" "));
    }
    Ok(())
}
