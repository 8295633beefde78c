//! Generates one synthetic scene and summarizes it.

use stif::sim::{generate, ScenarioConfig};

fn main() -> stif::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = ScenarioConfig {
        n_objects: 8,
        ego_speed: 5.0,
        seed,
        ..Default::default()
    };
    let s = generate(&cfg)?;
    let mut ids = std::collections::BTreeSet::new();
    let (mut dets, mut fps) = (0, 0);
    for (g, d) in s.ground_truth.iter().zip(&s.detections) {
        ids.extend(g.objects.iter().map(|o| o.id));
        dets += d.detections.len();
        fps += d.detections.iter().filter(|x| x.gt_id.is_none()).count();
    }
    println!("{} frames, {} identities, {dets} detections ({fps} false positives)", s.detections.len(), ids.len());
    for o in &s.ground_truth[0].objects {
        println!(
            "  id {:>2} {:?} at ({:.1}, {:.1}) moving {:?} v = {:.2?}",
            o.id, o.category, o.box3d.x, o.box3d.y, o.attribute, o.velocity
        );
    }
    Ok(())
}
