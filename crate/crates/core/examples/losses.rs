//! Loss terms of a few frame pairs for an untrained network.

use stif::net::{AssocNet, NetConfig};
use stif::sim::{generate, ScenarioConfig};
use stif::train::{pair_gradients, PairSample};

fn main() -> stif::Result<()> {
    let net = AssocNet::new(NetConfig::default())?;
    let s = generate(&ScenarioConfig::default())?;
    println!("{:>3} {:>4} {:>9} {:>11} {:>9} {:>9} {:>9} {:>9}", "t", "gap", "tracking", "consistency", "velocity", "attribute", "box", "total");
    for (t, zeta) in [(5, 1), (12, 3), (30, 5)] {
        let Some((_, l)) = pair_gradients(&net, &s, PairSample { scene: 0, t, zeta }, true)? else {
            println!("{t:>3} {zeta:>4}  (empty frame)");
            continue;
        };
        println!(
            "{t:>3} {zeta:>4} {:>9.4} {:>11.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            l.tracking, l.consistency, l.velocity, l.attribute, l.box_refine, l.total
        );
    }
    Ok(())
}
