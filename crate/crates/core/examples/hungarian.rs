//! Minimum-cost assignment on a rectangular cost matrix.

use stif::tracker::hungarian;

fn main() -> stif::Result<()> {
    let cost = vec![
        vec![4.0, 1.0, 3.0, 9.0],
        vec![2.0, 0.0, 5.0, 8.0],
        vec![3.0, 2.0, 2.0, 7.0],
    ];
    let a = hungarian(&cost)?;
    for (r, c) in &a.pairs {
        println!("row {r} -> column {c} (cost {})", cost[*r][*c]);
    }
    println!("total {}", a.cost);
    Ok(())
}
