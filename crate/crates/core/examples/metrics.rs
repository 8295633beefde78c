//! CLEAR-MOT and AMOTA on a hand-made two-object sequence with one swap.

use stif::geometry::{Box2D, Box3D};
use stif::metrics::{evaluate_tracks, EvalConfig};
use stif::scene::{Attribute, Category, GroundTruthFrame, GroundTruthObject, TrackFrame, TrackedObject};

fn main() -> stif::Result<()> {
    let b2 = Box2D::new(800.0, 450.0, 40.0, 30.0)?;
    let mut gt = Vec::new();
    let mut tracks = Vec::new();
    for f in 0..10 {
        let x = f as f64;
        let objs = [(1, x, 0.0), (2, x, 10.0)];
        gt.push(GroundTruthFrame {
            frame_index: f,
            timestamp: x * 0.5,
            objects: objs
                .iter()
                .map(|&(id, x, y)| -> stif::Result<_> {
                    Ok(GroundTruthObject {
                        id,
                        box3d: Box3D::new(x, y, 0.8, 4.0, 1.8, 1.5, 0.0)?,
                        box2d: b2,
                        velocity: [2.0, 0.0, 0.0],
                        attribute: Attribute::Moving,
                        category: Category::Car,
                    })
                })
                .collect::<stif::Result<_>>()?,
        });
        // Track ids swap at frame 6; frame 3 misses object 2.
        let (a, b) = if f < 6 { (7, 8) } else { (8, 7) };
        let mut objects = vec![(a, x + 0.3, 0.0, 0.9)];
        if f != 3 {
            objects.push((b, x, 10.4, 0.6));
        }
        tracks.push(TrackFrame {
            frame_index: f,
            timestamp: x * 0.5,
            objects: objects
                .iter()
                .map(|&(id, x, y, confidence)| -> stif::Result<_> {
                    Ok(TrackedObject {
                        track_id: id,
                        box3d: Box3D::new(x, y, 0.8, 4.0, 1.8, 1.5, 0.0)?,
                        box2d: b2,
                        category: Category::Car,
                        confidence,
                        velocity: [0.0; 3],
                        attribute: Attribute::Moving,
                    })
                })
                .collect::<stif::Result<_>>()?,
        });
    }
    let r = evaluate_tracks(&[(&gt, &tracks)], &EvalConfig::default())?;
    let c = r.clear;
    println!("GT {}  matches {}  misses {}  FP {}  IDS {}", c.num_gt, c.matches, c.misses, c.false_positives, c.id_switches);
    println!("MOTA {:.3}  MOTP {:.3} m  AMOTA {:.3}  AMOTP {:.3} m", c.mota, c.motp, r.amota, r.amotp);
    Ok(())
}
