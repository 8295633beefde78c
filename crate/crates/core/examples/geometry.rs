//! Box corners, pinhole projection and frame changes.

use stif::geometry::{bev_center_distance, corners3d, to_world, Box2D, Box3D, CameraModel, EgoPose};

fn main() -> stif::Result<()> {
    // Ego frame: x right, y down, z forward (camera convention).
    let car = Box3D::new(2.0, 0.8, 15.0, 4.5, 1.9, 1.6, 0.3)?;
    let cam = CameraModel::default();

    let corners = corners3d(&car)?;
    let pixels: Vec<[f64; 2]> = corners.iter().map(|&c| cam.project(c)).collect::<stif::Result<_>>()?;
    for (c, p) in corners.iter().zip(&pixels) {
        println!("corner {:>7.3} {:>7.3} {:>7.3}  ->  pixel {:>7.1} {:>7.1}", c[0], c[1], c[2], p[0], p[1]);
    }
    let hull = Box2D::hull(&pixels)?;
    println!("2D box: centre ({:.1}, {:.1}), {:.1} x {:.1} px", hull.cx, hull.cy, hull.w, hull.h);

    // The same box seen from an ego vehicle that has turned and moved.
    let pose = EgoPose::from_heading(0.2, [5.0, 0.0, 3.0]);
    let world = to_world(&pose, &car)?;
    println!("world box: {:?}", world.to_array());
    println!("BEV distance moved: {:.3} m", bev_center_distance(&car, &world));
    Ok(())
}
