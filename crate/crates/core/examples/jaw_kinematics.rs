//! Sweeps the lower incisor and prints the resulting jaw angle and lower-lip
//! base, which stays on a circle around the pivot.

use artistream::ema::Channel;
use artistream::kinematics::{lower_lip_base, pose_from_frame, RigConfig};

fn main() {
    let rig = RigConfig::placeholder();
    println!("pivot {:?}, r = {:.3} mm", rig.pivot(), rig.r());
    let rest = rig.rest_frame(0);
    for dy in [-10.0, -5.0, 0.0, 5.0, 10.0, 30.0] {
        let mut f = rest;
        let li = rest.point(Channel::LowerIncisor);
        f.set_point(Channel::LowerIncisor, [li[0], li[1] + dy]);
        let pose = pose_from_frame(&f, &rig);
        let base = lower_lip_base(&rig, pose.theta);
        let d = ((base[0] - rig.pivot()[0]).powi(2) + (base[1] - rig.pivot()[1]).powi(2)).sqrt();
        println!(
            "LIy {:+5.1} mm -> theta {:+.3} rad, LL base ({:6.2}, {:6.2}), |base - pivot| {:.6}",
            dy, pose.theta, base[0], base[1], d
        );
    }
}
