//! Builds shortcut trajectories at several endpoints and prints the layer
//! weights and how far each interpolated checkpoint sits from the recorded one.

use ptmst::datamodel::{GeneratorConfig, PairGenerator, Split};
use ptmst::trajectory::{build_shortcut, query_shortcut, train_teacher, TeacherConfig};

fn main() -> ptmst::Result<()> {
    let real = PairGenerator::new(GeneratorConfig::default())?.sample(2000, Split::Train)?;
    let traj = train_teacher(&real, &TeacherConfig::default(), 0, 1)?;
    for tp in [6, 8, 10] {
        let sc = build_shortcut(&traj, tp, 0)?;
        println!("endpoint {tp}");
        for (l, row) in sc.beta.rows.iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|b| format!("{b:.3}")).collect();
            println!("  beta[{}] = [{}]", sc.beta.layer_names[l], vals.join(" "));
        }
        let gaps: Vec<String> = (0..=tp)
            .map(|t| format!("{:.3}", sc.checkpoints()[t].distance_sq(traj.params(t)).sqrt()))
            .collect();
        println!("  |shortcut - recorded| per epoch [{}]", gaps.join(" "));
        let mid = query_shortcut(&sc, tp as f64 / 2.0 + 0.25)?;
        println!("  fractional query norm {:.4}", mid.norm());
    }
    Ok(())
}
