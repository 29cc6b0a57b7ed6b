//! Gradient difference between start epochs T and T + dt for shrinking dt,
//! with the fitted log-log slope.

use ptmst::analysis::{proposition_sweep, GradientProbe};
use ptmst::datamodel::{init_synthetic, GeneratorConfig, PairGenerator, PhaseConfig, Split};
use ptmst::distill::InnerSpec;
use ptmst::model::BatchLossSpec;
use ptmst::trajectory::{build_shortcut, train_teacher, TeacherConfig, TrajectorySource};

fn main() -> ptmst::Result<()> {
    let real = PairGenerator::new(GeneratorConfig {
        classes: 50,
        ..GeneratorConfig::default()
    })?
    .sample(2000, Split::Train)?;
    let tc = TeacherConfig {
        lr_img: 0.01,
        lr_txt: 0.01,
        ..TeacherConfig::default()
    };
    let model = tc.model_for(&real)?;
    let traj = train_teacher(&real, &tc, 0, 0)?;
    let sc = build_shortcut(&traj, 6, 0)?;
    let syn = init_synthetic(&real, &PhaseConfig::default(), 0)?;
    let inner = InnerSpec {
        steps: 4,
        mini_batch: 10,
        loss: BatchLossSpec::default(),
        seed: 0,
    };
    let dts = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0];
    let sources: [(&str, &dyn TrajectorySource); 2] = [("shortcut", &sc), ("original", &traj)];
    for (name, src) in sources {
        let r = proposition_sweep(&model, src, &syn, 1.0, &dts, 1.0, &inner, GradientProbe::Images)?;
        println!("{name}: slope {:.3}", r.slope.unwrap_or(f64::NAN));
        for (dt, v) in &r.rows {
            println!("  dt {dt:<8} |g(T+dt) - g(T)| {v:.4e}");
        }
    }
    Ok(())
}
