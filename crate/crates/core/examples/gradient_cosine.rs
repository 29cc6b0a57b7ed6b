//! Pairwise cosine similarity of synthetic-data gradients taken at several
//! start epochs, on the recorded trajectory and on its shortcut.

use ptmst::analysis::{grad_cosine_matrix, mean_off_diagonal, GradientProbe};
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
    let starts = [0.0, 1.0, 2.0, 3.0, 4.0];
    let sources: [(&str, &dyn TrajectorySource); 2] = [("original", &traj), ("shortcut", &sc)];
    for (name, src) in sources {
        let m = grad_cosine_matrix(&model, src, &syn, &starts, 1.0, &inner, GradientProbe::Images)?;
        println!("{name}: mean off-diagonal cosine {:.3}", mean_off_diagonal(&m));
        for i in 0..starts.len() {
            let row: Vec<String> = (0..starts.len()).map(|j| format!("{:>6.3}", m.get(i, j))).collect();
            println!("  {}", row.join(" "));
        }
    }
    Ok(())
}
