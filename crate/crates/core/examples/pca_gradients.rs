//! Projects gradients taken along the recorded trajectory onto their two
//! leading principal components and prints their norms.

use ptmst::analysis::{pca_gradients, GradientProbe};
use ptmst::datamodel::{init_synthetic, GeneratorConfig, PairGenerator, PhaseConfig, Split};
use ptmst::distill::InnerSpec;
use ptmst::model::BatchLossSpec;
use ptmst::trajectory::{train_teacher, TeacherConfig};

fn main() -> ptmst::Result<()> {
    let real = PairGenerator::new(GeneratorConfig::default())?.sample(2000, Split::Train)?;
    let tc = TeacherConfig::default();
    let model = tc.model_for(&real)?;
    let traj = train_teacher(&real, &tc, 0, 5)?;
    let syn = init_synthetic(&real, &PhaseConfig::default(), 5)?;
    let inner = InnerSpec {
        steps: 4,
        mini_batch: 10,
        loss: BatchLossSpec::default(),
        seed: 5,
    };
    let starts: Vec<f64> = (0..9).map(f64::from).collect();
    let p = pca_gradients(&model, &traj, &syn, &starts, 1.0, &inner, GradientProbe::All, 2)?;
    let total: f64 = p.eigenvalues.iter().sum();
    println!("leading variances {:?} (sum {total:.3e})", p.eigenvalues);
    for (i, s) in starts.iter().enumerate() {
        let c: Vec<String> = p.coords[i].iter().map(|v| format!("{v:>10.4e}")).collect();
        println!("T = {s}: [{}]  norm {:.4e}", c.join(" "), p.norms[i]);
    }
    Ok(())
}
