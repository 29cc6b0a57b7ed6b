//! Records two expert trajectories and prints per-epoch step lengths and
//! teacher retrieval quality.

use ptmst::datamodel::{GeneratorConfig, PairGenerator, Split};
use ptmst::eval::evaluate_student;
use ptmst::trajectory::{train_teacher, TeacherConfig};

fn main() -> ptmst::Result<()> {
    let gen = PairGenerator::new(GeneratorConfig::default())?;
    let real = gen.sample(2000, Split::Train)?;
    let test = gen.sample(500, Split::Test)?;
    let cfg = TeacherConfig::default();
    let model = cfg.model_for(&real)?;
    for k in 0..2 {
        let t = train_teacher(&real, &cfg, k, 100 + k as u64)?;
        let steps: Vec<String> = (0..t.epochs())
            .map(|e| format!("{:.3}", t.params(e).distance_sq(t.params(e + 1)).sqrt()))
            .collect();
        println!("expert {k}: step lengths [{}]", steps.join(" "));
        for e in [0, t.epochs() / 2, t.epochs()] {
            let r = evaluate_student(&model, t.params(e), &test, &[1, 5, 10])?;
            println!("  epoch {e:>2}: mean R@K {:.2}", r.mean());
        }
    }
    Ok(())
}
