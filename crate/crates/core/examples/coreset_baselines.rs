//! Selects 20-pair coresets by random sampling, herding and k-center and
//! evaluates a student trained on each.

use ptmst::datamodel::{GeneratorConfig, PairGenerator, Split};
use ptmst::eval::{
    coreset_herding, coreset_kcenter, coreset_random, coreset_subset, train_student_progressive, EvalConfig,
};
use ptmst::trajectory::{train_teacher, TeacherConfig};

fn main() -> ptmst::Result<()> {
    let gen = PairGenerator::new(GeneratorConfig {
        classes: 50,
        ..GeneratorConfig::default()
    })?;
    let real = gen.sample(2000, Split::Train)?;
    let test = gen.sample(500, Split::Test)?;
    let tc = TeacherConfig::default();
    let model = tc.model_for(&real)?;
    let t = train_teacher(&real, &tc, 0, 3)?;
    let teacher = t.params(t.epochs());
    let cfg = EvalConfig::default();
    let classes = real.classes.clone().unwrap_or_default();
    let picks = [
        ("random", coreset_random(&real, 20, 1)?),
        ("herding", coreset_herding(&real, 20, &model, teacher)?),
        ("k-center", coreset_kcenter(&real, 20, &model, teacher, 1)?),
    ];
    for (name, idx) in picks {
        let mut covered: Vec<u32> = idx.iter().map(|&i| classes[i]).collect();
        covered.sort_unstable();
        covered.dedup();
        let sub = coreset_subset(&real, &idx, cfg.lr_img)?;
        let r = train_student_progressive(&model, &[sub], &cfg, &test, 4)?;
        println!("{name:<9} classes covered {:>2}  mean R@K {:.2}", covered.len(), r.mean());
    }
    Ok(())
}
