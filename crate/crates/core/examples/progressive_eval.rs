//! Trains a student progressively on two distilled subsets and compares it
//! with training on each subset alone and on the undistilled initial pairs.

use ptmst::datamodel::{DistillPlan, GeneratorConfig, PairGenerator, PhaseConfig, Split};
use ptmst::distill::{distill_all, initial_subsets};
use ptmst::eval::{train_student_progressive, EvalConfig};
use ptmst::trajectory::{train_teacher, ExpertBuffer, TeacherConfig};

fn main() -> ptmst::Result<()> {
    let gen = PairGenerator::new(GeneratorConfig {
        classes: 50,
        ..GeneratorConfig::default()
    })?;
    let real = gen.sample(2000, Split::Train)?;
    let test = gen.sample(500, Split::Test)?;
    let tc = TeacherConfig {
        lr_img: 0.01,
        lr_txt: 0.01,
        ..TeacherConfig::default()
    };
    let trajs = (0..4).map(|k| train_teacher(&real, &tc, k, k as u64)).collect::<Result<Vec<_>, _>>()?;
    let buffer = ExpertBuffer::new(tc.model_for(&real)?, trajs)?;
    let base = PhaseConfig {
        num_queries: 10,
        iteration: 1000,
        syn_steps: 4,
        mini_batch_size: 10,
        lr_img: 10.0,
        lr_txt: 10.0,
        lr_sim: 10.0,
        ..PhaseConfig::default()
    };
    let plan = DistillPlan::new(
        vec![
            base.clone(),
            PhaseConfig {
                min_start_epoch: 1,
                max_start_epoch: 3,
                interpolation_endpoint: 8,
                ..base
            },
        ],
        2,
    );
    let subsets: Vec<_> = distill_all(&plan, &buffer, &real, &mut |_| {})?
        .into_iter()
        .map(|r| r.dataset)
        .collect();
    let init = initial_subsets(&plan, &real)?;
    let cfg = EvalConfig {
        use_learned_lr: true,
        ..EvalConfig::default()
    };
    let model = &buffer.model;
    let runs = [
        ("initial pairs, progressive", &init[..]),
        ("phase 1 only", &subsets[..1]),
        ("phase 2 only", &subsets[1..]),
        ("phase 1 then 2", &subsets[..]),
    ];
    for (name, subs) in runs {
        let r = train_student_progressive(model, subs, &cfg, &test, 9)?;
        println!("{name:<28} IR@1 {:>5.1}  TR@1 {:>5.1}  mean {:.2}", r.ir_at(1).unwrap_or(0.0), r.tr_at(1).unwrap_or(0.0), r.mean());
    }
    Ok(())
}
