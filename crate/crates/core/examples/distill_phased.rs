//! Distils two phased subsets of ten pairs each against shortcut
//! trajectories and writes them with `save_synthetic`.
//!
//! `cargo run --release --example distill_phased -- [out_dir]`

use ptmst::datamodel::{save_synthetic, DistillPlan, GeneratorConfig, PairGenerator, PhaseConfig, Split};
use ptmst::distill::distill_all;
use ptmst::trajectory::{train_teacher, ExpertBuffer, TeacherConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
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
    let trajs = (0..4).map(|k| train_teacher(&real, &tc, k, k as u64)).collect::<Result<Vec<_>, _>>()?;
    let buffer = ExpertBuffer::new(tc.model_for(&real)?, trajs)?;

    let base = PhaseConfig {
        num_queries: 10,
        iteration: 300,
        syn_steps: 4,
        mini_batch_size: 10,
        lr_img: 10.0,
        lr_txt: 10.0,
        lr_sim: 10.0,
        ..PhaseConfig::default()
    };
    let phases = vec![
        PhaseConfig {
            min_start_epoch: 0,
            max_start_epoch: 2,
            interpolation_endpoint: 6,
            ..base.clone()
        },
        PhaseConfig {
            min_start_epoch: 1,
            max_start_epoch: 3,
            interpolation_endpoint: 8,
            ..base
        },
    ];
    let plan = DistillPlan::new(phases, 0);
    let results = distill_all(&plan, &buffer, &real, &mut |r| {
        if r.iteration % 100 == 0 {
            println!("phase {} iteration {:>3}: loss {:.4}", r.phase + 1, r.iteration, r.loss);
        }
    })?;
    let out = std::env::args().nth(1);
    for (p, r) in results.iter().enumerate() {
        let first = r.losses[..20].iter().sum::<f64>() / 20.0;
        let last = r.losses[r.losses.len() - 20..].iter().sum::<f64>() / 20.0;
        println!(
            "phase {}: mean loss {first:.4} -> {last:.4}, learned step sizes {:.4} / {:.4}",
            p + 1,
            r.dataset.lr_img,
            r.dataset.lr_txt
        );
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            save_synthetic(format!("{dir}/phase_{}.ptms", p + 1), &r.dataset)?;
        }
    }
    Ok(())
}
