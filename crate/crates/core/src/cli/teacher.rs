use std::path::PathBuf;

use rayon::prelude::*;

use super::{announce, data_root, ensure_dir, relative_path, CliError, CliResult, KvConfig, TrainTeacherArgs};
use super::{EXIT_OTHER, EXIT_TRAINING};
use crate::datamodel::load_dataset;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::trajectory::{train_teacher, write_buffer, ExpertBuffer, TeacherConfig};

pub(crate) fn read_teacher(cfg: &mut KvConfig) -> Result<(TeacherConfig, u64, usize)> {
    let d = TeacherConfig::default();
    let seed = cfg.require("seed")?;
    let t = TeacherConfig {
        epochs: cfg.get_any(&["epoch", "epochs"], d.epochs)?,
        batch_size: cfg.get("batch_size", d.batch_size)?,
        lr_img: cfg.get("lr_teacher_img", d.lr_img)?,
        lr_txt: cfg.get("lr_teacher_txt", d.lr_txt)?,
        momentum: cfg.get("momentum", d.momentum)?,
        weight_decay: cfg.get("weight_decay", d.weight_decay)?,
        tau_c: cfg.get("tau_c", d.tau_c)?,
        hidden: cfg.get("hidden", d.hidden)?,
        embed: cfg.get("embed", d.embed)?,
    };
    let experts = cfg.get("num_experts", 20usize)?;
    if t.epochs == 0 {
        return Err(Error::Config("epoch must be at least 1".into()));
    }
    if t.batch_size < 2 {
        return Err(Error::Config("batch_size must be at least 2".into()));
    }
    if !(t.lr_img >= 0.0 && t.lr_txt >= 0.0 && t.tau_c > 0.0) {
        return Err(Error::Config("teacher learning rates must be nonnegative and tau_c positive".into()));
    }
    Ok((t, seed, experts))
}

pub fn run_train_teacher(args: &TrainTeacherArgs) -> CliResult<()> {
    let fail = CliError::at(EXIT_OTHER);
    let mut cfg = KvConfig::load(&args.config).map_err(&fail)?;
    let (tc, seed, from_cfg) = read_teacher(&mut cfg).map_err(&fail)?;
    cfg.finish().map_err(&fail)?;
    let experts = args.experts.unwrap_or(from_cfg);
    if experts == 0 {
        return Err(fail(Error::Config("need at least one expert".into())));
    }
    let data_path = args.data.clone().unwrap_or_else(|| data_root().join("data.ptms"));
    let out: PathBuf = args.out.clone().unwrap_or_else(|| data_root().join("buffer"));
    announce(
        "train-teacher",
        &cfg,
        &[
            ("data", data_path.display().to_string()),
            ("out", out.display().to_string()),
            ("experts", experts.to_string()),
            ("jobs", args.jobs.to_string()),
        ],
    );

    let real = load_dataset(&data_path).map_err(&fail)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| fail(Error::invalid(e.to_string())))?;
    let runs: Vec<Result<_>> = pool.install(|| {
        (0..experts)
            .into_par_iter()
            .map(|k| train_teacher(&real, &tc, k, derive_seed(seed, "expert", k as u64)))
            .collect()
    });
    let mut trajectories = Vec::with_capacity(experts);
    for (k, r) in runs.into_iter().enumerate() {
        let t = r.map_err(|e| CliError::at(EXIT_TRAINING)(e).with_context(format!("expert {k}")))?;
        eprintln!("expert {k}: done");
        trajectories.push(t);
    }
    let model = tc.model_for(&real).map_err(&fail)?;
    let buffer = ExpertBuffer::new(model, trajectories).map_err(&fail)?;
    ensure_dir(&out).map_err(&fail)?;
    let data_ref = relative_path(&out, &data_path).map_err(&fail)?;
    write_buffer(&out, &buffer, &tc, Some(data_ref)).map_err(&fail)?;
    eprintln!("wrote {} experts to {}", experts, out.display());

    if args.verify {
        let (loaded, manifest) = ExpertBuffer::load(&out).map_err(&fail)?;
        if manifest.experts.len() != experts {
            return Err(fail(Error::invalid("manifest expert count mismatch")));
        }
        for (a, b) in loaded.trajectories.iter().zip(&buffer.trajectories) {
            if !a.bitwise_eq(b) {
                return Err(fail(Error::invalid(format!("expert {} does not round-trip", a.expert_id))));
            }
            let frozen = a.checkpoints.iter().all(|c| c.params.bitwise_eq(&a.checkpoints[0].params));
            if tc.lr_img == 0.0 && tc.lr_txt == 0.0 && !frozen {
                return Err(fail(Error::invalid(format!(
                    "expert {} moved with zero learning rates",
                    a.expert_id
                ))));
            }
            eprintln!(
                "verify expert {}: round-trip ok, checkpoints {}",
                a.expert_id,
                if frozen { "all equal" } else { "moving" }
            );
        }
    }
    Ok(())
}
