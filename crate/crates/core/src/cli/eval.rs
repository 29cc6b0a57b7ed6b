use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use super::distill::PlanManifest;
use super::{announce, data_root, test_path_for, write_text, CliError, CliResult, EvalArgs, KvConfig, EXIT_EVAL};
use crate::datamodel::{load_dataset, load_synthetic, PairDataset, SyntheticDataset};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_reports, coreset_herding, coreset_kcenter, coreset_random, coreset_subset, train_student_progressive,
    CoresetMethod, EvalConfig,
};
use crate::model::{BatchLossSpec, LossKind, RetrievalReport, TwoTowerModel};
use crate::rng::derive_seed;
use crate::trajectory::{ExpertBuffer, TeacherConfig};

/// Student seed of evaluation run `s` under master seed `master`.
pub fn eval_seed(master: u64, s: usize) -> u64 {
    derive_seed(master, "eval", s as u64)
}

pub(crate) fn read_eval(cfg: &mut KvConfig) -> Result<(EvalConfig, u64)> {
    let d = EvalConfig::default();
    let seed = cfg.require("seed")?;
    let dl = BatchLossSpec::default();
    let e = EvalConfig {
        epochs: cfg.get_any(&["epoch", "epochs"], d.epochs)?,
        batch_size: cfg.get("batch_size", d.batch_size)?,
        lr_img: cfg.get("lr_img", d.lr_img)?,
        lr_txt: cfg.get("lr_txt", d.lr_txt)?,
        momentum: cfg.get("momentum", d.momentum)?,
        weight_decay: cfg.get("weight_decay", d.weight_decay)?,
        ks: cfg.list("ks", &d.ks)?,
        use_learned_lr: cfg.get_bool("use_learned_lr", d.use_learned_lr)?,
        loss: BatchLossSpec {
            kind: cfg.get::<LossKind>("loss_type", dl.kind)?,
            tau: cfg.get("tau", dl.tau)?,
            beta_thr: cfg.get("beta_thr", dl.beta_thr)?,
            tau_c: cfg.get("tau_c", dl.tau_c)?,
        },
    };
    e.validate()?;
    Ok((e, seed))
}

enum Source {
    Subsets(Vec<SyntheticDataset>),
    Coreset {
        method: CoresetMethod,
        real: PairDataset,
        teacher: Option<crate::datamodel::ParamVector>,
    },
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn run_one(
    model: &TwoTowerModel,
    source: &Source,
    size: usize,
    cfg: &EvalConfig,
    test: &PairDataset,
    master: u64,
    s: usize,
) -> Result<RetrievalReport> {
    let seed = eval_seed(master, s);
    match source {
        Source::Subsets(subs) => train_student_progressive(model, subs, cfg, test, seed),
        Source::Coreset { method, real, teacher } => {
            let pick = derive_seed(master, "eval.coreset", s as u64);
            let idx = match (method, teacher) {
                (CoresetMethod::Random, _) => coreset_random(real, size, pick)?,
                (CoresetMethod::Herding, Some(t)) => coreset_herding(real, size, model, t)?,
                (CoresetMethod::KCenter, Some(t)) => coreset_kcenter(real, size, model, t, pick)?,
                _ => return Err(Error::Config("herding and kcenter need --buffer".into())),
            };
            let sub = coreset_subset(real, &idx, cfg.lr_img)?;
            train_student_progressive(model, &[sub], cfg, test, seed)
        }
    }
}

pub fn run_eval(args: &EvalArgs) -> CliResult<()> {
    let fail = CliError::at(EXIT_EVAL);
    let mut kv = KvConfig::load(&args.config).map_err(&fail)?;
    let (cfg, master) = read_eval(&mut kv).map_err(&fail)?;
    kv.finish().map_err(&fail)?;
    if args.seeds == 0 {
        return Err(fail(Error::Config("--seeds must be at least 1".into())));
    }
    let method = args
        .coreset
        .as_deref()
        .map(str::parse::<CoresetMethod>)
        .transpose()
        .map_err(&fail)?;
    let out = args.out.clone().unwrap_or_else(|| data_root().join("eval"));
    let buffer = args.buffer.as_ref().map(ExpertBuffer::load).transpose().map_err(&fail)?;

    let (model, source, test_path, label) = if let Some(mpath) = &args.subsets {
        let m = PlanManifest::load(mpath).map_err(&fail)?;
        let dir = manifest_dir(mpath);
        let subs = m
            .phases
            .iter()
            .map(|p| load_synthetic(dir.join(&p.file)))
            .collect::<Result<Vec<_>>>()
            .map_err(&fail)?;
        let test = match (&args.test, &args.data) {
            (Some(t), _) => t.clone(),
            (None, Some(d)) => test_path_for(d),
            (None, None) => test_path_for(&dir.join(&m.data)),
        };
        (m.model, Source::Subsets(subs), test, "subsets".to_string())
    } else {
        let method = method.ok_or_else(|| fail(Error::Config("pass --subsets or --coreset".into())))?;
        let data = args.data.clone().unwrap_or_else(|| data_root().join("data.ptms"));
        let real = load_dataset(&data).map_err(&fail)?;
        let test = args.test.clone().unwrap_or_else(|| test_path_for(&data));
        let (model, teacher) = match &buffer {
            Some((b, _)) => {
                let t = &b.trajectories[0];
                (b.model, Some(t.params(t.epochs()).clone()))
            }
            None => (TeacherConfig::default().model_for(&real).map_err(&fail)?, None),
        };
        let label = format!("coreset:{}", args.coreset.as_deref().unwrap_or_default());
        (model, Source::Coreset { method, real, teacher }, test, label)
    };
    announce(
        "eval",
        &kv,
        &[
            ("source", label.clone()),
            ("size", args.size.to_string()),
            ("test", test_path.display().to_string()),
            ("seeds", args.seeds.to_string()),
            ("out", out.display().to_string()),
        ],
    );
    let test = load_dataset(&test_path).map_err(&fail)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| fail(Error::invalid(e.to_string())))?;
    let reports: Vec<RetrievalReport> = pool
        .install(|| {
            (0..args.seeds)
                .into_par_iter()
                .map(|s| run_one(&model, &source, args.size, &cfg, &test, master, s))
                .collect::<Result<Vec<_>>>()
        })
        .map_err(&fail)?;

    let mut jsonl = String::new();
    for (s, r) in reports.iter().enumerate() {
        let row = json!({
            "run": s,
            "seed": eval_seed(master, s),
            "source": label,
            "recall": r,
            "mean": r.mean(),
        });
        jsonl.push_str(&serde_json::to_string(&row).map_err(|e| fail(e.into()))?);
        jsonl.push('\n');
        eprintln!("run {s}: mean recall {:.2}", r.mean());
    }
    let mut csv = String::from("metric,mean,std\n");
    for (name, mean, std) in aggregate_reports(&reports) {
        let _ = writeln!(csv, "{name},{mean},{std}");
    }
    write_text(&out.join("eval_report.jsonl"), &jsonl).map_err(&fail)?;
    write_text(&out.join("eval_aggregate.csv"), &csv).map_err(&fail)?;
    Ok(())
}
