use std::fmt::Write as _;
use std::path::PathBuf;

use super::{announce, data_root, write_text, AnalyzeArgs, CliError, CliResult, KvConfig, EXIT_OTHER};
use crate::analysis::{grad_cosine_matrix, mean_off_diagonal, pca_gradients, proposition_sweep, GradientProbe};
use crate::datamodel::{init_synthetic, load_dataset, load_synthetic, PhaseConfig, SyntheticDataset};
use crate::distill::InnerSpec;
use crate::error::{Error, Result};
use crate::model::{BatchLossSpec, LossKind};
use crate::rng::derive_seed;
use crate::trajectory::{build_shortcut, ExpertBuffer, TrajectorySource};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Cosine,
    Sweep,
    Pca,
}

struct Settings {
    seed: u64,
    expert: usize,
    shortcut: bool,
    endpoint: usize,
    starts: Vec<f64>,
    segment: f64,
    base: f64,
    dts: Vec<f64>,
    components: usize,
    probe: GradientProbe,
    phase: PhaseConfig,
    loss: BatchLossSpec,
}

fn read_settings(cfg: &mut KvConfig) -> Result<Settings> {
    let d = PhaseConfig::default();
    let dl = BatchLossSpec::default();
    let seed = cfg.require("seed")?;
    let teacher = cfg.get("teacher", "shortcut".to_string())?;
    let shortcut = match teacher.as_str() {
        "shortcut" => true,
        "original" => false,
        _ => return Err(Error::Config(format!("key `teacher`: unknown value `{teacher}`"))),
    };
    let phase = PhaseConfig {
        num_queries: cfg.get("num_queries", d.num_queries)?,
        syn_steps: cfg.get("syn_steps", d.syn_steps)?,
        mini_batch_size: cfg.get("mini_batch_size", d.mini_batch_size)?,
        lr_teacher_img: cfg.get("lr_teacher_img", d.lr_teacher_img)?,
        lr_teacher_txt: cfg.get("lr_teacher_txt", d.lr_teacher_txt)?,
        ..d.clone()
    };
    let kind: LossKind = cfg.get("loss_type", dl.kind)?;
    let s = Settings {
        seed,
        expert: cfg.get("expert", 0usize)?,
        shortcut,
        endpoint: cfg.get_any(&["interpolation_endpoints", "interpolation_endpoint"], d.interpolation_endpoint)?,
        starts: cfg.list("starts", &[0.0, 1.0, 2.0, 3.0, 4.0])?,
        segment: cfg.get::<usize>("expert_epochs", d.expert_epochs)? as f64,
        base: cfg.get("base_start", 1.0)?,
        dts: cfg.list("dts", &[0.0625, 0.125, 0.25, 0.5])?,
        components: cfg.get("components", 2usize)?,
        probe: cfg.get::<String>("probe", "images".into())?.parse()?,
        phase,
        loss: BatchLossSpec {
            kind,
            tau: cfg.get("tau", dl.tau)?,
            beta_thr: cfg.get("beta_thr", dl.beta_thr)?,
            tau_c: cfg.get("tau_c", dl.tau_c)?,
        },
    };
    if s.segment <= 0.0 || s.phase.syn_steps == 0 || s.phase.mini_batch_size == 0 {
        return Err(Error::Config("expert_epochs, syn_steps and mini_batch_size must be positive".into()));
    }
    s.loss.validate()?;
    Ok(s)
}

fn fmt_row(vals: impl IntoIterator<Item = f64>) -> String {
    vals.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub fn run_analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let fail = CliError::at(EXIT_OTHER);
    let mode = match args.mode.as_str() {
        "cosine" => Mode::Cosine,
        "sweep" => Mode::Sweep,
        "pca" => Mode::Pca,
        m => return Err(fail(Error::Config(format!("unknown mode `{m}`")))),
    };
    let mut kv = KvConfig::load(&args.config).map_err(&fail)?;
    let st = read_settings(&mut kv).map_err(&fail)?;
    kv.finish().map_err(&fail)?;
    let buffer_dir = args.buffer.clone().unwrap_or_else(|| data_root().join("buffer"));
    let out: PathBuf = args.out.clone().unwrap_or_else(|| data_root().join("analysis"));
    announce(
        "analyze",
        &kv,
        &[
            ("mode", args.mode.clone()),
            ("buffer", buffer_dir.display().to_string()),
            ("out", out.display().to_string()),
        ],
    );

    let (buf, manifest) = ExpertBuffer::load(&buffer_dir).map_err(&fail)?;
    let traj = buf
        .trajectories
        .get(st.expert)
        .ok_or_else(|| fail(Error::Config(format!("expert {} not in buffer", st.expert))))?;
    if st.endpoint == 0 || st.endpoint > buf.epochs() {
        return Err(fail(Error::Config(format!(
            "interpolation_endpoint {} outside 1..={}",
            st.endpoint,
            buf.epochs()
        ))));
    }
    let syn: SyntheticDataset = match &args.subset {
        Some(p) => load_synthetic(p).map_err(&fail)?,
        None => {
            let data = match (&args.data, &manifest.data) {
                (Some(d), _) => d.clone(),
                (None, Some(d)) => buffer_dir.join(d),
                (None, None) => return Err(fail(Error::Config("pass --data or --subset".into()))),
            };
            let real = load_dataset(&data).map_err(&fail)?;
            init_synthetic(&real, &st.phase, derive_seed(st.seed, "analysis.init", 0)).map_err(&fail)?
        }
    };
    let inner = InnerSpec {
        steps: st.phase.syn_steps,
        mini_batch: st.phase.mini_batch_size.min(syn.len()),
        loss: st.loss,
        seed: derive_seed(st.seed, "analysis.inner", 0),
    };
    let sc = build_shortcut(traj, st.endpoint, 0).map_err(&fail)?;
    let source: &dyn TrajectorySource = if st.shortcut { &sc } else { traj };
    let model = &buf.model;

    match mode {
        Mode::Cosine => {
            let m = grad_cosine_matrix(model, source, &syn, &st.starts, st.segment, &inner, st.probe).map_err(&fail)?;
            let mut csv = String::from("start_i,start_j,cosine\n");
            for (i, a) in st.starts.iter().enumerate() {
                for (j, b) in st.starts.iter().enumerate() {
                    let _ = writeln!(csv, "{a},{b},{}", m.get(i, j));
                }
            }
            write_text(&out.join("cosine_matrix.csv"), &csv).map_err(&fail)?;
            eprintln!("mean off-diagonal cosine {:.4}", mean_off_diagonal(&m));
        }
        Mode::Sweep => {
            let mut fit = String::from("trajectory,slope\n");
            let runs: [(&str, &dyn TrajectorySource, &str); 2] = [
                ("shortcut", &sc, "prop_sweep.csv"),
                ("original", traj, "prop_sweep_original.csv"),
            ];
            for (name, src, file) in runs {
                let r = proposition_sweep(model, src, &syn, st.base, &st.dts, st.segment, &inner, st.probe)
                    .map_err(&fail)?;
                let mut csv = String::from("dt,grad_diff_norm\n");
                for (dt, v) in &r.rows {
                    let _ = writeln!(csv, "{dt},{v}");
                }
                write_text(&out.join(file), &csv).map_err(&fail)?;
                let slope = r.slope.map(|s| s.to_string()).unwrap_or_default();
                let _ = writeln!(fit, "{name},{slope}");
                eprintln!("{name}: log-log slope {slope}");
            }
            write_text(&out.join("prop_sweep_fit.csv"), &fit).map_err(&fail)?;
        }
        Mode::Pca => {
            let p = pca_gradients(model, source, &syn, &st.starts, st.segment, &inner, st.probe, st.components)
                .map_err(&fail)?;
            let k = p.eigenvalues.len();
            let mut csv = String::from("start");
            for c in 1..=k {
                let _ = write!(csv, ",pc{c}");
            }
            csv.push_str(",norm\n");
            for (i, s) in st.starts.iter().enumerate() {
                let row = std::iter::once(*s).chain(p.coords[i].iter().copied()).chain([p.norms[i]]);
                let _ = writeln!(csv, "{}", fmt_row(row));
            }
            write_text(&out.join("pca_grad.csv"), &csv).map_err(&fail)?;
            if p.rank_deficient {
                eprintln!("warning: only {k} of {} components available", st.components);
            }
        }
    }
    Ok(())
}
