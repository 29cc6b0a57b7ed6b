use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{announce, data_root, ensure_dir, relative_path, to_json, write_text, CliError, CliResult, DistillArgs};
use super::{KvConfig, EXIT_DISTILL, EXIT_OTHER};
use crate::datamodel::{load_dataset, save_synthetic, DistillPlan, PhaseConfig, SimType, TeacherMode};
use crate::distill::distill_all;
use crate::error::{Error, Result};
use crate::model::{BatchLossSpec, LossKind, TwoTowerModel};
use crate::trajectory::ExpertBuffer;

/// `plan_manifest.json`: subsets in phase order plus everything needed to
/// rerun or evaluate them. Paths are relative to the manifest directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanManifest {
    pub seed: u64,
    pub teacher: TeacherMode,
    pub loss: BatchLossSpec,
    pub model: TwoTowerModel,
    pub buffer: String,
    pub buffer_schema_hash: String,
    pub data: String,
    pub phases: Vec<PhaseEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub phase: usize,
    pub file: String,
    pub initial_indices: Vec<usize>,
    pub config: PhaseConfig,
    pub final_loss: Option<f64>,
}

impl PlanManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn parse_sim_type(s: &str) -> Result<SimType> {
    match s.to_ascii_lowercase().as_str() {
        "full" => Ok(SimType::Full),
        "lowrank" | "low_rank" => Ok(SimType::LowRank),
        _ => Err(Error::Config(format!("key `sim_type`: unknown value `{s}`"))),
    }
}

fn parse_teacher(s: &str) -> Result<TeacherMode> {
    match s {
        "shortcut" => Ok(TeacherMode::Shortcut),
        "original" => Ok(TeacherMode::Original),
        _ => Err(Error::Config(format!("key `teacher`: unknown value `{s}`"))),
    }
}

struct PhaseLists {
    p: usize,
    lists: Vec<(&'static str, Option<Vec<String>>)>,
}

impl PhaseLists {
    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<Vec<T>>
    where
        T: Clone,
    {
        let (_, list) = self.lists.iter().find(|(k, _)| *k == key).expect("declared key");
        let Some(items) = list else {
            return Ok(vec![default; self.p]);
        };
        let parse = |s: &String| {
            s.parse::<T>()
                .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{s}`")))
        };
        match items.len() {
            1 => Ok(vec![parse(&items[0])?; self.p]),
            n if n == self.p => items.iter().map(parse).collect(),
            n => Err(Error::Config(format!("key `{key}` has {n} values for {} phases", self.p))),
        }
    }
}

/// Plan file settings besides the phases themselves.
pub(crate) struct PlanFile {
    pub plan: DistillPlan,
    pub buffer: Option<String>,
    pub data: Option<String>,
}

const PHASE_KEYS: [(&str, &[&str]); 19] = [
    ("num_queries", &["num_queries"]),
    ("iteration", &["iteration"]),
    ("min_start_epoch", &["min_start_epoch"]),
    ("max_start_epoch", &["max_start_epoch"]),
    ("interpolation_endpoints", &["interpolation_endpoints", "interpolation_endpoint"]),
    ("syn_steps", &["syn_steps"]),
    ("expert_epochs", &["expert_epochs"]),
    ("ema_decay", &["ema_decay", "alpha"]),
    ("lr_img", &["lr_img"]),
    ("lr_txt", &["lr_txt"]),
    ("lr_sim", &["lr_sim"]),
    ("lr_lr", &["lr_lr"]),
    ("lr_teacher_img", &["lr_teacher_img"]),
    ("lr_teacher_txt", &["lr_teacher_txt"]),
    ("mini_batch_size", &["mini_batch_size"]),
    ("loss_type", &["loss_type"]),
    ("sim_type", &["sim_type"]),
    ("sim_rank", &["sim_rank"]),
    ("sim_scale", &["sim_scale"]),
];

pub(crate) fn read_plan(cfg: &mut KvConfig) -> Result<PlanFile> {
    let seed: u64 = cfg.require("seed")?;
    if !cfg.contains("num_queries") {
        return Err(Error::Config("missing required key `num_queries`".into()));
    }
    let declared: Option<usize> = if cfg.contains("subset_num") {
        Some(cfg.require("subset_num")?)
    } else {
        None
    };
    let mut lists = Vec::new();
    for (name, keys) in PHASE_KEYS {
        lists.push((name, cfg.list_any::<String>(keys)?));
    }
    let longest = lists.iter().filter_map(|(_, l)| l.as_ref().map(Vec::len)).max().unwrap_or(1);
    let p = declared.unwrap_or(longest);
    if p == 0 {
        return Err(Error::Config("subset_num must be at least 1".into()));
    }
    let pl = PhaseLists { p, lists };
    let d = PhaseConfig::default();
    let num_queries = pl.get("num_queries", d.num_queries)?;
    let iteration = pl.get("iteration", d.iteration)?;
    let t_lo = pl.get("min_start_epoch", d.min_start_epoch)?;
    let t_hi = pl.get("max_start_epoch", d.max_start_epoch)?;
    let t_p = pl.get("interpolation_endpoints", d.interpolation_endpoint)?;
    let syn_steps = pl.get("syn_steps", d.syn_steps)?;
    let expert_epochs = pl.get("expert_epochs", d.expert_epochs)?;
    let ema = pl.get("ema_decay", d.ema_decay)?;
    let lr_img = pl.get("lr_img", d.lr_img)?;
    let lr_txt = pl.get("lr_txt", d.lr_txt)?;
    let lr_sim = pl.get("lr_sim", d.lr_sim)?;
    let lr_lr = pl.get("lr_lr", d.lr_lr)?;
    let lr_t_img = pl.get("lr_teacher_img", d.lr_teacher_img)?;
    let lr_t_txt = pl.get("lr_teacher_txt", d.lr_teacher_txt)?;
    let mb = pl.get("mini_batch_size", d.mini_batch_size)?;
    let loss_type = pl.get::<LossKind>("loss_type", d.loss_type)?;
    let sim_type = pl
        .get::<String>("sim_type", "full".into())?
        .iter()
        .map(|s| parse_sim_type(s))
        .collect::<Result<Vec<_>>>()?;
    let sim_rank = pl.get("sim_rank", d.sim_rank)?;
    let sim_scale = pl.get("sim_scale", d.sim_scale)?;
    let phases = (0..p)
        .map(|i| PhaseConfig {
            num_queries: num_queries[i],
            iteration: iteration[i],
            min_start_epoch: t_lo[i],
            max_start_epoch: t_hi[i],
            interpolation_endpoint: t_p[i],
            syn_steps: syn_steps[i],
            expert_epochs: expert_epochs[i],
            ema_decay: ema[i],
            lr_img: lr_img[i],
            lr_txt: lr_txt[i],
            lr_sim: lr_sim[i],
            lr_lr: lr_lr[i],
            lr_teacher_img: lr_t_img[i],
            lr_teacher_txt: lr_t_txt[i],
            mini_batch_size: mb[i],
            loss_type: loss_type[i],
            sim_type: sim_type[i],
            sim_rank: sim_rank[i],
            sim_scale: sim_scale[i],
        })
        .collect();
    let mut plan = DistillPlan::new(phases, seed);
    plan.teacher = parse_teacher(&cfg.get("teacher", "shortcut".to_string())?)?;
    let dl = BatchLossSpec::default();
    plan.loss = BatchLossSpec {
        kind: loss_type[0],
        tau: cfg.get("tau", dl.tau)?,
        beta_thr: cfg.get("beta_thr", dl.beta_thr)?,
        tau_c: cfg.get("tau_c", dl.tau_c)?,
    };
    let buffer = cfg.contains("buffer").then(|| cfg.require::<String>("buffer")).transpose()?;
    let data = cfg.contains("data").then(|| cfg.require::<String>("data")).transpose()?;
    Ok(PlanFile { plan, buffer, data })
}

fn plan_dir(plan: &Path) -> PathBuf {
    plan.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn run_distill(args: &DistillArgs) -> CliResult<()> {
    let fail = CliError::at(EXIT_OTHER);
    let mut cfg = KvConfig::load(&args.plan).map_err(&fail)?;
    let PlanFile { mut plan, buffer, data } = read_plan(&mut cfg).map_err(&fail)?;
    cfg.finish().map_err(&fail)?;
    let base = plan_dir(&args.plan);
    let buffer_dir = args
        .buffer
        .clone()
        .or_else(|| buffer.map(|b| base.join(b)))
        .unwrap_or_else(|| data_root().join("buffer"));
    let out = args.out.clone().unwrap_or_else(|| data_root().join("distilled"));

    let (buf, manifest) = ExpertBuffer::load(&buffer_dir).map_err(&fail)?;
    let data_path = match (&args.data, data, &manifest.data) {
        (Some(p), _, _) => p.clone(),
        (None, Some(d), _) => base.join(d),
        (None, None, Some(d)) => buffer_dir.join(d),
        (None, None, None) => {
            return Err(fail(Error::Config("no training data: pass --data or set `data`".into())));
        }
    };
    let labels: Vec<String> = (1..=plan.phases.len()).map(|p| format!("phase_{p}")).collect();
    let mut extra = vec![
        ("buffer", buffer_dir.display().to_string()),
        ("data", data_path.display().to_string()),
        ("out", out.display().to_string()),
        ("loss", serde_json::to_string(&plan.loss).map_err(|e| fail(e.into()))?),
    ];
    for (label, ph) in labels.iter().zip(&plan.phases) {
        extra.push((label.as_str(), serde_json::to_string(ph).map_err(|e| fail(e.into()))?));
    }
    announce("distill", &cfg, &extra);
    plan.validate(buf.epochs()).map_err(&fail)?;

    let real = load_dataset(&data_path).map_err(&fail)?;
    let indices = plan.initial_indices(real.len()).map_err(&fail)?;
    let mut log = String::from("phase,iteration,expert,start_epoch,loss,grad_norm\n");
    let results = distill_all(&plan, &buf, &real, &mut |r| {
        let _ = writeln!(
            log,
            "{},{},{},{},{},{}",
            r.phase + 1,
            r.iteration,
            r.expert,
            r.start_epoch,
            r.loss,
            r.grad_norm
        );
    })
    .map_err(CliError::at(EXIT_DISTILL))?;

    ensure_dir(&out).map_err(&fail)?;
    plan.buffer = PathBuf::from(relative_path(&out, &buffer_dir).map_err(&fail)?);
    let mut phases = Vec::new();
    for (p, (res, idx)) in results.iter().zip(indices).enumerate() {
        let file = format!("phase_{}.ptms", p + 1);
        save_synthetic(out.join(&file), &res.dataset).map_err(&fail)?;
        eprintln!("phase {}: final loss {:?}", p + 1, res.final_loss());
        phases.push(PhaseEntry {
            phase: p + 1,
            file,
            initial_indices: idx,
            config: plan.phases[p].clone(),
            final_loss: res.final_loss(),
        });
    }
    let pm = PlanManifest {
        seed: plan.seed,
        teacher: plan.teacher,
        loss: plan.loss,
        model: buf.model,
        buffer: plan.buffer.to_string_lossy().into_owned(),
        buffer_schema_hash: buf.schema_hash(),
        data: relative_path(&out, &data_path).map_err(&fail)?,
        phases,
    };
    write_text(&out.join("plan_manifest.json"), &to_json(&pm).map_err(&fail)?).map_err(&fail)?;
    write_text(&out.join("distill_log.csv"), &log).map_err(&fail)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flickr_500_plan_parses() {
        let text = "\
seed = 0
subset_num = 2
syn_steps = 8
expert_epochs = 1
min_start_epoch = 0, 1
max_start_epoch = 2, 3
iteration = 2000*2
interpolation_endpoints = 6, 8
lr_img = 1000
lr_txt = 1000
lr_lr = 1e-2
lr_teacher_img = 0.1
lr_teacher_txt = 0.1
lr_sim = 10.0
sim_type = full
num_queries = 200, 299
mini_batch_size = 40
loss_type = wBCE
";
        let mut cfg = KvConfig::parse(text).unwrap();
        let pf = read_plan(&mut cfg).unwrap();
        cfg.finish().unwrap();
        let ph = &pf.plan.phases;
        assert_eq!(ph.len(), 2);
        assert_eq!((ph[0].num_queries, ph[1].num_queries), (200, 299));
        assert_eq!((ph[0].min_start_epoch, ph[1].min_start_epoch), (0, 1));
        assert_eq!((ph[0].max_start_epoch, ph[1].max_start_epoch), (2, 3));
        assert_eq!((ph[0].interpolation_endpoint, ph[1].interpolation_endpoint), (6, 8));
        assert_eq!((ph[0].iteration, ph[1].iteration), (2000, 2000));
        assert!(ph.iter().all(|p| p.syn_steps == 8 && p.mini_batch_size == 40 && p.lr_sim == 10.0));
        assert!(ph.iter().all(|p| p.loss_type == LossKind::Wbce && p.sim_type == SimType::Full));
        pf.plan.validate(10).unwrap();
    }

    #[test]
    fn list_length_must_match_phase_count() {
        let mut cfg = KvConfig::parse("seed = 1\nsubset_num = 3\nnum_queries = 5, 5\n").unwrap();
        let e = read_plan(&mut cfg).err().unwrap().to_string();
        assert!(e.contains("num_queries"), "{e}");
        let mut cfg = KvConfig::parse("seed = 1\n").unwrap();
        assert!(read_plan(&mut cfg).is_err());
    }
}
