use std::path::{Path, PathBuf};

use ptmst::cli::{eval_seed, main_with};
use ptmst::datamodel::load_dataset;
use ptmst::eval::{coreset_random, coreset_subset, train_student_progressive};
use ptmst::rng::derive_seed;
use ptmst::trajectory::{ExpertBuffer, TeacherConfig};

fn run(args: &[&str]) -> i32 {
    main_with(std::iter::once("ptmst").chain(args.iter().copied()))
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        Work {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn s(&self, rel: &str) -> String {
        self.path(rel).to_string_lossy().into_owned()
    }

    fn write(&self, rel: &str, text: &str) -> String {
        std::fs::write(self.path(rel), text).unwrap();
        self.s(rel)
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.path(rel)).unwrap()
    }

    fn data(&self) -> String {
        let cfg = self.write("gen.cfg", "seed = 3\nm = 120\ntest_m = 60\nclasses = 6\n");
        assert_eq!(run(&["gen-data", "--config", &cfg, "--out", &self.s("data.ptms")]), 0);
        self.s("data.ptms")
    }

    fn buffer(&self, extra: &str) -> String {
        let data = self.data();
        let cfg = self.write("teacher.cfg", &format!("seed = 4\nepoch = 3\nnum_experts = 2\n{extra}"));
        assert_eq!(
            run(&["train-teacher", "--config", &cfg, "--data", &data, "--out", &self.s("buffer"), "--verify"]),
            0
        );
        self.s("buffer")
    }
}

#[test]
fn missing_required_key_is_a_config_error() {
    let w = Work::new();
    let cfg = w.write("gen.cfg", "m = 10\n");
    assert_eq!(run(&["gen-data", "--config", &cfg, "--out", &w.s("d.ptms")]), 2);
    assert!(!w.path("d.ptms").exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let w = Work::new();
    let cfg = w.write("gen.cfg", "seed = 1\nm = 10\nlearning_rate = 3\n");
    assert_eq!(run(&["gen-data", "--config", &cfg, "--out", &w.s("d.ptms")]), 2);
}

#[test]
fn bad_flag_is_a_config_error() {
    assert_eq!(run(&["distill", "--no-such-flag"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
}

#[test]
fn missing_input_file_is_other_error() {
    let w = Work::new();
    let cfg = w.write("teacher.cfg", "seed = 1\n");
    assert_eq!(
        run(&["train-teacher", "--config", &cfg, "--data", &w.s("absent.ptms"), "--out", &w.s("b")]),
        1
    );
}

#[test]
fn gen_data_is_reproducible_and_hashed() {
    let (a, b) = (Work::new(), Work::new());
    a.data();
    b.data();
    assert_eq!(std::fs::read(a.path("data.ptms")).unwrap(), std::fs::read(b.path("data.ptms")).unwrap());
    let ja: serde_json::Value = serde_json::from_str(&a.read("data.json")).unwrap();
    let jb: serde_json::Value = serde_json::from_str(&b.read("data.json")).unwrap();
    assert_eq!(ja["sha256"], jb["sha256"]);
    assert_eq!(ja["sha256"].as_object().unwrap().len(), 2);
    assert!(a.path("data_test.ptms").exists());
    assert_eq!(load_dataset(a.path("data.ptms")).unwrap().len(), 120);
}

#[test]
fn zero_lr_teacher_verifies_as_constant() {
    let w = Work::new();
    let buf = w.buffer("lr_teacher_img = 0\nlr_teacher_txt = 0\n");
    let (b, _) = ExpertBuffer::load(Path::new(&buf)).unwrap();
    let t = &b.trajectories[1];
    assert!((1..=3).all(|e| t.params(e).bitwise_eq(t.params(0))));
}

#[test]
fn divergent_teacher_exits_with_training_code() {
    let w = Work::new();
    let data = w.data();
    let cfg = w.write("teacher.cfg", "seed = 4\nepoch = 2\nlr_teacher_img = 1e300\nlr_teacher_txt = 1e300\n");
    assert_eq!(
        run(&["train-teacher", "--config", &cfg, "--data", &data, "--out", &w.s("buffer"), "--experts", "1"]),
        3
    );
}

#[test]
fn single_seed_report_and_aggregate_agree() {
    let w = Work::new();
    let buf = w.buffer("");
    let plan = w.write(
        "plan.cfg",
        "seed = 5\nnum_queries = 4, 4\nmin_start_epoch = 0, 1\nmax_start_epoch = 1, 1\n\
         interpolation_endpoints = 2, 3\niteration = 3\nsyn_steps = 2\nmini_batch_size = 4\n",
    );
    assert_eq!(run(&["distill", "--plan", &plan, "--buffer", &buf, "--out", &w.s("dist")]), 0);
    let log = w.read("dist/distill_log.csv");
    assert!(log.starts_with("phase,iteration,expert,start_epoch,loss,grad_norm\n"));
    assert_eq!(log.lines().count(), 1 + 2 * 3);
    assert!(w.path("dist/phase_1.ptms").exists() && w.path("dist/phase_2.ptms").exists());

    let ecfg = w.write("eval.cfg", "seed = 6\nepoch = 2\n");
    let manifest = w.s("dist/plan_manifest.json");
    assert_eq!(run(&["eval", "--subsets", &manifest, "--config", &ecfg, "--seeds", "1", "--out", &w.s("ev")]), 0);
    let rows: Vec<serde_json::Value> =
        w.read("ev/eval_report.jsonl").lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 1);
    let agg = w.read("ev/eval_aggregate.csv");
    let mean_row = agg.lines().find(|l| l.starts_with("mean,")).unwrap();
    let parts: Vec<&str> = mean_row.split(',').collect();
    assert_eq!(parts[1].parse::<f64>().unwrap(), rows[0]["mean"].as_f64().unwrap());
    assert_eq!(parts[2].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn full_random_coreset_matches_a_direct_run() {
    let w = Work::new();
    let data = w.data();
    let ecfg = w.write("eval.cfg", "seed = 9\nepoch = 3\n");
    assert_eq!(
        run(&["eval", "--coreset", "random", "--size", "120", "--data", &data, "--config", &ecfg, "--out", &w.s("ev")]),
        0
    );
    let row: serde_json::Value = serde_json::from_str(w.read("ev/eval_report.jsonl").lines().next().unwrap()).unwrap();

    let real = load_dataset(&data).unwrap();
    let test = load_dataset(w.path("data_test.ptms")).unwrap();
    let cfg = ptmst::eval::EvalConfig {
        epochs: 3,
        ..Default::default()
    };
    let model = TeacherConfig::default().model_for(&real).unwrap();
    let idx = coreset_random(&real, 120, derive_seed(9, "eval.coreset", 0)).unwrap();
    let sub = coreset_subset(&real, &idx, cfg.lr_img).unwrap();
    let direct = train_student_progressive(&model, &[sub], &cfg, &test, eval_seed(9, 0)).unwrap();
    assert!((row["mean"].as_f64().unwrap() - direct.mean()).abs() < 1e-9);
}

#[test]
fn analyze_writes_expected_tables() {
    let w = Work::new();
    let buf = w.buffer("");
    let cfg = w.write("an.cfg", "seed = 7\ninterpolation_endpoint = 3\nstarts = 0, 1\nsyn_steps = 2\n");
    for mode in ["cosine", "sweep", "pca"] {
        assert_eq!(
            run(&["analyze", "--mode", mode, "--config", &cfg, "--buffer", &buf, "--out", &w.s("an")]),
            0,
            "{mode}"
        );
    }
    let first = |f: &str| w.read(&format!("an/{f}")).lines().next().unwrap().to_string();
    assert_eq!(first("cosine_matrix.csv"), "start_i,start_j,cosine");
    assert_eq!(first("prop_sweep.csv"), "dt,grad_diff_norm");
    assert_eq!(first("prop_sweep_original.csv"), "dt,grad_diff_norm");
    assert_eq!(first("prop_sweep_fit.csv"), "trajectory,slope");
    assert!(first("pca_grad.csv").starts_with("start,pc1"));
    assert!(first("pca_grad.csv").ends_with(",norm"));
    assert_eq!(w.read("an/cosine_matrix.csv").lines().count(), 1 + 4);
    assert_eq!(run(&["analyze", "--mode", "tsne", "--config", &cfg, "--buffer", &buf]), 2);
}
