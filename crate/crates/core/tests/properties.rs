use proptest::prelude::*;

use ptmst::analysis::{grad_cosine_matrix, pca_project, GradientProbe};
use ptmst::cli::kv::parse_list;
use ptmst::datamodel::{
    Checkpoint, LayerSpec, Matrix, ParamVector, SimilarityParams, SyntheticDataset,
};
use ptmst::distill::{ema_update, inner_batches, matching_loss, InnerSpec};
use ptmst::model::{retrieval_from_similarity, BatchLossSpec, TwoTowerModel};
use ptmst::rng::rng_from_seed;
use ptmst::trajectory::{build_shortcut, query_shortcut, TeacherTrajectory, TrainingMeta};

fn meta() -> TrainingMeta {
    TrainingMeta {
        lr_img: 0.1,
        lr_txt: 0.1,
        momentum: 0.9,
        weight_decay: 0.0,
        batch_size: 8,
        seed: 0,
    }
}

/// Random walk with two layers, every step moving every layer.
fn walk(steps: Vec<(Vec<f64>, Vec<f64>)>) -> TeacherTrajectory {
    let specs = [LayerSpec::new("a", vec![3]), LayerSpec::new("b", vec![2])];
    let mut a = vec![0.5, -0.25, 1.0];
    let mut b = vec![0.0, 2.0];
    let mut cps = Vec::new();
    let mk = |a: &[f64], b: &[f64]| {
        ParamVector::from_layers(vec![(specs[0].clone(), a.to_vec()), (specs[1].clone(), b.to_vec())]).unwrap()
    };
    cps.push(Checkpoint { epoch: 0, params: mk(&a, &b) });
    for (e, (da, db)) in steps.into_iter().enumerate() {
        a.iter_mut().zip(&da).for_each(|(x, d)| *x += d);
        b.iter_mut().zip(&db).for_each(|(x, d)| *x += d);
        cps.push(Checkpoint { epoch: e + 1, params: mk(&a, &b) });
    }
    TeacherTrajectory::new(0, cps, meta()).unwrap()
}

fn step() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    let nz = prop_oneof![-2.0..-0.01f64, 0.01..2.0f64];
    (prop::collection::vec(nz.clone(), 3), prop::collection::vec(nz, 2))
}

fn syn(rows: usize, vals: &[f64], lr: f64) -> SyntheticDataset {
    let take = |off: usize, n: usize| (0..n).map(|i| vals[(off + i) % vals.len()]).collect::<Vec<_>>();
    let mut s = Matrix::identity(rows);
    for (i, v) in take(7, rows * rows).into_iter().enumerate() {
        s.as_mut_slice()[i] += 0.1 * v;
    }
    SyntheticDataset {
        images: Matrix::from_vec(rows, 3, take(0, rows * 3)).unwrap(),
        texts: Matrix::from_vec(rows, 2, take(3, rows * 2)).unwrap(),
        sim: SimilarityParams::Full(s),
        lr_img: lr,
        lr_txt: lr,
        phase: 1,
        source_indices: (0..rows).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beta_is_monotone_with_fixed_ends(steps in prop::collection::vec(step(), 2..8), tp_frac in 0.0..1.0f64) {
        let n = steps.len();
        let traj = walk(steps);
        let tp = 1 + ((n - 1) as f64 * tp_frac) as usize;
        let sc = build_shortcut(&traj, tp, 0).unwrap();
        for row in &sc.beta.rows {
            prop_assert_eq!(row.len(), tp + 1);
            prop_assert_eq!(row[0], 0.0);
            prop_assert_eq!(row[tp], 1.0);
            prop_assert!(row.windows(2).all(|w| w[0] <= w[1]));
        }
        prop_assert!(sc.checkpoints()[0].bitwise_eq(traj.params(0)));
        prop_assert!(sc.checkpoints()[tp].bitwise_eq(traj.params(tp)));
    }

    #[test]
    fn shortcut_queries_stay_on_the_segment(steps in prop::collection::vec(step(), 3..7), t in 0.0..1.0f64) {
        let traj = walk(steps);
        let tp = 2;
        let sc = build_shortcut(&traj, tp, 0).unwrap();
        let q = query_shortcut(&sc, t * tp as f64).unwrap();
        let (p0, pt) = (traj.params(0), traj.params(tp));
        for l in 0..q.num_layers() {
            let u: Vec<f64> = pt.layer(l).iter().zip(p0.layer(l)).map(|(a, b)| a - b).collect();
            let v: Vec<f64> = q.layer(l).iter().zip(p0.layer(l)).map(|(a, b)| a - b).collect();
            let uu: f64 = u.iter().map(|x| x * x).sum();
            let c = u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / uu;
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&c));
            let res: f64 = v.iter().zip(&u).map(|(a, b)| (a - c * b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(res <= 1e-10 * uu.sqrt().max(1.0));
        }
    }

    #[test]
    fn ema_endpoints_and_convexity(vals in prop::collection::vec(-3.0..3.0f64, 20), other in prop::collection::vec(-3.0..3.0f64, 20), alpha in 0.0..1.0f64) {
        let a = syn(4, &vals, 0.1);
        let b = syn(4, &other, 0.2);
        prop_assert_eq!(ema_update(&a, &b, 0.0).unwrap(), b.clone());
        prop_assert_eq!(ema_update(&a, &b, 1.0).unwrap(), a.clone());
        let m = ema_update(&a, &b, alpha).unwrap();
        prop_assert_eq!(m.lr_img, b.lr_img);
        for ((x, y), z) in a.images.as_slice().iter().zip(b.images.as_slice()).zip(m.images.as_slice()) {
            prop_assert!(*z >= x.min(*y) - 1e-12 && *z <= x.max(*y) + 1e-12);
        }
    }

    #[test]
    fn kv_lists_round_trip(xs in prop::collection::vec(0usize..1000, 1..12), rep in 1usize..5) {
        let text = xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        prop_assert_eq!(parse_list::<usize>("k", &text).unwrap(), xs.clone());
        let repeated: Vec<usize> = parse_list("k", &format!("{}*{rep}", xs[0])).unwrap();
        prop_assert_eq!(repeated, vec![xs[0]; rep]);
    }

    #[test]
    fn pca_ignores_sample_order(vs in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 6), 3..7), rot in 1usize..6) {
        let a = pca_project(&vs, 2).unwrap();
        let mut ws = vs.clone();
        let r = rot % ws.len();
        ws.rotate_left(r);
        let b = pca_project(&ws, 2).unwrap();
        prop_assert_eq!(a.eigenvalues.len(), b.eigenvalues.len());
        let scale = a.eigenvalues.first().copied().unwrap_or(1.0).max(1.0);
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            prop_assert!((x - y).abs() <= 1e-8 * scale);
        }
        let n = vs.len();
        for i in 0..n {
            let j = (i + n - r) % n;
            prop_assert_eq!(a.norms[i].to_bits(), b.norms[j].to_bits());
            // Distinct eigenvalues fix each component up to sign.
            let sep = a.eigenvalues.windows(2).all(|w| w[0] - w[1] > 1e-6 * scale);
            if sep {
                for c in 0..a.coords[i].len() {
                    prop_assert!((a.coords[i][c].abs() - b.coords[j][c].abs()).abs() <= 1e-6 * scale.sqrt());
                }
            }
        }
    }

    #[test]
    fn retrieval_is_rank_based(vals in prop::collection::vec(-4.0..4.0f64, 36)) {
        let s = Matrix::from_vec(6, 6, vals.clone()).unwrap();
        let t = Matrix::from_vec(6, 6, vals.iter().map(|v| (2.0 * v).exp() + 3.0).collect()).unwrap();
        let ks = [1, 3, 5];
        prop_assert_eq!(retrieval_from_similarity(&s, &ks).unwrap(), retrieval_from_similarity(&t, &ks).unwrap());
    }

    #[test]
    fn inner_batches_are_sorted_distinct_subsets(n in 1usize..40, mb in 1usize..40, steps in 1usize..6, seed in any::<u64>()) {
        let mb = mb.min(n);
        let bs = inner_batches(n, mb, steps, seed);
        prop_assert_eq!(bs.len(), steps);
        for b in &bs {
            prop_assert_eq!(b.len(), mb);
            prop_assert!(b.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(b.iter().all(|&i| i < n));
        }
        prop_assert_eq!(bs, inner_batches(n, mb, steps, seed));
    }

    #[test]
    fn matching_loss_is_a_normalised_distance(xs in prop::collection::vec(-3.0..3.0f64, 5), ys in prop::collection::vec(-3.0..3.0f64, 5), lam in 0.0..1.0f64) {
        let pv = |v: Vec<f64>| ParamVector::from_layers(vec![(LayerSpec::new("w", vec![5]), v)]).unwrap();
        prop_assume!(xs.iter().zip(&ys).map(|(a, b)| (a - b).powi(2)).sum::<f64>() > 1e-6);
        let start = pv(xs.clone());
        let target = pv(ys.clone());
        let mid = pv(xs.iter().zip(&ys).map(|(a, b)| a + lam * (b - a)).collect());
        let l = matching_loss(&mid, &start, &target).unwrap();
        prop_assert!((l - (1.0 - lam).powi(2)).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cosine_matrix_is_a_correlation_shape(steps in prop::collection::vec(step(), 4..6), seed in 0u64..1000) {
        let model = TwoTowerModel::new(3, 2, 4, 2).unwrap();
        let mut r = rng_from_seed(seed);
        let p0 = model.init(&mut r);
        let mut cps = vec![Checkpoint { epoch: 0, params: p0.clone() }];
        let mut cur = p0.as_slice().to_vec();
        for (e, (da, db)) in steps.iter().enumerate() {
            for (i, x) in cur.iter_mut().enumerate() {
                let d = if i % 2 == 0 { da[i % 3] } else { db[i % 2] };
                *x += 0.05 * d;
            }
            cps.push(Checkpoint { epoch: e + 1, params: p0.with_data(cur.clone()).unwrap() });
        }
        let traj = TeacherTrajectory::new(0, cps, meta()).unwrap();
        let vals: Vec<f64> = (0..30).map(|i| ((i as f64 + seed as f64) * 0.7).sin()).collect();
        let d = syn(4, &vals, 0.1);
        let inner = InnerSpec { steps: 2, mini_batch: 3, loss: BatchLossSpec::default(), seed };
        let starts = [0.0, 1.0, 2.0];
        let m = grad_cosine_matrix(&model, &traj, &d, &starts, 1.0, &inner, GradientProbe::Images).unwrap();
        for i in 0..3 {
            prop_assert_eq!(m.get(i, i), 1.0);
            for j in 0..3 {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                prop_assert!((-1.0..=1.0).contains(&m.get(i, j)));
            }
        }
    }
}
