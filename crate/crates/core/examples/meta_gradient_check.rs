//! Compares the exact meta-gradient with central differences on a tiny
//! instance, blockwise.

use rand::Rng;

use ptmst::datamodel::{Matrix, SimilarityParams, SyntheticDataset};
use ptmst::distill::{meta_gradient, InnerSpec};
use ptmst::model::{BatchLossSpec, TwoTowerModel};
use ptmst::rng::rng_from_seed;

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    d / b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12)
}

fn main() -> ptmst::Result<()> {
    let mut r = rng_from_seed(7);
    let model = TwoTowerModel::new(6, 5, 8, 4)?;
    let mut fill = |n: usize| (0..n).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let syn = SyntheticDataset {
        images: Matrix::from_vec(5, 6, fill(30))?,
        texts: Matrix::from_vec(5, 5, fill(25))?,
        sim: SimilarityParams::identity(5),
        lr_img: 0.1,
        lr_txt: 0.1,
        phase: 1,
        source_indices: (0..5).collect(),
    };
    let mut r = rng_from_seed(8);
    let start = model.init(&mut r);
    let target = start.with_data(start.as_slice().iter().map(|v| v + r.random_range(-0.05..0.05)).collect())?;
    let spec = InnerSpec {
        steps: 3,
        mini_batch: 4,
        loss: BatchLossSpec::default(),
        seed: 1,
    };
    let (loss, g) = meta_gradient(&model, &syn, &start, &target, &spec)?;
    println!("matching loss {loss:.6}");
    let f = |s: &SyntheticDataset| meta_gradient(&model, s, &start, &target, &spec).map(|v| v.0);
    let h = 1e-6;
    let mut fd = Vec::new();
    for k in 0..30 {
        let (mut a, mut b) = (syn.clone(), syn.clone());
        a.images.as_mut_slice()[k] += h;
        b.images.as_mut_slice()[k] -= h;
        fd.push((f(&a)? - f(&b)?) / (2.0 * h));
    }
    println!("images: relative error {:.2e}", rel(g.images.as_slice(), &fd));
    let (mut a, mut b) = (syn.clone(), syn.clone());
    a.lr_img += h;
    b.lr_img -= h;
    let fd_lr = (f(&a)? - f(&b)?) / (2.0 * h);
    println!("lr_img: exact {:.6e}, differences {:.6e}", g.lr_img, fd_lr);
    Ok(())
}
