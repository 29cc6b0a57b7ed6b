//! Samples a paired dataset and prints its shape and class balance.
//!
//! `cargo run --example generate_data -- [seed] [out.ptms]`

use ptmst::datamodel::{save_dataset, GeneratorConfig, PairGenerator, Split};

fn main() -> ptmst::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let gen = PairGenerator::new(GeneratorConfig {
        seed,
        ..GeneratorConfig::default()
    })?;
    let train = gen.sample(2000, Split::Train)?;
    let test = gen.sample(500, Split::Test)?;
    println!(
        "train {} pairs, images {}-d, texts {}-d; test {} pairs",
        train.len(),
        train.d_img(),
        train.d_txt(),
        test.len()
    );
    let mut counts = std::collections::BTreeMap::new();
    for &c in train.classes.as_deref().unwrap_or_default() {
        *counts.entry(c).or_insert(0usize) += 1;
    }
    let (lo, hi) = (counts.values().min().unwrap(), counts.values().max().unwrap());
    println!("{} classes, {lo}..{hi} pairs per class", counts.len());
    if let Some(path) = args.next() {
        save_dataset(&path, &train)?;
        println!("wrote {path}");
    }
    Ok(())
}
