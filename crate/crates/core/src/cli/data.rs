use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{announce, data_root, to_json, write_text, CliError, CliResult, GenDataArgs, KvConfig, EXIT_OTHER};
use crate::datamodel::io::encode_dataset;
use crate::datamodel::{GeneratorConfig, PairGenerator, Split};
use crate::error::{Error, Result};

/// `<dir>/<stem>_test.ptms` for a train split at `<dir>/<stem>.ptms`.
pub fn test_path_for(data: &Path) -> PathBuf {
    let stem = data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    data.with_file_name(format!("{stem}_test.ptms"))
}

#[derive(Serialize)]
struct Provenance<'a> {
    generator: &'a str,
    seed: u64,
    m: usize,
    test_m: usize,
    d_img: usize,
    d_txt: usize,
    latent_dim: usize,
    classes: usize,
    noise_sd: f64,
    class_spread: f64,
    sha256: BTreeMap<String, String>,
}

pub(crate) fn read_generator(cfg: &mut KvConfig) -> Result<(GeneratorConfig, usize)> {
    let d = GeneratorConfig::default();
    let g = GeneratorConfig {
        seed: cfg.require("seed")?,
        m: cfg.get("m", d.m)?,
        d_img: cfg.get("d_img", d.d_img)?,
        d_txt: cfg.get("d_txt", d.d_txt)?,
        latent_dim: cfg.get("latent_dim", d.latent_dim)?,
        classes: cfg.get("classes", d.classes)?,
        noise_sd: cfg.get("noise_sd", d.noise_sd)?,
        class_spread: cfg.get("class_spread", d.class_spread)?,
    };
    let test_m = cfg.get("test_m", 500usize)?;
    Ok((g, test_m))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn run_gen_data(args: &GenDataArgs) -> CliResult<()> {
    let fail = CliError::at(EXIT_OTHER);
    let mut cfg = KvConfig::load(&args.config).map_err(&fail)?;
    let (g, test_m) = read_generator(&mut cfg).map_err(&fail)?;
    cfg.finish().map_err(&fail)?;
    let out = args.out.clone().unwrap_or_else(|| data_root().join("data.ptms"));
    announce("gen-data", &cfg, &[("out", out.display().to_string())]);

    let gen = PairGenerator::new(g.clone()).map_err(|e| fail(Error::Config(e.to_string())))?;
    let mut sha256 = BTreeMap::new();
    let mut splits = vec![(out.clone(), g.m, Split::Train)];
    if test_m > 0 {
        splits.push((test_path_for(&out), test_m, Split::Test));
    }
    for (path, count, split) in splits {
        let bytes = encode_dataset(&gen.sample(count, split).map_err(&fail)?).map_err(&fail)?;
        crate::datamodel::io::write_file(&path, &bytes).map_err(&fail)?;
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        sha256.insert(name, sha256_hex(&bytes));
    }
    let prov = Provenance {
        generator: "class-conditioned latent pairs",
        seed: g.seed,
        m: g.m,
        test_m,
        d_img: g.d_img,
        d_txt: g.d_txt,
        latent_dim: g.latent_dim,
        classes: g.classes,
        noise_sd: g.noise_sd,
        class_spread: g.class_spread,
        sha256,
    };
    write_text(&out.with_extension("json"), &to_json(&prov).map_err(&fail)?).map_err(&fail)?;
    eprintln!("wrote {} ({} pairs)", out.display(), g.m);
    Ok(())
}
