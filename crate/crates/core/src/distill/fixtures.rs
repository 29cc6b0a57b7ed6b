use crate::datamodel::{generate_pair_dataset, GeneratorConfig, ParamVector, SimilarityParams, SyntheticDataset};
use crate::model::TwoTowerModel;
use crate::rng;

/// `n` real pairs (6-d images, 5-d texts) as a synthetic set with identity
/// similarity, and an initialised 7/4 model.
pub(crate) fn fixture(n: usize) -> (TwoTowerModel, SyntheticDataset, ParamVector) {
    let real = generate_pair_dataset(&GeneratorConfig {
        m: n,
        d_img: 6,
        d_txt: 5,
        classes: n,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let model = TwoTowerModel::new(6, 5, 7, 4).unwrap();
    let idx: Vec<usize> = (0..n).collect();
    let syn = SyntheticDataset::from_real(&real, &idx, 1, 0.1, 0.2, SimilarityParams::identity(n)).unwrap();
    let p = model.init(&mut rng::rng_from_seed(3));
    (model, syn, p)
}

/// Real data, a two-expert buffer trained for `epochs`, and a one-phase plan
/// with short loops.
pub(crate) fn small_setup(epochs: usize) -> (crate::datamodel::PairDataset, crate::trajectory::ExpertBuffer, crate::datamodel::DistillPlan) {
    use crate::datamodel::{DistillPlan, PhaseConfig};
    use crate::trajectory::{train_teacher, ExpertBuffer, TeacherConfig};
    let real = generate_pair_dataset(&GeneratorConfig {
        m: 64,
        d_img: 6,
        d_txt: 5,
        classes: 8,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let tc = TeacherConfig {
        hidden: 7,
        embed: 4,
        epochs,
        batch_size: 16,
        ..TeacherConfig::default()
    };
    let trajs = (0..2).map(|k| train_teacher(&real, &tc, k, 100 + k as u64).unwrap()).collect();
    let buffer = ExpertBuffer::new(tc.model_for(&real).unwrap(), trajs).unwrap();
    let phase = PhaseConfig {
        num_queries: 6,
        iteration: 5,
        min_start_epoch: 0,
        max_start_epoch: 1,
        interpolation_endpoint: epochs,
        syn_steps: 2,
        mini_batch_size: 4,
        ..PhaseConfig::default()
    };
    (real, buffer, DistillPlan::new(vec![phase], 21))
}
