use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ema::ema_update;
use super::meta::{meta_gradient, MetaGradient, SimilarityGrad};
use super::unroll::InnerSpec;
use crate::datamodel::{initial_similarity, DistillPlan, PairDataset, PhaseConfig, SimilarityParams, SyntheticDataset, TeacherMode};
use crate::error::{Error, Result};
use crate::rng;
use crate::trajectory::{build_shortcut, ExpertBuffer, ShortcutTrajectory, TrajectorySource};

/// Smallest learnable inner step size.
pub const LR_FLOOR: f64 = 1e-8;
/// Clip threshold as a multiple of the running median gradient norm.
pub const CLIP_FACTOR: f64 = 10.0;
const CLIP_WARMUP: usize = 5;
const MAX_RESAMPLES: usize = 10;

/// Plain SGD on the synthetic set with median-based norm clipping.
#[derive(Clone, Debug, Default)]
pub struct OuterOptimizer {
    norms: Vec<f64>,
}

impl OuterOptimizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rescales `g` if its norm exceeds `CLIP_FACTOR` times the median of the
    /// norms seen so far. Returns the unclipped norm.
    pub fn clip(&mut self, g: &mut MetaGradient) -> f64 {
        let norm = g.norm();
        if self.norms.len() >= CLIP_WARMUP {
            let mut sorted = self.norms.clone();
            sorted.sort_by(f64::total_cmp);
            let mid = sorted.len() / 2;
            let median = if sorted.len() % 2 == 0 {
                0.5 * (sorted[mid - 1] + sorted[mid])
            } else {
                sorted[mid]
            };
            let limit = CLIP_FACTOR * median;
            if norm > limit && limit > 0.0 {
                g.scale(limit / norm);
            }
        }
        self.norms.push(norm);
        norm
    }

    pub fn apply(&self, syn: &mut SyntheticDataset, g: &MetaGradient, cfg: &PhaseConfig) {
        let step = |dst: &mut [f64], src: &[f64], lr: f64| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d -= lr * s;
            }
        };
        step(syn.images.as_mut_slice(), g.images.as_slice(), cfg.lr_img);
        step(syn.texts.as_mut_slice(), g.texts.as_slice(), cfg.lr_txt);
        match (&mut syn.sim, &g.sim) {
            (SimilarityParams::Full(s), SimilarityGrad::Full(d)) => {
                step(s.as_mut_slice(), d.as_slice(), cfg.lr_sim);
                syn.sim.clamp_unit();
            }
            (
                SimilarityParams::LowRank { omega, left, right, .. },
                SimilarityGrad::LowRank {
                    omega: dw,
                    left: dl,
                    right: dr,
                },
            ) => {
                *omega -= cfg.lr_sim * dw;
                step(left.as_mut_slice(), dl.as_slice(), cfg.lr_sim);
                step(right.as_mut_slice(), dr.as_slice(), cfg.lr_sim);
            }
            _ => unreachable!("gradient and similarity modes always agree"),
        }
        syn.lr_img = (syn.lr_img - cfg.lr_lr * g.lr_img).max(LR_FLOOR);
        syn.lr_txt = (syn.lr_txt - cfg.lr_lr * g.lr_txt).max(LR_FLOOR);
    }
}

/// Snapshot handed to the observer after every outer iteration.
pub struct IterationRecord<'a> {
    /// Zero-based phase index.
    pub phase: usize,
    /// One-based outer iteration.
    pub iteration: usize,
    pub expert: usize,
    pub start_epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub current: &'a SyntheticDataset,
    pub smoothed: &'a SyntheticDataset,
}

/// Output of one phase: the smoothed subset and the matching loss per
/// iteration.
#[derive(Clone, Debug)]
pub struct PhaseResult {
    pub dataset: SyntheticDataset,
    pub losses: Vec<f64>,
}

impl PhaseResult {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Expert, start epoch and inner seed of one outer iteration.
pub(crate) struct Draw {
    pub expert: usize,
    pub seed: u64,
}

pub(crate) fn draw_expert(rng: &mut ChaCha8Rng, experts: usize) -> Draw {
    let expert = rng.random_range(0..experts);
    let seed = rng.random();
    Draw { expert, seed }
}

pub(crate) fn draw_start(rng: &mut ChaCha8Rng, cfg: &PhaseConfig) -> usize {
    rng.random_range(cfg.min_start_epoch..=cfg.max_start_epoch)
}

pub(crate) fn inner_spec(plan: &DistillPlan, cfg: &PhaseConfig, seed: u64) -> InnerSpec {
    InnerSpec {
        steps: cfg.syn_steps,
        mini_batch: cfg.mini_batch_size,
        loss: plan.loss.with_kind(cfg.loss_type),
        seed,
    }
}

/// Meta-gradient against `source`, redrawing the start epoch while the
/// matching segment is degenerate.
pub(crate) fn matched_gradient(
    buffer: &ExpertBuffer,
    plan: &DistillPlan,
    cfg: &PhaseConfig,
    source: &dyn TrajectorySource,
    syn: &SyntheticDataset,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<(usize, f64, MetaGradient)> {
    let spec = inner_spec(plan, cfg, seed);
    let mut last = Error::DegenerateSegment;
    for _ in 0..=MAX_RESAMPLES {
        let t = draw_start(rng, cfg);
        let start = source.checkpoint(t);
        let target = source.checkpoint(t + cfg.expert_epochs);
        match meta_gradient(&buffer.model, syn, start, target, &spec) {
            Ok((loss, g)) => return Ok((t, loss, g)),
            Err(Error::DegenerateSegment) => last = Error::DegenerateSegment,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Disjoint initial subsets, one per phase, with identity similarity and the
/// teacher step sizes.
pub fn initial_subsets(plan: &DistillPlan, real: &PairDataset) -> Result<Vec<SyntheticDataset>> {
    let indices = plan.initial_indices(real.len())?;
    plan.phases
        .iter()
        .zip(indices)
        .enumerate()
        .map(|(p, (cfg, idx))| {
            let sim = initial_similarity(cfg, idx.len(), &mut rng::rng_for(plan.seed, "init.sim", p as u64))?;
            SyntheticDataset::from_real(real, &idx, p + 1, cfg.lr_teacher_img, cfg.lr_teacher_txt, sim)
        })
        .collect()
}

/// Runs phase `p` (zero-based) from `init` and returns the EMA-smoothed
/// subset after `iteration` outer steps.
pub fn distill_phase(
    plan: &DistillPlan,
    p: usize,
    buffer: &ExpertBuffer,
    init: &SyntheticDataset,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<PhaseResult> {
    let cfg = plan
        .phases
        .get(p)
        .ok_or_else(|| Error::invalid(format!("plan has no phase index {p}")))?;
    cfg.validate(buffer.epochs())?;
    plan.loss.validate()?;
    init.validate()?;
    if init.len() < cfg.mini_batch_size {
        return Err(Error::invalid("mini-batch larger than the synthetic subset"));
    }

    let mut rng = rng::rng_for(plan.seed, "phase", p as u64);
    let mut shortcuts: Vec<Option<ShortcutTrajectory>> = vec![None; buffer.len()];
    let mut current = init.clone();
    let mut smoothed = init.clone();
    let mut opt = OuterOptimizer::new();
    let mut losses = Vec::with_capacity(cfg.iteration);

    for it in 1..=cfg.iteration {
        let draw = draw_expert(&mut rng, buffer.len());
        let traj = &buffer.trajectories[draw.expert];
        let source: &dyn TrajectorySource = match plan.teacher {
            TeacherMode::Original => traj,
            TeacherMode::Shortcut => {
                let slot = &mut shortcuts[draw.expert];
                if slot.is_none() {
                    *slot = Some(build_shortcut(traj, cfg.interpolation_endpoint, p)?);
                }
                slot.as_ref().unwrap()
            }
        };
        let (t, loss, mut g) = matched_gradient(buffer, plan, cfg, source, &current, &mut rng, draw.seed)?;
        let norm = opt.clip(&mut g);
        if !g.is_finite() {
            return Err(Error::UnrollDivergence { step: cfg.syn_steps });
        }
        opt.apply(&mut current, &g, cfg);
        smoothed = ema_update(&smoothed, &current, cfg.ema_decay)?;
        losses.push(loss);
        observer(&IterationRecord {
            phase: p,
            iteration: it,
            expert: draw.expert,
            start_epoch: t,
            loss,
            grad_norm: norm,
            current: &current,
            smoothed: &smoothed,
        });
    }
    Ok(PhaseResult {
        dataset: smoothed,
        losses,
    })
}

/// Every phase in order, each from its own disjoint initial subset.
pub fn distill_all(
    plan: &DistillPlan,
    buffer: &ExpertBuffer,
    real: &PairDataset,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<Vec<PhaseResult>> {
    if real.d_img() != buffer.model.d_img || real.d_txt() != buffer.model.d_txt {
        return Err(Error::invalid("real data dims do not match the buffer model"));
    }
    plan.validate(buffer.epochs())?;
    let inits = initial_subsets(plan, real)?;
    inits
        .iter()
        .enumerate()
        .map(|(p, init)| {
            distill_phase(plan, p, buffer, init, observer).map_err(|e| Error::Phase {
                phase: p + 1,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::fixtures::small_setup;
    use crate::distill::lors_baseline;

    fn run(plan: &DistillPlan, buffer: &ExpertBuffer, real: &PairDataset) -> Vec<PhaseResult> {
        distill_all(plan, buffer, real, &mut |_| {}).unwrap()
    }

    #[test]
    fn zero_iterations_return_the_initialisation() {
        let (real, buffer, mut plan) = small_setup(3);
        plan.phases[0].iteration = 0;
        let init = initial_subsets(&plan, &real).unwrap().remove(0);
        let out = run(&plan, &buffer, &real);
        assert!(out[0].dataset.bitwise_eq(&init));
    }

    #[test]
    fn full_decay_freezes_the_output() {
        let (real, buffer, mut plan) = small_setup(3);
        plan.phases[0].ema_decay = 1.0;
        let init = initial_subsets(&plan, &real).unwrap().remove(0);
        let mut moved = false;
        let out = distill_all(&plan, &buffer, &real, &mut |r| moved |= !r.current.bitwise_eq(r.smoothed)).unwrap();
        assert!(moved);
        assert!(out[0].dataset.bitwise_eq(&init));
    }

    #[test]
    fn smoothing_matches_closed_form() {
        let (real, buffer, mut plan) = small_setup(3);
        let alpha = 0.9;
        plan.phases[0].ema_decay = alpha;
        plan.phases[0].iteration = 8;
        let init = initial_subsets(&plan, &real).unwrap().remove(0);
        let mut iterates = Vec::new();
        let out = distill_all(&plan, &buffer, &real, &mut |r| iterates.push(r.current.images.clone())).unwrap();
        let i = iterates.len() as i32;
        for (k, &v0) in init.images.as_slice().iter().enumerate() {
            let mut expect = alpha.powi(i) * v0;
            for (j, it) in iterates.iter().enumerate() {
                expect += (1.0 - alpha) * alpha.powi(i - 1 - j as i32) * it.as_slice()[k];
            }
            assert!((out[0].dataset.images.as_slice()[k] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let (real, buffer, mut plan) = small_setup(4);
        let mut second = plan.phases[0].clone();
        second.min_start_epoch = 1;
        second.max_start_epoch = 2;
        plan.phases.push(second);
        let a = run(&plan, &buffer, &real);
        let b = run(&plan, &buffer, &real);
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.dataset.bitwise_eq(&y.dataset));
            assert_eq!(x.losses, y.losses);
        }
        let mut rows: Vec<usize> = a.iter().flat_map(|r| r.dataset.source_indices.clone()).collect();
        rows.sort_unstable();
        rows.dedup();
        assert_eq!(rows.len(), 12);
    }

    #[test]
    fn single_phase_original_teacher_is_the_baseline() {
        let (real, buffer, mut plan) = small_setup(3);
        plan.teacher = TeacherMode::Original;
        plan.phases[0].ema_decay = 0.0;
        let a = run(&plan, &buffer, &real);
        let b = lors_baseline(&plan, &buffer, &real).unwrap();
        assert!(a[0].dataset.bitwise_eq(&b.dataset));
        assert_eq!(a[0].losses, b.losses);
    }

    #[test]
    fn clipping_caps_outliers() {
        let (_, s, _) = crate::distill::fixtures::fixture(3);
        let mut opt = OuterOptimizer::new();
        for _ in 0..5 {
            let mut g = MetaGradient::zeros_like(&s);
            g.lr_img = 1.0;
            opt.clip(&mut g);
        }
        let mut g = MetaGradient::zeros_like(&s);
        g.lr_img = 1000.0;
        assert_eq!(opt.clip(&mut g), 1000.0);
        assert!((g.norm() - CLIP_FACTOR).abs() < 1e-12);
    }

    #[test]
    fn phase_errors_carry_the_phase_number() {
        let (real, buffer, mut plan) = small_setup(3);
        plan.phases[0].lr_img = f64::NAN;
        assert!(matches!(
            distill_all(&plan, &buffer, &real, &mut |_| {}),
            Err(Error::Config(_)) | Err(Error::Phase { phase: 1, .. })
        ));
    }
}
