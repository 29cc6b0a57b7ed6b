use super::engine::{draw_expert, initial_subsets, matched_gradient, OuterOptimizer, PhaseResult};
use crate::datamodel::{DistillPlan, PairDataset};
use crate::error::{Error, Result};
use crate::rng;

/// Single-subset trajectory matching against the recorded teacher
/// checkpoints, without phases, shortcuts or smoothing.
pub fn lors_baseline(plan: &DistillPlan, buffer: &crate::trajectory::ExpertBuffer, real: &PairDataset) -> Result<PhaseResult> {
    if plan.phases.len() != 1 {
        return Err(Error::invalid("the baseline runs exactly one phase"));
    }
    plan.validate(buffer.epochs())?;
    let cfg = &plan.phases[0];
    let mut syn = initial_subsets(plan, real)?.remove(0);
    let mut rng = rng::rng_for(plan.seed, "phase", 0);
    let mut opt = OuterOptimizer::new();
    let mut losses = Vec::with_capacity(cfg.iteration);
    for _ in 0..cfg.iteration {
        let draw = draw_expert(&mut rng, buffer.len());
        let traj = &buffer.trajectories[draw.expert];
        let (_, loss, mut g) = matched_gradient(buffer, plan, cfg, traj, &syn, &mut rng, draw.seed)?;
        opt.clip(&mut g);
        if !g.is_finite() {
            return Err(Error::UnrollDivergence { step: cfg.syn_steps });
        }
        opt.apply(&mut syn, &g, cfg);
        losses.push(loss);
    }
    Ok(PhaseResult { dataset: syn, losses })
}
