//! Signed-gradient descent under an L-infinity budget.

use alloc::vec::Vec;

use crate::error::Result;
use crate::tensor::Tensor3;

use super::grad::AttackSurface;
use super::loss::Objective;
use super::{AttackConfig, Perturbation, TraceStep};

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Runs `cfg.steps` updates `delta <- clamp(delta - step_size * sign(grad))`
/// starting from zero, and records the loss and proposal count after each.
pub fn bim_optimize(surface: &AttackSurface, objective: &dyn Objective, cfg: &AttackConfig) -> Result<Perturbation> {
    cfg.validate()?;
    let (c, h, w) = surface.shape();
    let mut delta = Tensor3::zeros(c, h, w);
    let budget = cfg.linf_budget;
    let mut eval = surface.evaluate(&delta, objective, true)?;
    let initial = TraceStep { loss: eval.loss, pre_nms_count: eval.pre_nms_count };
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let grad = eval.grad.take().expect("gradient requested");
        for (d, g) in delta.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *d = (*d - cfg.step_size * sign(*g)).clamp(-budget, budget);
        }
        let last = step + 1 == cfg.steps;
        eval = surface.evaluate(&delta, objective, !last)?;
        trace.push(TraceStep { loss: eval.loss, pre_nms_count: eval.pre_nms_count });
    }
    Ok(Perturbation { delta, initial, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::AnchorConfig;
    use crate::attack::loss::CpFreezerLoss;
    use crate::head::HeadWeights;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> (Vec<Tensor3>, Tensor3, HeadWeights, AnchorConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |c, h, w| Tensor3::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0));
        let others = vec![t(3, 5, 5)];
        let attacker = t(3, 5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let mut head = HeadWeights::zeros(3, 2, 3).unwrap();
        head.weights_mut().iter_mut().for_each(|w| *w = rng.random_range(-0.5..0.5));
        head.biases_mut().iter_mut().for_each(|b| *b = rng.random_range(-2.0..0.0));
        (others, attacker, head, AnchorConfig::car_default(0.4))
    }

    #[test]
    fn budget_is_respected_after_every_step() {
        let (others, attacker, head, anchors) = instance(5);
        let surface = AttackSurface::new(&others, &attacker, &head, &anchors);
        for (steps, budget) in [(10, 1.0), (12, 0.25), (3, 0.05)] {
            let cfg = AttackConfig { steps, linf_budget: budget, ..AttackConfig::default() };
            let p = bim_optimize(&surface, &CpFreezerLoss { cfg }, &cfg).unwrap();
            assert!(p.linf() <= budget + 1e-12);
            assert_eq!(p.trace.len(), steps);
            assert!(p.delta.is_finite());
        }
    }

    #[test]
    fn one_step_is_one_signed_update() {
        let (others, attacker, head, anchors) = instance(8);
        let surface = AttackSurface::new(&others, &attacker, &head, &anchors);
        let cfg = AttackConfig { steps: 1, ..AttackConfig::default() };
        let obj = CpFreezerLoss { cfg };
        let p = bim_optimize(&surface, &obj, &cfg).unwrap();
        let g = surface.evaluate(&Tensor3::zeros(3, 5, 5), &obj, true).unwrap().grad.unwrap();
        for (d, g) in p.delta.as_slice().iter().zip(g.as_slice()) {
            assert_eq!(*d, -0.1 * sign(*g));
        }
    }

    #[test]
    fn zero_steps_rejected() {
        let (others, attacker, head, anchors) = instance(1);
        let surface = AttackSurface::new(&others, &attacker, &head, &anchors);
        let cfg = AttackConfig { steps: 0, ..AttackConfig::default() };
        assert!(bim_optimize(&surface, &CpFreezerLoss { cfg }, &cfg).is_err());
    }

    #[test]
    fn deterministic() {
        let (others, attacker, head, anchors) = instance(2);
        let surface = AttackSurface::new(&others, &attacker, &head, &anchors);
        let cfg = AttackConfig::default();
        let a = bim_optimize(&surface, &CpFreezerLoss { cfg }, &cfg).unwrap();
        let b = bim_optimize(&surface, &CpFreezerLoss { cfg }, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
