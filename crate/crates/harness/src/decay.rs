//! Reputation of a single RSU that turns unreliable.
//!
//! Before `onset` every VMU sees the same positive history, tuned so the
//! RSU's fused reputation equals `initial_reputation` just before the switch.
//! From `onset` on the RSU keeps serving a seeded share of VMUs well and gives
//! everyone else a growing number of negative interactions per window.

use rand::seq::SliceRandom;
use vtmig_core::reputation::{Attenuation, InteractionTable, ReputationEngine};
use vtmig_core::{RsuId, VmuId};

use crate::config::ScenarioConfig;
use crate::error::HarnessError;
use crate::scenario::{stream, TAG_DECAY};

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub t: i64,
    /// Freshness-weighted local opinions fused with recommendations.
    pub fresh: f64,
    /// Same without freshness: every window in the period weighs 1.
    pub flat: f64,
    /// Local opinion only, as seen by a well-served VMU.
    pub local_only: f64,
    /// Cumulative beta estimate `(P + 1) / (P + Q + 2)` for the same VMU,
    /// with no forgetting and no recommendations.
    pub no_protection: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRun {
    pub initial_rate: f64,
    pub positive: Vec<bool>,
    pub tracked_vmu: usize,
    pub rows: Vec<DecayRow>,
}

impl DecayRun {
    /// First time step at which `column` drops below `threshold`.
    pub fn crossing(&self, threshold: f64, column: impl Fn(&DecayRow) -> f64) -> Option<i64> {
        self.rows.iter().find(|r| column(r) < threshold).map(|r| r.t)
    }
}

/// Which VMUs the RSU keeps treating well.
pub fn positive_vmus(cfg: &ScenarioConfig) -> Vec<bool> {
    let d = &cfg.experiments.reputation_decay;
    let mut order: Vec<usize> = (0..d.vmus).collect();
    order.shuffle(&mut stream(cfg.seed, &[TAG_DECAY]));
    let count = (d.positive_share * d.vmus as f64).round() as usize;
    let mut mask = vec![false; d.vmus];
    for &v in &order[..count] {
        mask[v] = true;
    }
    mask
}

/// Interaction table with windows `0..=upto`.
pub fn history(cfg: &ScenarioConfig, initial_rate: f64, positive: &[bool], upto: i64) -> InteractionTable {
    let d = &cfg.experiments.reputation_decay;
    let mut table = InteractionTable::new((0..d.vmus as u32).map(VmuId).collect(), vec![RsuId(0)]);
    for (v, &good) in positive.iter().enumerate() {
        for t in 0..=upto {
            let (p, q) = if t < d.onset {
                (initial_rate, 0.0)
            } else if good {
                (d.positive_rate, 0.0)
            } else {
                (0.0, d.negative_ramp * (t - d.onset + 1) as f64)
            };
            table.record(v, 0, t, p, q).expect("windows are generated in order");
        }
    }
    table
}

fn engine(cfg: &ScenarioConfig) -> ReputationEngine {
    ReputationEngine::new(cfg.reputation_params()).expect("validated config")
}

/// Positive interactions per window that give the target reputation at
/// `onset - 1`, found by bisection.
pub fn calibrate_initial_rate(cfg: &ScenarioConfig) -> Result<f64, HarnessError> {
    let d = &cfg.experiments.reputation_decay;
    let positive = vec![true; d.vmus];
    let engine = engine(cfg);
    let now = d.onset - 1;
    let rep = |rate: f64| engine.evaluate_rsu(&history(cfg, rate, &positive, now), 0, now).rsu_final;
    let (mut lo, mut hi) = (0.0, cfg.population.positive_max);
    if !(rep(lo) <= d.initial_reputation && rep(hi) >= d.initial_reputation) {
        return Err(HarnessError::Sweep {
            experiment: "reputation-decay",
            coords: format!("t={now}"),
            message: format!(
                "initial reputation {} is outside the reachable range [{:.4}, {:.4}]",
                d.initial_reputation,
                rep(lo),
                rep(hi)
            ),
        });
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rep(mid) < d.initial_reputation {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn run_decay(cfg: &ScenarioConfig) -> Result<DecayRun, HarnessError> {
    let d = &cfg.experiments.reputation_decay;
    let initial_rate = calibrate_initial_rate(cfg)?;
    let positive = positive_vmus(cfg);
    let tracked_vmu = positive.iter().position(|&g| g).unwrap_or(0);

    let fresh = engine(cfg);
    let flat = engine(cfg).with_attenuation(Attenuation::Flat);
    let local = engine(cfg).without_recommendations();
    let full = history(cfg, initial_rate, &positive, d.horizon);

    let mut rows = Vec::new();
    let (mut cum_p, mut cum_q) = (0.0, 0.0);
    for t in 0..=d.horizon {
        let table = history(cfg, initial_rate, &positive, t);
        let rec = full.log(tracked_vmu, 0).records()[t as usize];
        cum_p += rec.positives;
        cum_q += rec.negatives;
        rows.push(DecayRow {
            t,
            fresh: fresh.evaluate_rsu(&table, 0, t).rsu_final,
            flat: flat.evaluate_rsu(&table, 0, t).rsu_final,
            local_only: local.evaluate_rsu(&table, 0, t).per_vmu_final[&VmuId(tracked_vmu as u32)],
            no_protection: (cum_p + 1.0) / (cum_p + cum_q + 2.0),
        });
    }
    Ok(DecayRun {
        initial_rate,
        positive,
        tracked_vmu,
        rows,
    })
}
