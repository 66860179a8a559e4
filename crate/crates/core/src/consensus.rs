//! Reputation-tiered block validation.
//!
//! RSUs are ranked by reputation and cut into A (block creation), B
//! (validation) and C (broadcast) groups. Only B-level validation can fail:
//! a block is accepted while at most `floor(N/3)` of the `N` validators
//! misbehave.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::RsuId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("invalid consensus parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("no RSUs to tier")]
    NoRsus,
    #[error("B-level group is empty")]
    EmptyValidators,
    #[error("no reputation for {0}")]
    MissingReputation(RsuId),
}

pub type Result<T> = std::result::Result<T, ConsensusError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierProportions {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for TierProportions {
    fn default() -> Self {
        Self { a: 0.2, b: 0.5, c: 0.3 }
    }
}

impl TierProportions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.a, self.b, self.c];
        if parts.iter().any(|&x| !(0.0..=1.0).contains(&x)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(ConsensusError::InvalidParams {
                field: "tiers",
                reason: "proportions must lie in [0, 1] and sum to 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierAssignment {
    pub a_level: Vec<RsuId>,
    pub b_level: Vec<RsuId>,
    pub c_level: Vec<RsuId>,
    pub proportions: TierProportions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusParams {
    /// Validator group size used by the analytic sweep.
    pub delegate_count: usize,
    pub p_malicious: f64,
    pub bonus: f64,
    pub penalty: f64,
    pub tiers: TierProportions,
}

impl Default for ConsensusParams {
    fn default() -> Self {
        Self {
            delegate_count: 10,
            p_malicious: 0.2,
            bonus: 0.01,
            penalty: 0.05,
            tiers: TierProportions::default(),
        }
    }
}

impl ConsensusParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(ConsensusError::InvalidParams {
                field,
                reason: reason.to_string(),
            })
        };
        if self.delegate_count == 0 {
            return bad("delegate_count", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.p_malicious) {
            return bad("p_malicious", "must lie in [0, 1]");
        }
        if !(self.bonus >= 0.0 && self.bonus.is_finite()) {
            return bad("bonus", "must be non-negative");
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return bad("penalty", "must be non-negative");
        }
        self.tiers.validate()
    }
}

/// Group sizes by largest-remainder rounding; leftover seats go to the
/// largest fractional parts, earlier tiers first on ties.
pub fn tier_sizes(n: usize, proportions: &TierProportions) -> [usize; 3] {
    let quotas = [proportions.a, proportions.b, proportions.c].map(|p| p * n as f64);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| {
        let fi = quotas[i] - quotas[i].floor();
        let fj = quotas[j] - quotas[j].floor();
        fj.partial_cmp(&fi).unwrap().then(i.cmp(&j))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Ranks RSUs by reputation (descending, ids ascending on ties) and cuts the
/// ranking into A/B/C groups.
pub fn assign_tiers(rsus: &[(RsuId, f64)], proportions: TierProportions) -> Result<TierAssignment> {
    if rsus.is_empty() {
        return Err(ConsensusError::NoRsus);
    }
    proportions.validate()?;
    let mut ranked = rsus.to_vec();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let [a, b, _] = tier_sizes(ranked.len(), &proportions);
    let ids: Vec<RsuId> = ranked.into_iter().map(|(id, _)| id).collect();
    Ok(TierAssignment {
        a_level: ids[..a].to_vec(),
        b_level: ids[a..a + b].to_vec(),
        c_level: ids[a + b..].to_vec(),
        proportions,
    })
}

/// Probability that at most `floor(n/3)` of `n` validators are malicious.
pub fn security_probability(n: usize, p_malicious: f64) -> f64 {
    let q = 1.0 - p_malicious;
    let mut coeff = 1.0;
    let mut total = 0.0;
    for z in 0..=n / 3 {
        total += coeff * p_malicious.powi(z as i32) * q.powi((n - z) as i32);
        coeff = coeff * (n - z) as f64 / (z + 1) as f64;
    }
    total.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub accepted: bool,
    pub malicious: Vec<RsuId>,
    /// Applied change per validator after clamping.
    pub deltas: BTreeMap<RsuId, f64>,
    /// Reputations after the round.
    pub reputations: BTreeMap<RsuId, f64>,
}

/// One abstract block round. Block creation and broadcast always succeed;
/// each B-level validator misbehaves with probability `p_malicious`.
/// Honest validators gain `bonus`, malicious ones lose `penalty`.
pub fn simulate_round<R: Rng + ?Sized>(
    tiers: &TierAssignment,
    reputations: &BTreeMap<RsuId, f64>,
    params: &ConsensusParams,
    rng: &mut R,
) -> Result<RoundOutcome> {
    params.validate()?;
    if tiers.b_level.is_empty() {
        return Err(ConsensusError::EmptyValidators);
    }
    let mut updated = reputations.clone();
    let mut deltas = BTreeMap::new();
    let mut malicious = Vec::new();
    for &id in &tiers.b_level {
        let before = *reputations.get(&id).ok_or(ConsensusError::MissingReputation(id))?;
        let bad = rng.gen_bool(params.p_malicious);
        let after = if bad {
            malicious.push(id);
            (before - params.penalty).clamp(0.0, 1.0)
        } else {
            (before + params.bonus).clamp(0.0, 1.0)
        };
        updated.insert(id, after);
        deltas.insert(id, after - before);
    }
    Ok(RoundOutcome {
        accepted: malicious.len() <= tiers.b_level.len() / 3,
        malicious,
        deltas,
        reputations: updated,
    })
}

/// Fraction of `rounds` simulated rounds accepted with `n` validators.
pub fn empirical_acceptance<R: Rng + ?Sized>(n: usize, p_malicious: f64, rounds: usize, rng: &mut R) -> f64 {
    let threshold = n / 3;
    let accepted = (0..rounds)
        .filter(|_| (0..n).filter(|_| rng.gen_bool(p_malicious)).count() <= threshold)
        .count();
    accepted as f64 / rounds as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(v: &[u32]) -> Vec<RsuId> {
        v.iter().map(|&i| RsuId(i)).collect()
    }

    /// Exhaustive sum over all 2^n honest/malicious patterns.
    fn enumerate(n: usize, p: f64) -> f64 {
        (0u32..1 << n)
            .filter(|m| m.count_ones() as usize <= n / 3)
            .map(|m| {
                let k = m.count_ones() as i32;
                p.powi(k) * (1.0 - p).powi(n as i32 - k)
            })
            .sum()
    }

    #[test]
    fn security_examples() {
        for n in [1, 4, 7, 20] {
            assert_eq!(security_probability(n, 0.0), 1.0);
        }
        assert_abs_diff_eq!(security_probability(4, 0.2), 0.8192, epsilon = 1e-12);
        assert_abs_diff_eq!(security_probability(7, 0.5), 29.0 / 128.0, epsilon = 1e-12);
        for n in 1..=16 {
            for p in [0.05, 0.2, 0.3, 0.5, 0.9] {
                assert_abs_diff_eq!(security_probability(n, p), enumerate(n, p), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn tiering_examples() {
        let rsus = [(RsuId(0), 0.7), (RsuId(1), 0.9), (RsuId(2), 0.8)];
        let third = 1.0 / 3.0;
        let t = assign_tiers(&rsus, TierProportions { a: third, b: third, c: third }).unwrap();
        assert_eq!(t.a_level, ids(&[1]));
        assert_eq!(t.b_level, ids(&[2]));
        assert_eq!(t.c_level, ids(&[0]));

        let flat: Vec<_> = (0..10).rev().map(|i| (RsuId(i), 0.5)).collect();
        let t = assign_tiers(&flat, TierProportions::default()).unwrap();
        assert_eq!(t.a_level, ids(&[0, 1]));
        assert_eq!(t.b_level, ids(&[2, 3, 4, 5, 6]));
        assert_eq!(t.c_level, ids(&[7, 8, 9]));
        assert_eq!(tier_sizes(10, &TierProportions::default()), [2, 5, 3]);
    }

    #[test]
    fn largest_remainder_rounding() {
        let p = TierProportions::default();
        // quotas 1.4, 3.5, 2.1
        assert_eq!(tier_sizes(7, &p), [1, 4, 2]);
        for n in 1..50 {
            assert_eq!(tier_sizes(n, &p).iter().sum::<usize>(), n);
        }
        assert_eq!(assign_tiers(&[], p), Err(ConsensusError::NoRsus));
    }

    fn setup(n: u32) -> (TierAssignment, BTreeMap<RsuId, f64>) {
        let t = TierAssignment {
            a_level: vec![],
            b_level: ids(&(0..n).collect::<Vec<_>>()),
            c_level: vec![],
            proportions: TierProportions::default(),
        };
        let reps = (0..n).map(|i| (RsuId(i), 0.5)).collect();
        (t, reps)
    }

    #[test]
    fn honest_round_rewards_everyone() {
        let (t, reps) = setup(7);
        let params = ConsensusParams {
            p_malicious: 0.0,
            ..Default::default()
        };
        let out = simulate_round(&t, &reps, &params, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(out.accepted);
        assert!(out.malicious.is_empty());
        assert!(out.deltas.values().all(|&d| (d - 0.01).abs() < 1e-12));
    }

    #[test]
    fn malicious_round_penalises_everyone() {
        let (t, reps) = setup(4);
        let params = ConsensusParams {
            p_malicious: 1.0,
            ..Default::default()
        };
        let out = simulate_round(&t, &reps, &params, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(!out.accepted);
        assert!(out.deltas.values().all(|&d| (d + 0.05).abs() < 1e-12));
    }

    #[test]
    fn round_clamps_reputation() {
        let (t, mut reps) = setup(2);
        reps.insert(RsuId(0), 0.995);
        reps.insert(RsuId(1), 0.995);
        let params = ConsensusParams {
            p_malicious: 0.0,
            ..Default::default()
        };
        let out = simulate_round(&t, &reps, &params, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.reputations[&RsuId(0)], 1.0);
        assert_abs_diff_eq!(out.deltas[&RsuId(0)], 0.005, epsilon = 1e-12);
    }

    #[test]
    fn empty_validators_is_an_error() {
        let (mut t, reps) = setup(3);
        t.b_level.clear();
        let err = simulate_round(&t, &reps, &ConsensusParams::default(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(err, Err(ConsensusError::EmptyValidators));
    }

    #[test]
    fn round_is_deterministic_per_seed() {
        let (t, reps) = setup(10);
        let params = ConsensusParams::default();
        let a = simulate_round(&t, &reps, &params, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = simulate_round(&t, &reps, &params, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
