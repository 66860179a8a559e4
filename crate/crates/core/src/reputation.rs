//! Subjective-logic reputation of RSUs as seen by vehicular users.
//!
//! Each VMU keeps a per-window opinion about every RSU it interacted with.
//! Windows inside the effective period are combined into a local opinion
//! using a time attenuation weight, other VMUs' local opinions are pooled
//! into a recommended opinion weighted by their familiarity with the RSU,
//! and the two are fused into the VMU's final opinion. An RSU's reputation
//! is the mean expectation of the final opinions held by all VMUs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{RsuId, VmuId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReputationError {
    #[error("invalid reputation parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("invalid opinion ({b}, {d}, {u}, {a}): {reason}")]
    InvalidOpinion {
        b: f64,
        d: f64,
        u: f64,
        a: f64,
        reason: &'static str,
    },
    #[error("interaction counts must be finite and non-negative (got p={positives}, q={negatives})")]
    InvalidCounts { positives: f64, negatives: f64 },
    #[error("interaction at t={time} is not after the previous window t={last}")]
    NonIncreasingTime { time: i64, last: i64 },
    #[error("event at t={event} lies in the future of t={now}")]
    FutureEvent { event: i64, now: i64 },
    #[error("event at t={event} is older than the effective period ending at t={now}")]
    StaleEvent { event: i64, now: i64 },
    #[error("no interactions inside the effective period")]
    NoEvidence,
    #[error("recommender has no interactions with any RSU inside the effective period")]
    UndefinedFamiliarity,
    #[error("no recommenders available")]
    NoRecommenders,
    #[error("recommendation weight must be positive and finite (got {0})")]
    InvalidWeight(f64),
    #[error("cannot fuse two dogmatic opinions (both uncertainties are zero)")]
    DegenerateFusion,
}

pub type Result<T> = std::result::Result<T, ReputationError>;

/// A binomial subjective-logic opinion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Opinion {
    pub belief: f64,
    pub disbelief: f64,
    pub uncertainty: f64,
    pub base_rate: f64,
}

impl Opinion {
    /// Tolerance on `b + d + u = 1`.
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(belief: f64, disbelief: f64, uncertainty: f64, base_rate: f64) -> Result<Self> {
        let bad = |reason| ReputationError::InvalidOpinion {
            b: belief,
            d: disbelief,
            u: uncertainty,
            a: base_rate,
            reason,
        };
        for v in [belief, disbelief, uncertainty, base_rate] {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad("component outside [0, 1]"));
            }
        }
        if (belief + disbelief + uncertainty - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(bad("belief + disbelief + uncertainty must equal 1"));
        }
        Ok(Self {
            belief,
            disbelief,
            uncertainty,
            base_rate,
        })
    }

    /// Opinion with no evidence at all.
    pub fn vacuous(base_rate: f64) -> Self {
        Self {
            belief: 0.0,
            disbelief: 0.0,
            uncertainty: 1.0,
            base_rate,
        }
    }

    pub fn is_vacuous(&self) -> bool {
        self.belief == 0.0 && self.disbelief == 0.0 && self.uncertainty == 1.0
    }

    /// Probability expectation `b + a * u`.
    pub fn expectation(&self) -> f64 {
        self.belief + self.base_rate * self.uncertainty
    }

    fn with_base_rate(mut self, base_rate: f64) -> Self {
        self.base_rate = base_rate;
        self
    }
}

/// Scalar reputation carried by an opinion.
pub fn expectation(op: &Opinion) -> f64 {
    op.expectation()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationParams {
    /// Weight of positive interactions.
    pub delta1: f64,
    /// Weight of negative interactions.
    pub delta2: f64,
    /// Uncertainty rate.
    pub xi: f64,
    /// Attenuation coefficient.
    pub theta: f64,
    /// Attenuation constant.
    pub c: f64,
    /// Effective period in windows.
    pub tau: u32,
    /// Default base rate of every opinion.
    pub base_rate: f64,
    /// Recommendation reputation parameter applied to every recommender.
    pub rho: f64,
}

impl Default for ReputationParams {
    fn default() -> Self {
        Self {
            delta1: 0.5,
            delta2: 0.5,
            xi: 1.0,
            theta: 0.5,
            c: 1.0,
            tau: 10,
            base_rate: 0.5,
            rho: 0.5,
        }
    }
}

impl ReputationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(ReputationError::InvalidParams {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.delta1 > 0.0 && self.delta1 < 1.0) {
            return bad("delta1", "must lie in (0, 1)");
        }
        if !(self.delta2 > 0.0 && self.delta2 < 1.0) {
            return bad("delta2", "must lie in (0, 1)");
        }
        if self.delta1 > self.delta2 {
            return bad("delta1", "must not exceed delta2");
        }
        if (self.delta1 + self.delta2 - 1.0).abs() > 1e-9 {
            return bad("delta2", "delta1 + delta2 must equal 1");
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return bad("xi", "must be positive");
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad("theta", "must lie in (0, 1)");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("c", "must be positive");
        }
        if self.tau < 1 {
            return bad("tau", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.base_rate) {
            return bad("base_rate", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho", "must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Interaction frequencies observed in one time window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub time: i64,
    pub positives: f64,
    pub negatives: f64,
}

impl InteractionRecord {
    pub fn total(&self) -> f64 {
        self.positives + self.negatives
    }
}

fn check_counts(positives: f64, negatives: f64) -> Result<()> {
    if positives >= 0.0 && negatives >= 0.0 && positives.is_finite() && negatives.is_finite() {
        Ok(())
    } else {
        Err(ReputationError::InvalidCounts {
            positives,
            negatives,
        })
    }
}

/// Windowed interaction history between one VMU and one RSU.
///
/// Counts are interaction frequencies and may be fractional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub vmu_id: VmuId,
    pub rsu_id: RsuId,
    records: Vec<InteractionRecord>,
}

impl InteractionLog {
    pub fn new(vmu_id: VmuId, rsu_id: RsuId) -> Self {
        Self {
            vmu_id,
            rsu_id,
            records: Vec::new(),
        }
    }

    /// Appends a window. Window times must be strictly increasing.
    pub fn record(&mut self, time: i64, positives: f64, negatives: f64) -> Result<()> {
        check_counts(positives, negatives)?;
        if let Some(last) = self.records.last() {
            if time <= last.time {
                return Err(ReputationError::NonIncreasingTime {
                    time,
                    last: last.time,
                });
            }
        }
        self.records.push(InteractionRecord {
            time,
            positives,
            negatives,
        });
        Ok(())
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    /// Records with `now - tau <= time <= now`.
    pub fn effective(&self, now: i64, tau: u32) -> impl Iterator<Item = &InteractionRecord> {
        let start = now - i64::from(tau);
        self.records
            .iter()
            .filter(move |r| r.time >= start && r.time <= now)
    }

    /// `IN = p + q` summed over the effective period.
    pub fn interactions_within(&self, now: i64, tau: u32) -> f64 {
        self.effective(now, tau).map(InteractionRecord::total).sum()
    }
}

/// Opinion formed from a single window's interaction counts.
pub fn window_opinion(positives: f64, negatives: f64, params: &ReputationParams) -> Result<Opinion> {
    params.validate()?;
    check_counts(positives, negatives)?;
    Ok(window_opinion_unchecked(positives, negatives, params))
}

fn window_opinion_unchecked(positives: f64, negatives: f64, params: &ReputationParams) -> Opinion {
    let pos = params.delta1 * positives;
    let neg = params.delta2 * negatives;
    let total = pos + neg + params.xi;
    Opinion {
        belief: pos / total,
        disbelief: neg / total,
        uncertainty: params.xi / total,
        base_rate: params.base_rate,
    }
}

/// Freshness weight `c / (c + theta * (now - t))` of a past event.
pub fn attenuation_weight(event_time: i64, now: i64, params: &ReputationParams) -> Result<f64> {
    if event_time > now {
        return Err(ReputationError::FutureEvent {
            event: event_time,
            now,
        });
    }
    if now - event_time > i64::from(params.tau) {
        return Err(ReputationError::StaleEvent {
            event: event_time,
            now,
        });
    }
    Ok(freshness(now - event_time, params))
}

fn freshness(age: i64, params: &ReputationParams) -> f64 {
    params.c / (params.c + params.theta * age as f64)
}

/// How past windows are weighted when forming a local opinion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Attenuation {
    /// Recent windows dominate via [`attenuation_weight`].
    #[default]
    Freshness,
    /// Every window in the effective period counts equally.
    Flat,
}

/// Freshness-weighted local opinion of the log's VMU about its RSU.
pub fn local_opinion(log: &InteractionLog, now: i64, params: &ReputationParams) -> Result<Opinion> {
    local_opinion_with(log, now, params, Attenuation::Freshness)
}

pub fn local_opinion_with(
    log: &InteractionLog,
    now: i64,
    params: &ReputationParams,
    attenuation: Attenuation,
) -> Result<Opinion> {
    params.validate()?;
    local_opinion_unchecked(log, now, params, attenuation)
}

fn local_opinion_unchecked(
    log: &InteractionLog,
    now: i64,
    params: &ReputationParams,
    attenuation: Attenuation,
) -> Result<Opinion> {
    let (mut b, mut d, mut u, mut total) = (0.0, 0.0, 0.0, 0.0);
    for rec in log.effective(now, params.tau) {
        let w = match attenuation {
            Attenuation::Freshness => freshness(now - rec.time, params),
            Attenuation::Flat => 1.0,
        };
        let op = window_opinion_unchecked(rec.positives, rec.negatives, params);
        b += w * op.belief;
        d += w * op.disbelief;
        u += w * op.uncertainty;
        total += w;
    }
    if total == 0.0 {
        return Err(ReputationError::NoEvidence);
    }
    Ok(Opinion {
        belief: b / total,
        disbelief: d / total,
        uncertainty: u / total,
        base_rate: params.base_rate,
    })
}

/// Ratio of interactions with `target` to the recommender's mean interaction
/// count over all `rsu_count` RSUs.
pub fn familiarity(
    recommender_logs: &[InteractionLog],
    target: RsuId,
    rsu_count: usize,
    now: i64,
    tau: u32,
) -> Result<f64> {
    let mut with_target = 0.0;
    let mut total = 0.0;
    for log in recommender_logs {
        let n = log.interactions_within(now, tau);
        if log.rsu_id == target {
            with_target += n;
        }
        total += n;
    }
    familiarity_from_counts(with_target, total, rsu_count)
}

pub fn familiarity_from_counts(with_target: f64, total: f64, rsu_count: usize) -> Result<f64> {
    if total <= 0.0 || rsu_count == 0 {
        return Err(ReputationError::UndefinedFamiliarity);
    }
    Ok(with_target / (total / rsu_count as f64))
}

/// Pools recommenders' local opinions, each weighted by `gamma = rho * F`.
pub fn recommended_opinion(local_opinions: &[(Opinion, f64)], base_rate: f64) -> Result<Opinion> {
    if local_opinions.is_empty() {
        return Err(ReputationError::NoRecommenders);
    }
    let (mut b, mut d, mut u, mut total) = (0.0, 0.0, 0.0, 0.0);
    for &(op, gamma) in local_opinions {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(ReputationError::InvalidWeight(gamma));
        }
        b += gamma * op.belief;
        d += gamma * op.disbelief;
        u += gamma * op.uncertainty;
        total += gamma;
    }
    Ok(Opinion {
        belief: b / total,
        disbelief: d / total,
        uncertainty: u / total,
        base_rate,
    })
}

/// Consensus fusion of the local and recommended opinions. The result keeps
/// the local base rate.
pub fn fuse_opinions(local: &Opinion, recommended: &Opinion) -> Result<Opinion> {
    // the vacuous opinion is the neutral element; return it bit-exact
    if recommended.is_vacuous() {
        return Ok(*local);
    }
    if local.is_vacuous() {
        return Ok(recommended.with_base_rate(local.base_rate));
    }
    let (ul, ur) = (local.uncertainty, recommended.uncertainty);
    if ul == 0.0 && ur == 0.0 {
        return Err(ReputationError::DegenerateFusion);
    }
    let k = ul + ur - ul * ur;
    Ok(Opinion {
        belief: (local.belief * ur + recommended.belief * ul) / k,
        disbelief: (local.disbelief * ur + recommended.disbelief * ul) / k,
        uncertainty: ul * ur / k,
        base_rate: local.base_rate,
    })
}

/// Final opinion of a VMU. Without recommendations, or when both opinions are
/// dogmatic, the local opinion stands.
pub fn final_opinion(local: &Opinion, recommended: Option<&Opinion>) -> Opinion {
    match recommended {
        None => *local,
        Some(rec) => match fuse_opinions(local, rec) {
            Ok(op) => op,
            Err(_) => {
                log::warn!("dogmatic local and recommended opinions; keeping local opinion");
                *local
            }
        },
    }
}

/// Mean of the per-VMU final reputations.
pub fn rsu_reputation(per_vmu_finals: &[f64]) -> Result<f64> {
    if per_vmu_finals.is_empty() {
        return Err(ReputationError::NoEvidence);
    }
    Ok(per_vmu_finals.iter().sum::<f64>() / per_vmu_finals.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationReport {
    pub rsu_id: RsuId,
    pub per_vmu_final: BTreeMap<VmuId, f64>,
    pub rsu_final: f64,
}

/// Dense VMU x RSU table of interaction logs.
#[derive(Debug, Clone)]
pub struct InteractionTable {
    vmus: Vec<VmuId>,
    rsus: Vec<RsuId>,
    logs: Vec<InteractionLog>,
}

impl InteractionTable {
    pub fn new(vmus: Vec<VmuId>, rsus: Vec<RsuId>) -> Self {
        let mut logs = Vec::with_capacity(vmus.len() * rsus.len());
        for &v in &vmus {
            for &r in &rsus {
                logs.push(InteractionLog::new(v, r));
            }
        }
        Self { vmus, rsus, logs }
    }

    pub fn vmus(&self) -> &[VmuId] {
        &self.vmus
    }

    pub fn rsus(&self) -> &[RsuId] {
        &self.rsus
    }

    /// Log by VMU index and RSU index.
    pub fn log(&self, vmu: usize, rsu: usize) -> &InteractionLog {
        &self.logs[vmu * self.rsus.len() + rsu]
    }

    pub fn record(
        &mut self,
        vmu: usize,
        rsu: usize,
        time: i64,
        positives: f64,
        negatives: f64,
    ) -> Result<()> {
        let idx = vmu * self.rsus.len() + rsu;
        self.logs[idx].record(time, positives, negatives)
    }

    /// Logs of one VMU across every RSU.
    pub fn vmu_logs(&self, vmu: usize) -> &[InteractionLog] {
        let r = self.rsus.len();
        &self.logs[vmu * r..(vmu + 1) * r]
    }
}

/// Evaluates final reputations of RSUs from an [`InteractionTable`].
#[derive(Debug, Clone)]
pub struct ReputationEngine {
    params: ReputationParams,
    attenuation: Attenuation,
    recommendations: bool,
}

impl ReputationEngine {
    pub fn new(params: ReputationParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            attenuation: Attenuation::Freshness,
            recommendations: true,
        })
    }

    pub fn with_attenuation(mut self, attenuation: Attenuation) -> Self {
        self.attenuation = attenuation;
        self
    }

    /// Disables recommended opinions so every VMU relies on its local view.
    pub fn without_recommendations(mut self) -> Self {
        self.recommendations = false;
        self
    }

    pub fn params(&self) -> &ReputationParams {
        &self.params
    }

    pub fn evaluate(&self, table: &InteractionTable, now: i64) -> Vec<ReputationReport> {
        let activity = self.activity(table, now);
        (0..table.rsus.len())
            .map(|r| self.evaluate_rsu_with(table, r, now, &activity))
            .collect()
    }

    /// Report for the RSU at index `rsu`.
    pub fn evaluate_rsu(&self, table: &InteractionTable, rsu: usize, now: i64) -> ReputationReport {
        let activity = self.activity(table, now);
        self.evaluate_rsu_with(table, rsu, now, &activity)
    }

    /// Total interactions of every VMU across all RSUs in the effective period.
    pub fn activity(&self, table: &InteractionTable, now: i64) -> Vec<f64> {
        (0..table.vmus.len())
            .map(|v| {
                table
                    .vmu_logs(v)
                    .iter()
                    .map(|l| l.interactions_within(now, self.params.tau))
                    .sum()
            })
            .collect()
    }

    pub fn evaluate_rsu_with(
        &self,
        table: &InteractionTable,
        rsu: usize,
        now: i64,
        activity: &[f64],
    ) -> ReputationReport {
        let p = &self.params;
        let rsu_count = table.rsus.len();
        let locals: Vec<Option<Opinion>> = (0..table.vmus.len())
            .map(|v| local_opinion_unchecked(table.log(v, rsu), now, p, self.attenuation).ok())
            .collect();
        // gamma_m = rho * F_{m:r}; zero-familiarity recommenders carry no weight
        let gammas: Vec<f64> = (0..table.vmus.len())
            .map(|m| {
                let with_target = table.log(m, rsu).interactions_within(now, p.tau);
                familiarity_from_counts(with_target, activity[m], rsu_count)
                    .map(|f| p.rho * f)
                    .unwrap_or(0.0)
            })
            .collect();

        let mut per_vmu_final = BTreeMap::new();
        let mut pool = Vec::with_capacity(table.vmus.len());
        for (v, &vmu) in table.vmus.iter().enumerate() {
            let local = locals[v].unwrap_or_else(|| Opinion::vacuous(p.base_rate));
            let recommended = if self.recommendations {
                pool.clear();
                pool.extend(
                    locals
                        .iter()
                        .zip(&gammas)
                        .enumerate()
                        .filter(|&(m, (op, &g))| m != v && op.is_some() && g > 0.0)
                        .map(|(_, (op, &g))| (op.unwrap(), g)),
                );
                recommended_opinion(&pool, p.base_rate).ok()
            } else {
                None
            };
            let fin = final_opinion(&local, recommended.as_ref());
            per_vmu_final.insert(vmu, fin.expectation());
        }
        let finals: Vec<f64> = per_vmu_final.values().copied().collect();
        let rsu_final = rsu_reputation(&finals).unwrap_or(p.base_rate);
        ReputationReport {
            rsu_id: table.rsus[rsu],
            per_vmu_final,
            rsu_final,
        }
    }
}
