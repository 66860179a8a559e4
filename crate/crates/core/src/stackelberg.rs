//! Single-leader, multi-follower bandwidth market.
//!
//! The winning RSU coalition posts a unit price `P`; each VMU answers with the
//! bandwidth that maximises `alpha * ln(1 + 1/A) - P * B`, where `A` is its
//! migration latency. The leader picks `P` to maximise `sum (P - C) * B`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelParams;
use crate::ids::VmuId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("invalid market parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("invalid VMU profile {id}: {reason}")]
    InvalidProfile { id: VmuId, reason: String },
    #[error("no VMU profiles")]
    NoProfiles,
    #[error("zero bandwidth gives unbounded latency")]
    Infeasible,
    #[error("total demand {demand} exceeds available bandwidth {available}")]
    ConstraintViolation { demand: f64, available: f64 },
}

pub type Result<T> = std::result::Result<T, MarketError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmuProfile {
    pub id: VmuId,
    /// Latency sensitivity in (0, 1).
    pub alpha: f64,
    /// VT data size, Mb.
    pub data_size: f64,
}

impl VmuProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MarketError::InvalidProfile {
                id: self.id,
                reason: format!("alpha {} outside (0, 1)", self.alpha),
            });
        }
        if !(self.data_size >= 0.0 && self.data_size.is_finite()) {
            return Err(MarketError::InvalidProfile {
                id: self.id,
                reason: format!("data size {} is negative", self.data_size),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Unit cost of bandwidth to the coalition.
    pub cost: f64,
    pub price_max: f64,
    /// Bandwidth the coalition can sell, MHz.
    pub bandwidth_max: f64,
    pub compression: f64,
    pub channel: ChannelParams,
    /// Price grid step; `None` means 1% of the price range.
    pub grid_step: Option<f64>,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            cost: 5.0,
            price_max: 100.0,
            bandwidth_max: 100.0,
            compression: 0.5,
            channel: ChannelParams::default(),
            grid_step: None,
        }
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(MarketError::InvalidParams {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.cost > 0.0 && self.cost.is_finite()) {
            return bad("cost", "must be positive");
        }
        if !(self.price_max >= self.cost && self.price_max.is_finite()) {
            return bad("price_max", "must be at least the cost");
        }
        if !(self.bandwidth_max > 0.0) {
            return bad("bandwidth_max", "must be positive");
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad("compression", "must lie in (0, 1]");
        }
        if let Some(step) = self.grid_step {
            if !(step > 0.0 && step.is_finite()) {
                return bad("grid_step", "must be positive");
            }
        }
        if let Err(reason) = self.channel.validate() {
            return bad("channel", &reason);
        }
        Ok(())
    }

    /// Effective grid step.
    pub fn step(&self) -> f64 {
        match self.grid_step {
            Some(s) => s,
            None if self.price_max > self.cost => 0.01 * (self.price_max - self.cost),
            None => 1.0,
        }
    }

    pub fn efficiency(&self) -> f64 {
        self.channel.spectral_efficiency()
    }

    /// `D * lambda / K`: the demand offset of one VMU.
    fn offset(&self, profile: &VmuProfile, k: f64) -> f64 {
        profile.data_size * self.compression / k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarketStatus {
    Cleared,
    /// No scanned price was feasible; nobody trades.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketOutcome {
    pub price: f64,
    pub demands: BTreeMap<VmuId, f64>,
    pub leader_utility: f64,
    pub follower_utilities: BTreeMap<VmuId, f64>,
    pub grid_step: f64,
    pub status: MarketStatus,
}

impl MarketOutcome {
    pub fn total_demand(&self) -> f64 {
        self.demands.values().sum()
    }
}

/// `D * lambda / (B * K)`, seconds.
pub fn migration_latency(profile: &VmuProfile, bandwidth: f64, market: &MarketParams) -> Result<f64> {
    if !(bandwidth > 0.0) {
        return Err(MarketError::Infeasible);
    }
    Ok(profile.data_size * market.compression / (bandwidth * market.efficiency()))
}

fn utility_with_offset(alpha: f64, offset: f64, bandwidth: f64, price: f64) -> f64 {
    if bandwidth <= 0.0 {
        return 0.0;
    }
    // ln(1 + 1/A) = ln(1 + B / offset)
    let gain = if offset == 0.0 {
        f64::INFINITY
    } else {
        (bandwidth / offset).ln_1p()
    };
    alpha * gain - price * bandwidth
}

/// Follower utility; zero bandwidth is an opt-out worth 0.
pub fn vmu_utility(profile: &VmuProfile, bandwidth: f64, price: f64, market: &MarketParams) -> f64 {
    let k = market.efficiency();
    utility_with_offset(profile.alpha, market.offset(profile, k), bandwidth, price)
}

/// Analytic `dU_v/dB = alpha / (offset + B) - P`.
pub fn vmu_utility_derivative(profile: &VmuProfile, bandwidth: f64, price: f64, market: &MarketParams) -> f64 {
    let offset = market.offset(profile, market.efficiency());
    profile.alpha / (offset + bandwidth) - price
}

fn best_response_with_offset(alpha: f64, offset: f64, price: f64) -> f64 {
    (alpha / price - offset).max(0.0)
}

/// `max(0, alpha / P - D * lambda / K)`.
pub fn best_response(profile: &VmuProfile, price: f64, market: &MarketParams) -> f64 {
    best_response_with_offset(profile.alpha, market.offset(profile, market.efficiency()), price)
}

/// `sum (P - C) * B_v`, rejecting demand above the coalition's bandwidth.
pub fn leader_utility(price: f64, demands: &[f64], market: &MarketParams) -> Result<f64> {
    let total: f64 = demands.iter().sum();
    if total > market.bandwidth_max {
        return Err(MarketError::ConstraintViolation {
            demand: total,
            available: market.bandwidth_max,
        });
    }
    Ok((price - market.cost) * total)
}

/// Leader utility with every follower at its best response, ignoring the
/// bandwidth cap.
pub fn leader_utility_at(price: f64, profiles: &[VmuProfile], market: &MarketParams) -> f64 {
    let k = market.efficiency();
    profiles
        .iter()
        .map(|p| (price - market.cost) * best_response_with_offset(p.alpha, market.offset(p, k), price))
        .sum()
}

/// Analytic `dU_r/dP` when every follower participates:
/// `C * sum(alpha) / P^2 - sum(offset)`.
pub fn leader_utility_derivative(price: f64, profiles: &[VmuProfile], market: &MarketParams) -> f64 {
    let k = market.efficiency();
    let sum_alpha: f64 = profiles.iter().map(|p| p.alpha).sum();
    let sum_offset: f64 = profiles.iter().map(|p| market.offset(p, k)).sum();
    market.cost * sum_alpha / (price * price) - sum_offset
}

fn validate_inputs(profiles: &[VmuProfile], market: &MarketParams) -> Result<()> {
    market.validate()?;
    if profiles.is_empty() {
        return Err(MarketError::NoProfiles);
    }
    profiles.iter().try_for_each(VmuProfile::validate)
}

fn empty_outcome(profiles: &[VmuProfile], market: &MarketParams) -> MarketOutcome {
    MarketOutcome {
        price: market.price_max,
        demands: profiles.iter().map(|p| (p.id, 0.0)).collect(),
        leader_utility: 0.0,
        follower_utilities: profiles.iter().map(|p| (p.id, 0.0)).collect(),
        grid_step: market.step(),
        status: MarketStatus::Empty,
    }
}

/// Price grid `C, C + phi, ...` up to `P_max`.
pub fn price_grid(market: &MarketParams) -> Vec<f64> {
    let step = market.step();
    let n = ((market.price_max - market.cost) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| market.cost + i as f64 * step).collect()
}

/// Scans the price grid and keeps the feasible price with the highest leader
/// utility (lowest price on ties).
///
/// A price is feasible when total demand fits in `bandwidth_max` and every
/// participating follower gets positive utility. Prices earning the leader
/// nothing are never chosen; if no price earns anything the market is empty.
pub fn solve_grid(profiles: &[VmuProfile], market: &MarketParams) -> Result<MarketOutcome> {
    validate_inputs(profiles, market)?;
    let k = market.efficiency();
    let offsets: Vec<f64> = profiles.iter().map(|p| market.offset(p, k)).collect();
    let mut best: Option<(f64, f64)> = None;
    for price in price_grid(market) {
        let mut total = 0.0;
        let mut guard_ok = true;
        for (p, &off) in profiles.iter().zip(&offsets) {
            let b = best_response_with_offset(p.alpha, off, price);
            if b > 0.0 && utility_with_offset(p.alpha, off, b, price) <= 0.0 {
                guard_ok = false;
                break;
            }
            total += b;
        }
        if !guard_ok || total > market.bandwidth_max {
            continue;
        }
        let u = (price - market.cost) * total;
        if u > 0.0 && best.is_none_or(|(_, bu)| u > bu) {
            best = Some((price, u));
        }
    }
    let Some((price, leader)) = best else {
        return Ok(empty_outcome(profiles, market));
    };
    let mut demands = BTreeMap::new();
    let mut follower_utilities = BTreeMap::new();
    for (p, &off) in profiles.iter().zip(&offsets) {
        let b = best_response_with_offset(p.alpha, off, price);
        demands.insert(p.id, b);
        follower_utilities.insert(p.id, utility_with_offset(p.alpha, off, b, price));
    }
    Ok(MarketOutcome {
        price,
        demands,
        leader_utility: leader,
        follower_utilities,
        grid_step: market.step(),
        status: MarketStatus::Cleared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriceRegime {
    Interior,
    ClippedLow,
    ClippedHigh,
    /// Some follower opts out at the stationary point, so the formula, which
    /// assumes everyone buys, does not give the optimum.
    PartialParticipation,
    /// No data to move: demand never falls with price, so the leader would
    /// raise it without bound.
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormPrice {
    pub price: f64,
    pub regime: PriceRegime,
}

/// Stationary point `sqrt(C * K * sum(alpha) / (lambda * sum(D)))`, clipped
/// into `[C, P_max]`. Valid while every follower participates.
pub fn closed_form_price(profiles: &[VmuProfile], market: &MarketParams) -> Result<ClosedFormPrice> {
    validate_inputs(profiles, market)?;
    let sum_alpha: f64 = profiles.iter().map(|p| p.alpha).sum();
    let sum_data: f64 = profiles.iter().map(|p| p.data_size).sum();
    if sum_data == 0.0 {
        return Ok(ClosedFormPrice {
            price: market.price_max,
            regime: PriceRegime::Unbounded,
        });
    }
    let raw = (market.cost * market.efficiency() * sum_alpha / (market.compression * sum_data)).sqrt();
    let out = if raw < market.cost {
        ClosedFormPrice {
            price: market.cost,
            regime: PriceRegime::ClippedLow,
        }
    } else if raw > market.price_max {
        ClosedFormPrice {
            price: market.price_max,
            regime: PriceRegime::ClippedHigh,
        }
    } else if profiles.iter().any(|p| best_response(p, raw, market) <= 0.0) || fewer_buyers_pay_more(raw, profiles, market) {
        ClosedFormPrice {
            price: raw,
            regime: PriceRegime::PartialParticipation,
        }
    } else {
        ClosedFormPrice {
            price: raw,
            regime: PriceRegime::Interior,
        }
    };
    Ok(out)
}

/// Whether some price above the opt-out point of a follower beats the
/// all-buyers stationary point `raw`.
///
/// Between consecutive opt-out prices the set of buyers is fixed and the
/// leader utility is concave, so each piece peaks at its own stationary
/// point clipped into the piece.
fn fewer_buyers_pay_more(raw: f64, profiles: &[VmuProfile], market: &MarketParams) -> bool {
    let k = market.efficiency();
    let mut cutoffs: Vec<(f64, f64, f64)> = profiles
        .iter()
        .map(|p| {
            let off = market.offset(p, k);
            let cutoff = if off > 0.0 { p.alpha / off } else { f64::INFINITY };
            (cutoff, p.alpha, off)
        })
        .collect();
    cutoffs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let reference = leader_utility_at(raw, profiles, market);
    let mut lo = market.cost;
    for (i, &(cutoff, _, _)) in cutoffs.iter().enumerate() {
        // buyers on (lo, cutoff) are everyone from i on
        let hi = cutoff.min(market.price_max);
        if hi > lo && i > 0 {
            let alpha: f64 = cutoffs[i..].iter().map(|c| c.1).sum();
            let off: f64 = cutoffs[i..].iter().map(|c| c.2).sum();
            let peak = if off > 0.0 {
                (market.cost * alpha / off).sqrt()
            } else {
                hi
            };
            let p = peak.clamp(lo, hi);
            let u = (p - market.cost) * (alpha / p - off);
            if u > reference * (1.0 + 1e-12) {
                return true;
            }
        }
        lo = lo.max(cutoff);
        if lo >= market.price_max {
            break;
        }
    }
    false
}

fn price_feasible(price: f64, profiles: &[VmuProfile], market: &MarketParams) -> Option<f64> {
    let mut total = 0.0;
    for p in profiles {
        let b = best_response(p, price, market);
        if b > 0.0 && vmu_utility(p, b, price, market) <= 0.0 {
            return None;
        }
        total += b;
    }
    (total <= market.bandwidth_max).then_some((price - market.cost) * total)
}

/// Largest leader gain available within one grid step of the outcome's price,
/// found by sampling and a golden-section refinement. This bounds how far a grid
/// answer can sit below the continuous optimum when the leader utility is concave.
pub fn grid_margin(outcome: &MarketOutcome, profiles: &[VmuProfile], market: &MarketParams) -> f64 {
    if outcome.status == MarketStatus::Empty {
        return 0.0;
    }
    let lo = (outcome.price - outcome.grid_step).max(market.cost);
    let hi = (outcome.price + outcome.grid_step).min(market.price_max);
    let value = |p: f64| price_feasible(p, profiles, market).unwrap_or(f64::NEG_INFINITY);
    let samples = 200;
    let width = (hi - lo) / samples as f64;
    let (mut best_p, mut best_u) = (outcome.price, outcome.leader_utility);
    for i in 0..=samples {
        let p = lo + width * i as f64;
        let u = value(p);
        if u > best_u {
            (best_p, best_u) = (p, u);
        }
    }
    // golden-section refinement around the best sample
    let (mut a, mut b) = ((best_p - width).max(lo), (best_p + width).min(hi));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let x1 = b - ratio * (b - a);
        let x2 = a + ratio * (b - a);
        if value(x1) < value(x2) {
            a = x1;
        } else {
            b = x2;
        }
    }
    best_u = best_u.max(value(0.5 * (a + b)));
    (best_u - outcome.leader_utility).max(0.0)
}

/// Samples unilateral deviations and reports whether none of them gains more
/// than `tolerance`.
///
/// Followers deviate to random bandwidths in `[0, B_max]` at the posted price.
/// The leader deviates to random prices in `[C, P_max]`, with followers
/// re-optimising and infeasible prices skipped.
pub fn verify_equilibrium<R: Rng + ?Sized>(
    outcome: &MarketOutcome,
    profiles: &[VmuProfile],
    market: &MarketParams,
    trials: usize,
    tolerance: f64,
    rng: &mut R,
) -> bool {
    let tol = tolerance.max(1e-6);
    if outcome.status == MarketStatus::Cleared {
        for p in profiles {
            let current = vmu_utility(p, outcome.demands.get(&p.id).copied().unwrap_or(0.0), outcome.price, market);
            for _ in 0..trials {
                let b = rng.gen_range(0.0..=market.bandwidth_max);
                let gain = vmu_utility(p, b, outcome.price, market) - current;
                if gain > tol {
                    return false;
                }
            }
        }
    }
    for _ in 0..trials {
        let price = rng.gen_range(market.cost..=market.price_max);
        if let Some(u) = price_feasible(price, profiles, market) {
            if u - outcome.leader_utility > tol {
                return false;
            }
        }
    }
    true
}
