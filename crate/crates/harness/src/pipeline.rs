//! One end-to-end migration: reputation, exclusion, coalition formation,
//! bandwidth pricing and block validation.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;
use vtmig_core::coalition::{form_coalitions, select_best};
use vtmig_core::consensus::{assign_tiers, simulate_round};
use vtmig_core::stackelberg::{solve_grid, MarketOutcome, MarketStatus, VmuProfile};
use vtmig_core::{NodeId, RsuId, VmuId};

use crate::config::ScenarioConfig;
use crate::error::HarnessError;
use crate::scenario::{derive_seed, node_composition, stream, World, TAG_CONSENSUS, TAG_FORMATION, TAG_MARKET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineStatus {
    Completed,
    /// Every RSU fell below the reputation threshold.
    NoCoalition,
    /// No price gave the coalition a positive profit.
    EmptyMarket,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub stage: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusRound {
    pub round: usize,
    pub a_level: Vec<RsuId>,
    pub b_level: Vec<RsuId>,
    pub c_level: Vec<RsuId>,
    pub accepted: bool,
    pub malicious: Vec<RsuId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub status: PipelineStatus,
    pub seed: u64,
    pub audit: Vec<AuditEntry>,
    pub reputations: BTreeMap<RsuId, f64>,
    pub excluded: Vec<RsuId>,
    pub selected_nodes: Vec<NodeId>,
    pub selected_rsus: Vec<RsuId>,
    pub bandwidth_max: Option<f64>,
    pub vmus: Vec<VmuProfile>,
    pub market: Option<MarketOutcome>,
    pub rounds: Vec<ConsensusRound>,
    /// Reputations of the selected RSUs after the last round.
    pub final_reputations: BTreeMap<RsuId, f64>,
}

impl PipelineReport {
    fn log(&mut self, stage: &'static str, detail: impl Into<String>) {
        let detail = detail.into();
        log::info!("{stage}: {detail}");
        self.audit.push(AuditEntry { stage, detail });
    }
}

fn stage_err(stage: &'static str) -> impl Fn(String) -> HarnessError {
    move |message| HarnessError::Sweep {
        experiment: "pipeline",
        coords: format!("stage={stage}"),
        message,
    }
}

pub fn run_pipeline(cfg: &ScenarioConfig) -> Result<PipelineReport, HarnessError> {
    cfg.validate()?;
    let pop = &cfg.population;
    let threshold = cfg.reputation.threshold;

    let world = World::generate(cfg, pop.rsus, pop.misbehavior_ratio, cfg.seed);
    let mut report = PipelineReport {
        status: PipelineStatus::Completed,
        seed: cfg.seed,
        audit: Vec::new(),
        reputations: (0..pop.rsus).map(|r| (RsuId(r as u32), world.reputations[r])).collect(),
        excluded: Vec::new(),
        selected_nodes: Vec::new(),
        selected_rsus: Vec::new(),
        bandwidth_max: None,
        vmus: Vec::new(),
        market: None,
        rounds: Vec::new(),
        final_reputations: BTreeMap::new(),
    };
    let misbehaving = world.misbehaving.iter().filter(|&&b| b).count();
    report.log(
        "reputation",
        format!("{} RSUs scored from {} VMUs, {misbehaving} misbehaving", pop.rsus, pop.vmus),
    );

    report.excluded = world
        .admitted(Some(threshold))
        .iter()
        .enumerate()
        .filter(|(_, &a)| !a)
        .map(|(r, _)| RsuId(r as u32))
        .collect();
    report.log(
        "exclusion",
        format!("{} RSUs below threshold {threshold}", report.excluded.len()),
    );

    let comp = node_composition(pop.rsus, pop.nodes, pop.overlap, cfg.seed);
    let Some(game) = world.game(cfg, &comp, Some(threshold)) else {
        report.status = PipelineStatus::NoCoalition;
        report.log("coalition", "no node has an admitted RSU");
        return Ok(report);
    };
    let err = stage_err("coalition");
    let formed = form_coalitions(&game, derive_seed(cfg.seed, &[TAG_FORMATION])).map_err(|e| err(e.to_string()))?;
    let best = select_best(&formed.partition, &game).map_err(|e| err(e.to_string()))?;
    let members = game.member_rsus(&best).map_err(|e| err(e.to_string()))?;
    let bandwidth = game.coalition_bandwidth(&best).map_err(|e| err(e.to_string()))?;
    report.selected_nodes = best.node_ids().iter().copied().collect();
    report.selected_rsus = members.iter().copied().collect();
    report.bandwidth_max = Some(bandwidth);
    report.log(
        "coalition",
        format!(
            "{} coalitions after {} merges and {} splits; selected {} nodes, {} RSUs, {bandwidth:.3} MHz",
            formed.partition.coalitions().len(),
            formed.merges(),
            formed.splits(),
            report.selected_nodes.len(),
            report.selected_rsus.len(),
        ),
    );

    let mut rng = stream(cfg.seed, &[TAG_MARKET]);
    report.vmus = (0..pop.vmus as u32)
        .map(|v| VmuProfile {
            id: VmuId(v),
            alpha: rng.gen_range(pop.alpha_min..=pop.alpha_max),
            data_size: cfg.migration.effective_data_size(),
        })
        .collect();
    let market = cfg.market_params(cfg.market.cost, bandwidth);
    let outcome = solve_grid(&report.vmus, &market).map_err(|e| stage_err("market")(e.to_string()))?;
    report.log(
        "market",
        format!(
            "price {:.4}, total demand {:.4} MHz, leader utility {:.4}",
            outcome.price,
            outcome.total_demand(),
            outcome.leader_utility
        ),
    );
    let empty = outcome.status == MarketStatus::Empty;
    report.market = Some(outcome);
    if empty {
        report.status = PipelineStatus::EmptyMarket;
        report.log("market", "no profitable price; nothing to validate");
        return Ok(report);
    }

    let params = cfg.consensus_params();
    let mut reps: BTreeMap<RsuId, f64> = members.iter().map(|&id| (id, report.reputations[&id])).collect();
    let mut rng = stream(cfg.seed, &[TAG_CONSENSUS]);
    let err = stage_err("consensus");
    for round in 0..cfg.consensus.rounds {
        // re-tier on current reputations at the start of every round
        let ranked: Vec<(RsuId, f64)> = reps.iter().map(|(&id, &r)| (id, r)).collect();
        let tiers = assign_tiers(&ranked, params.tiers).map_err(|e| err(e.to_string()))?;
        if tiers.b_level.is_empty() {
            report.log("consensus", format!("round {round}: no B-level validators, skipped"));
            continue;
        }
        let out = simulate_round(&tiers, &reps, &params, &mut rng).map_err(|e| err(e.to_string()))?;
        report.log(
            "consensus",
            format!(
                "round {round}: {} validators, {} malicious, block {}",
                tiers.b_level.len(),
                out.malicious.len(),
                if out.accepted { "accepted" } else { "rejected" }
            ),
        );
        report.rounds.push(ConsensusRound {
            round,
            a_level: tiers.a_level,
            b_level: tiers.b_level,
            c_level: tiers.c_level,
            accepted: out.accepted,
            malicious: out.malicious,
        });
        reps = out.reputations;
    }
    report.final_reputations = reps;
    Ok(report)
}
