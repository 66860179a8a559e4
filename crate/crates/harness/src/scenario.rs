//! Synthetic RSU worlds: behaviour, interaction histories, reputations,
//! bandwidth offers and node composition.
//!
//! Every random draw comes from a ChaCha stream keyed by the run seed plus a
//! tag, so changing one sweep axis never perturbs the draws of another. In
//! particular an RSU's interaction draws depend only on its index, and the
//! misbehaving set at a higher ratio contains the set at a lower one.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vtmig_core::coalition::{CoalitionGame, Population, Rsu, RsuNode};
use vtmig_core::reputation::{InteractionTable, ReputationEngine};
use vtmig_core::{NodeId, RsuId, VmuId};

use crate::config::{PopulationConfig, ScenarioConfig};

pub(crate) const TAG_MISBEHAVE: u64 = 1;
pub(crate) const TAG_INTERACT: u64 = 2;
pub(crate) const TAG_BANDWIDTH: u64 = 3;
pub(crate) const TAG_NODES: u64 = 4;
pub(crate) const TAG_DECAY: u64 = 5;
pub(crate) const TAG_MARKET: u64 = 6;
pub(crate) const TAG_CONSENSUS: u64 = 7;
pub(crate) const TAG_FORMATION: u64 = 8;

/// Folds `parts` into `base` with the splitmix64 finaliser.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for &p in parts {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

pub fn stream(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

/// Marks `round(ratio * rsus)` RSUs as misbehaving, taken from the front of a
/// seeded permutation.
pub fn misbehaving_mask(rsus: usize, ratio: f64, seed: u64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..rsus).collect();
    order.shuffle(&mut stream(seed, &[TAG_MISBEHAVE]));
    let bad = (ratio * rsus as f64).round() as usize;
    let mut mask = vec![false; rsus];
    for &r in &order[..bad.min(rsus)] {
        mask[r] = true;
    }
    mask
}

/// Per-window interaction histories between every VMU and every RSU.
///
/// Honest RSUs draw mostly positive interactions, misbehaving ones mostly
/// negative. Both kinds are drawn for every window so the stream consumed by
/// an RSU does not depend on its behaviour.
pub fn interaction_table(pop: &PopulationConfig, misbehaving: &[bool], seed: u64) -> InteractionTable {
    let vmus = (0..pop.vmus as u32).map(VmuId).collect();
    let rsus = (0..misbehaving.len() as u32).map(RsuId).collect();
    let mut table = InteractionTable::new(vmus, rsus);
    for (r, &bad) in misbehaving.iter().enumerate() {
        let mut rng = stream(seed, &[TAG_INTERACT, r as u64]);
        for v in 0..pop.vmus {
            for t in 0..pop.history as i64 {
                let honest = (
                    rng.gen_range(0.6..=1.0) * pop.positive_max,
                    rng.gen_range(0.0..=0.1) * pop.negative_max,
                );
                let hostile = (
                    rng.gen_range(0.0..=0.1) * pop.positive_max,
                    rng.gen_range(0.5..=1.0) * pop.negative_max,
                );
                let (p, q) = if bad { hostile } else { honest };
                table.record(v, r, t, p, q).expect("windows are generated in order");
            }
        }
    }
    table
}

pub fn bandwidth_offers(rsus: usize, pop: &PopulationConfig, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, &[TAG_BANDWIDTH]);
    (0..rsus)
        .map(|_| rng.gen_range(pop.bandwidth_min..=pop.bandwidth_max))
        .collect()
}

/// Assigns RSUs to `nodes` edge servers. Every node gets at least one RSU;
/// with probability `overlap` an RSU is also served by a second node.
pub fn node_composition(rsus: usize, nodes: usize, overlap: f64, seed: u64) -> Vec<BTreeSet<usize>> {
    let mut rng = stream(seed, &[TAG_NODES, rsus as u64, nodes as u64]);
    let mut order: Vec<usize> = (0..rsus).collect();
    order.shuffle(&mut rng);
    let mut members = vec![BTreeSet::new(); nodes];
    for (i, &r) in order.iter().enumerate() {
        let home = if i < nodes { i } else { rng.gen_range(0..nodes) };
        members[home].insert(r);
        if nodes > 1 && rng.gen_bool(overlap) {
            let mut other = rng.gen_range(0..nodes - 1);
            if other >= home {
                other += 1;
            }
            members[other].insert(r);
        }
    }
    members
}

/// RSU behaviour, reputations and offers for one seeded world.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub misbehaving: Vec<bool>,
    pub reputations: Vec<f64>,
    pub bandwidth: Vec<f64>,
}

impl World {
    pub fn generate(cfg: &ScenarioConfig, rsus: usize, ratio: f64, seed: u64) -> Self {
        let misbehaving = misbehaving_mask(rsus, ratio, seed);
        let table = interaction_table(&cfg.population, &misbehaving, seed);
        let engine = ReputationEngine::new(cfg.reputation_params()).expect("validated config");
        let now = cfg.population.history as i64 - 1;
        let reputations = engine.evaluate(&table, now).into_iter().map(|r| r.rsu_final).collect();
        Self {
            misbehaving,
            reputations,
            bandwidth: bandwidth_offers(rsus, &cfg.population, seed),
        }
    }

    pub fn rsu_count(&self) -> usize {
        self.reputations.len()
    }

    /// RSUs at or above `threshold`; everyone when `threshold` is `None`.
    pub fn admitted(&self, threshold: Option<f64>) -> Vec<bool> {
        self.reputations
            .iter()
            .map(|&r| threshold.is_none_or(|t| r >= t))
            .collect()
    }

    /// Coalition population restricted to admitted RSUs. Nodes left without
    /// RSUs drop out; node ids keep their original index.
    pub fn population(&self, composition: &[BTreeSet<usize>], threshold: Option<f64>) -> Population {
        let admitted = self.admitted(threshold);
        let rsus = (0..self.rsu_count())
            .filter(|&r| admitted[r])
            .map(|r| Rsu {
                id: RsuId(r as u32),
                reputation: self.reputations[r],
                bandwidth_offer: self.bandwidth[r],
            })
            .collect();
        let nodes = composition
            .iter()
            .enumerate()
            .filter_map(|(i, m)| {
                let members: BTreeSet<RsuId> = m.iter().filter(|&&r| admitted[r]).map(|&r| RsuId(r as u32)).collect();
                (!members.is_empty()).then_some(RsuNode {
                    id: NodeId(i as u32),
                    members,
                })
            })
            .collect();
        Population {
            rsus,
            nodes,
            total_rsus: self.rsu_count(),
        }
    }

    pub fn game(
        &self,
        cfg: &ScenarioConfig,
        composition: &[BTreeSet<usize>],
        threshold: Option<f64>,
    ) -> Option<CoalitionGame> {
        let pop = self.population(composition, threshold);
        if pop.nodes.is_empty() {
            return None;
        }
        Some(CoalitionGame::new(pop, cfg.coalition_params()).expect("validated config"))
    }
}
