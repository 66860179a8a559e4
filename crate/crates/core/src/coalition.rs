//! Coalition formation among RSU nodes.
//!
//! Every RSU node (an edge server plus the RSUs it serves) is a player. A
//! coalition's utility rewards RSU coverage and reputation, penalises
//! migration latency through the pooled bandwidth, and charges a convex
//! communication cost in the number of nodes. Utility is non-transferable:
//! every member receives the full coalition utility.
//!
//! [`form_coalitions`] starts from singletons and applies Pareto-improving
//! merges and splits until neither applies.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelParams;
use crate::ids::{NodeId, RsuId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoalitionError {
    #[error("invalid coalition parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error("unknown RSU node {0}")]
    UnknownNode(NodeId),
    #[error("coalition has no bandwidth to offer")]
    Infeasible,
    #[error("empty coalition")]
    EmptyCoalition,
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("partitions cover different node sets")]
    MismatchedNodes,
    #[error("exhaustive stability check limited to {limit} nodes (got {nodes})")]
    TooLarge { nodes: usize, limit: usize },
    #[error("merge-and-split exceeded the iteration cap of {0} steps")]
    IterationCap(u64),
}

pub type Result<T> = std::result::Result<T, CoalitionError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rsu {
    pub id: RsuId,
    /// Final reputation in [0, 1].
    pub reputation: f64,
    /// Offered bandwidth, MHz.
    pub bandwidth_offer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsuNode {
    pub id: NodeId,
    pub members: BTreeSet<RsuId>,
}

/// A non-empty set of RSU nodes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coalition {
    node_ids: BTreeSet<NodeId>,
}

impl Coalition {
    pub fn new(node_ids: impl IntoIterator<Item = NodeId>) -> Result<Self> {
        let node_ids: BTreeSet<_> = node_ids.into_iter().collect();
        if node_ids.is_empty() {
            return Err(CoalitionError::EmptyCoalition);
        }
        Ok(Self { node_ids })
    }

    pub fn singleton(id: NodeId) -> Self {
        Self {
            node_ids: BTreeSet::from([id]),
        }
    }

    pub fn node_ids(&self) -> &BTreeSet<NodeId> {
        &self.node_ids
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.node_ids.contains(&id)
    }
}

/// Disjoint coalitions covering every node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    coalitions: Vec<Coalition>,
}

impl Partition {
    /// Builds a partition, checking pairwise disjointness. Coverage of a
    /// particular node set is checked by [`Partition::validate_for`].
    pub fn new(coalitions: Vec<Coalition>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &coalitions {
            for &id in c.node_ids() {
                if !seen.insert(id) {
                    return Err(CoalitionError::InvalidPartition(format!(
                        "{id} appears in more than one coalition"
                    )));
                }
            }
        }
        Ok(Self { coalitions })
    }

    pub fn singletons(ids: impl IntoIterator<Item = NodeId>) -> Self {
        Self {
            coalitions: ids.into_iter().map(Coalition::singleton).collect(),
        }
    }

    pub fn coalitions(&self) -> &[Coalition] {
        &self.coalitions
    }

    pub fn node_ids(&self) -> BTreeSet<NodeId> {
        self.coalitions
            .iter()
            .flat_map(|c| c.node_ids().iter().copied())
            .collect()
    }

    pub fn coalition_of(&self, id: NodeId) -> Option<&Coalition> {
        self.coalitions.iter().find(|c| c.contains(id))
    }

    /// Checks that the partition covers exactly the game's nodes.
    pub fn validate_for(&self, game: &CoalitionGame) -> Result<()> {
        let expected: BTreeSet<_> = game.node_ids().collect();
        if self.node_ids() != expected {
            return Err(CoalitionError::InvalidPartition(
                "partition does not cover the node set".into(),
            ));
        }
        Ok(())
    }

    /// Same partition with coalitions in sorted order.
    pub fn canonical(&self) -> Self {
        let mut coalitions = self.coalitions.clone();
        coalitions.sort();
        Self { coalitions }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalitionParams {
    /// Weight of RSU coverage in the contribution value.
    pub zeta1: f64,
    /// Weight of mean reputation in the contribution value.
    pub zeta2: f64,
    /// Latency coefficient.
    pub gamma: f64,
    /// Communication-cost coefficient.
    pub sigma: f64,
    /// Regulariser keeping the cost finite for the grand coalition.
    pub epsilon_cost: f64,
    /// VT data size, Mb.
    pub data_size: f64,
    /// Data compression ratio.
    pub compression: f64,
    /// RSUs below this reputation are kept out of the game by the caller.
    pub reputation_threshold: f64,
    pub channel: ChannelParams,
}

impl Default for CoalitionParams {
    fn default() -> Self {
        Self {
            zeta1: 0.5,
            zeta2: 0.5,
            gamma: 1.0,
            sigma: 1.0,
            epsilon_cost: 0.1,
            data_size: 500.0,
            compression: 0.5,
            reputation_threshold: 0.5,
            channel: ChannelParams::default(),
        }
    }
}

impl CoalitionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(CoalitionError::InvalidParams {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.zeta1 >= 0.0 && self.zeta1.is_finite()) {
            return bad("zeta1", "must be non-negative");
        }
        if !(self.zeta2 >= 0.0 && self.zeta2.is_finite()) {
            return bad("zeta2", "must be non-negative");
        }
        if !self.gamma.is_finite() {
            return bad("gamma", "must be finite");
        }
        if !self.sigma.is_finite() {
            return bad("sigma", "must be finite");
        }
        if !(self.epsilon_cost > 0.0 && self.epsilon_cost < 1.0) {
            return bad("epsilon_cost", "must lie in (0, 1)");
        }
        if !(self.data_size >= 0.0 && self.data_size.is_finite()) {
            return bad("data_size", "must be non-negative");
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad("compression", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.reputation_threshold) {
            return bad("reputation_threshold", "must lie in [0, 1]");
        }
        if let Err(reason) = self.channel.validate() {
            return bad("channel", &reason);
        }
        Ok(())
    }
}

/// `D * lambda / (B * K)`, seconds for Mb over MHz.
pub fn service_latency(data_size: f64, compression: f64, bandwidth: f64, efficiency: f64) -> Result<f64> {
    let rate = bandwidth * efficiency;
    if !(rate > 0.0) {
        return Err(CoalitionError::Infeasible);
    }
    Ok(data_size * compression / rate)
}

/// `-ln(1 - (n - eps) / N)` for coalitions of at least two nodes, else 0.
pub fn communication_cost(coalition_nodes: usize, total_nodes: usize, epsilon: f64) -> f64 {
    if coalition_nodes < 2 {
        return 0.0;
    }
    -(1.0 - (coalition_nodes as f64 - epsilon) / total_nodes as f64).ln()
}

/// RSUs, their grouping into nodes, and the size of the full RSU set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub rsus: Vec<Rsu>,
    pub nodes: Vec<RsuNode>,
    /// `R`: all RSUs in the system, including any excluded from the game.
    pub total_rsus: usize,
}

/// Utility evaluator for one population.
#[derive(Debug, Clone)]
pub struct CoalitionGame {
    population: Population,
    params: CoalitionParams,
    efficiency: f64,
    node_index: HashMap<NodeId, usize>,
    node_members: Vec<Vec<usize>>,
}

impl CoalitionGame {
    pub fn new(population: Population, params: CoalitionParams) -> Result<Self> {
        params.validate()?;
        let mut rsu_index = HashMap::new();
        for (i, rsu) in population.rsus.iter().enumerate() {
            if !(0.0..=1.0).contains(&rsu.reputation) {
                return Err(CoalitionError::InvalidPopulation(format!(
                    "{} has reputation {} outside [0, 1]",
                    rsu.id, rsu.reputation
                )));
            }
            if !(rsu.bandwidth_offer >= 0.0 && rsu.bandwidth_offer.is_finite()) {
                return Err(CoalitionError::InvalidPopulation(format!(
                    "{} offers invalid bandwidth {}",
                    rsu.id, rsu.bandwidth_offer
                )));
            }
            if rsu_index.insert(rsu.id, i).is_some() {
                return Err(CoalitionError::InvalidPopulation(format!("duplicate {}", rsu.id)));
            }
        }
        if population.total_rsus < population.rsus.len() || population.total_rsus == 0 {
            return Err(CoalitionError::InvalidPopulation(
                "total RSU count must cover every listed RSU".into(),
            ));
        }
        let mut node_index = HashMap::new();
        let mut node_members = Vec::with_capacity(population.nodes.len());
        for (i, node) in population.nodes.iter().enumerate() {
            if node.members.is_empty() {
                return Err(CoalitionError::InvalidPopulation(format!("{} has no RSUs", node.id)));
            }
            if node_index.insert(node.id, i).is_some() {
                return Err(CoalitionError::InvalidPopulation(format!("duplicate {}", node.id)));
            }
            let members = node
                .members
                .iter()
                .map(|id| {
                    rsu_index.get(id).copied().ok_or_else(|| {
                        CoalitionError::InvalidPopulation(format!("{} references unknown {id}", node.id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            node_members.push(members);
        }
        let efficiency = params.channel.spectral_efficiency();
        Ok(Self {
            population,
            params,
            efficiency,
            node_index,
            node_members,
        })
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn params(&self) -> &CoalitionParams {
        &self.params
    }

    /// Spectral efficiency `K` of the shared channel.
    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    pub fn node_count(&self) -> usize {
        self.population.nodes.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.population.nodes.iter().map(|n| n.id)
    }

    fn indices(&self, coal: &Coalition) -> Result<Vec<usize>> {
        coal.node_ids()
            .iter()
            .map(|id| self.node_index.get(id).copied().ok_or(CoalitionError::UnknownNode(*id)))
            .collect()
    }

    /// RSUs covered by the coalition (each counted once).
    pub fn member_rsus(&self, coal: &Coalition) -> Result<BTreeSet<RsuId>> {
        let idx = self.indices(coal)?;
        let mut out = BTreeSet::new();
        for n in idx {
            for &r in &self.node_members[n] {
                out.insert(self.population.rsus[r].id);
            }
        }
        Ok(out)
    }

    fn covered(&self, nodes: &[usize]) -> Vec<usize> {
        let mut mark = vec![false; self.population.rsus.len()];
        let mut out = Vec::new();
        for &n in nodes {
            for &r in &self.node_members[n] {
                if !mark[r] {
                    mark[r] = true;
                    out.push(r);
                }
            }
        }
        out
    }

    /// Pooled bandwidth of the coalition, MHz.
    pub fn coalition_bandwidth(&self, coal: &Coalition) -> Result<f64> {
        let idx = self.indices(coal)?;
        Ok(self.bandwidth_of(&self.covered(&idx)))
    }

    fn bandwidth_of(&self, rsus: &[usize]) -> f64 {
        rsus.iter().map(|&r| self.population.rsus[r].bandwidth_offer).sum()
    }

    /// Coverage share plus mean reputation of covered RSUs, weighted.
    pub fn contribution_value(&self, coal: &Coalition) -> Result<f64> {
        let idx = self.indices(coal)?;
        Ok(self.contribution_of(&self.covered(&idx)))
    }

    fn contribution_of(&self, rsus: &[usize]) -> f64 {
        if rsus.is_empty() {
            return 0.0;
        }
        let coverage = rsus.len() as f64 / self.population.total_rsus as f64;
        let mean_rep =
            rsus.iter().map(|&r| self.population.rsus[r].reputation).sum::<f64>() / rsus.len() as f64;
        self.params.zeta1 * coverage + self.params.zeta2 * mean_rep
    }

    /// Migration latency over the coalition's pooled bandwidth, seconds.
    pub fn service_latency(&self, coal: &Coalition) -> Result<f64> {
        let bw = self.coalition_bandwidth(coal)?;
        service_latency(self.params.data_size, self.params.compression, bw, self.efficiency)
    }

    pub fn communication_cost(&self, coal: &Coalition) -> f64 {
        communication_cost(coal.len(), self.node_count(), self.params.epsilon_cost)
    }

    /// `Q + gamma * ln(1 + 1/I) - sigma * C`.
    pub fn coalition_utility(&self, coal: &Coalition) -> Result<f64> {
        let idx = self.indices(coal)?;
        let u = self.utility_of(&idx);
        if u == f64::NEG_INFINITY {
            Err(CoalitionError::Infeasible)
        } else {
            Ok(u)
        }
    }

    /// Utility of a set of node indices; infeasible coalitions score `-inf`.
    fn utility_of(&self, nodes: &[usize]) -> f64 {
        let rsus = self.covered(nodes);
        let bw = self.bandwidth_of(&rsus);
        let latency = match service_latency(self.params.data_size, self.params.compression, bw, self.efficiency) {
            Ok(l) => l,
            Err(_) => return f64::NEG_INFINITY,
        };
        let p = &self.params;
        let latency_term = if latency == 0.0 {
            // ln(1 + 1/I) diverges only when there is no data to move
            if p.gamma == 0.0 {
                0.0
            } else {
                f64::INFINITY * p.gamma.signum()
            }
        } else {
            p.gamma * (1.0 / latency).ln_1p()
        };
        self.contribution_of(&rsus) + latency_term
            - p.sigma * communication_cost(nodes.len(), self.node_count(), p.epsilon_cost)
    }

    /// Per-node utility under a partition of the game's nodes.
    fn node_utilities(&self, partition: &Partition) -> Result<HashMap<NodeId, f64>> {
        let mut out = HashMap::new();
        for c in partition.coalitions() {
            let u = self.utility_of(&self.indices(c)?);
            for &id in c.node_ids() {
                out.insert(id, u);
            }
        }
        Ok(out)
    }
}

/// Pareto order between two partitions of the same node set: no node's
/// coalition utility drops and at least one strictly improves.
///
/// An RSU served by several nodes is represented once per serving node, so the
/// comparison runs over nodes.
pub fn pareto_prefers(p1: &Partition, p2: &Partition, game: &CoalitionGame) -> Result<bool> {
    if p1.node_ids() != p2.node_ids() {
        return Err(CoalitionError::MismatchedNodes);
    }
    let u1 = game.node_utilities(p1)?;
    let u2 = game.node_utilities(p2)?;
    let mut strict = false;
    for (id, a) in &u1 {
        let b = u2[id];
        if *a < b {
            return Ok(false);
        }
        if *a > b {
            strict = true;
        }
    }
    Ok(strict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Merge,
    Split,
}

/// One accepted merge or split and the partition it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationStep {
    pub kind: StepKind,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Formation {
    pub initial: Partition,
    pub partition: Partition,
    pub steps: Vec<FormationStep>,
    pub utility_evaluations: u64,
}

impl Formation {
    pub fn merges(&self) -> usize {
        self.steps.iter().filter(|s| s.kind == StepKind::Merge).count()
    }

    pub fn splits(&self) -> usize {
        self.steps.iter().filter(|s| s.kind == StepKind::Split).count()
    }
}

/// Coalitions up to this many nodes are split along every set partition;
/// larger ones only along contiguous 2-way cuts of their sorted node list.
pub const EXHAUSTIVE_SPLIT_LIMIT: usize = 4;
/// Unions of more than two coalitions are tried only when at most this many
/// coalitions remain.
pub const MULTI_MERGE_LIMIT: usize = 10;
/// Node limit of [`check_dhp_stability`].
pub const STABILITY_CHECK_LIMIT: usize = 10;

struct Engine<'a> {
    game: &'a CoalitionGame,
    coalitions: Vec<Vec<usize>>,
    utilities: Vec<f64>,
    evaluations: u64,
}

impl Engine<'_> {
    fn eval(&mut self, nodes: &[usize]) -> f64 {
        self.evaluations += 1;
        self.game.utility_of(nodes)
    }

    fn snapshot(&self) -> Partition {
        let ids = &self.game.population.nodes;
        Partition {
            coalitions: self
                .coalitions
                .iter()
                .map(|c| Coalition {
                    node_ids: c.iter().map(|&n| ids[n].id).collect(),
                })
                .collect(),
        }
    }

    /// Pareto-improving pair merge with the highest merged utility (first in
    /// (i, j) order on ties); failing that, the first improving union of
    /// three or more coalitions, by size, when few coalitions remain.
    fn find_merge(&mut self) -> Option<(Vec<usize>, Vec<usize>, f64)> {
        let k = self.coalitions.len();
        let mut best: Option<(Vec<usize>, Vec<usize>, f64)> = None;
        for i in 0..k {
            for j in i + 1..k {
                let union = merged(&[&self.coalitions[i], &self.coalitions[j]]);
                let u = self.eval(&union);
                if improves_all(u, &[self.utilities[i], self.utilities[j]]) && best.as_ref().is_none_or(|b| u > b.2)
                {
                    best = Some((vec![i, j], union, u));
                }
            }
        }
        if best.is_some() {
            return best;
        }
        if (3..=MULTI_MERGE_LIMIT).contains(&k) {
            for size in 3..=k {
                for mask in 0u32..(1 << k) {
                    if mask.count_ones() as usize != size {
                        continue;
                    }
                    let members: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
                    let parts: Vec<&Vec<usize>> = members.iter().map(|&i| &self.coalitions[i]).collect();
                    let union = merged(&parts);
                    let u = self.eval(&union);
                    let before: Vec<f64> = members.iter().map(|&i| self.utilities[i]).collect();
                    if improves_all(u, &before) {
                        return Some((members, union, u));
                    }
                }
            }
        }
        None
    }

    fn apply_merge(&mut self, members: &[usize], union: Vec<usize>, u: f64) {
        let first = members[0];
        for &i in members.iter().skip(1).rev() {
            self.coalitions.remove(i);
            self.utilities.remove(i);
        }
        self.coalitions[first] = union;
        self.utilities[first] = u;
    }

    fn find_split(&mut self) -> Option<(usize, Vec<Vec<usize>>, Vec<f64>)> {
        for i in 0..self.coalitions.len() {
            let coal = self.coalitions[i].clone();
            if coal.len() < 2 {
                continue;
            }
            let current = self.utilities[i];
            let candidates: Vec<Vec<Vec<usize>>> = if coal.len() <= EXHAUSTIVE_SPLIT_LIMIT {
                set_partitions(&coal).into_iter().filter(|p| p.len() >= 2).collect()
            } else {
                (1..coal.len())
                    .map(|cut| vec![coal[..cut].to_vec(), coal[cut..].to_vec()])
                    .collect()
            };
            for blocks in candidates {
                let us: Vec<f64> = blocks.iter().map(|b| self.eval(b)).collect();
                if us.iter().all(|&u| u >= current) && us.iter().any(|&u| u > current) {
                    return Some((i, blocks, us));
                }
            }
        }
        None
    }

    fn apply_split(&mut self, i: usize, blocks: Vec<Vec<usize>>, us: Vec<f64>) {
        self.coalitions.splice(i..=i, blocks);
        self.utilities.splice(i..=i, us);
    }
}

fn merged(parts: &[&Vec<usize>]) -> Vec<usize> {
    let mut out: Vec<usize> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    out.sort_unstable();
    out
}

fn improves_all(merged: f64, before: &[f64]) -> bool {
    before.iter().all(|&b| merged >= b) && before.iter().any(|&b| merged > b)
}

/// All set partitions of `items`, generated from restricted growth strings.
pub(crate) fn set_partitions<T: Clone>(items: &[T]) -> Vec<Vec<Vec<T>>> {
    fn rec<T: Clone>(items: &[T], idx: usize, blocks: &mut Vec<Vec<T>>, out: &mut Vec<Vec<Vec<T>>>) {
        if idx == items.len() {
            out.push(blocks.clone());
            return;
        }
        for b in 0..blocks.len() {
            blocks[b].push(items[idx].clone());
            rec(items, idx + 1, blocks, out);
            blocks[b].pop();
        }
        blocks.push(vec![items[idx].clone()]);
        rec(items, idx + 1, blocks, out);
        blocks.pop();
    }
    let mut out = Vec::new();
    if !items.is_empty() {
        rec(items, 0, &mut Vec::new(), &mut out);
    }
    out
}

/// Runs merge-and-split from the all-singletons partition.
///
/// The seed fixes the order in which singleton coalitions are laid out, which
/// in turn fixes the scan order. Each accepted step is a strict Pareto
/// improvement, so the process stops at a partition where no merge or split
/// applies.
pub fn form_coalitions(game: &CoalitionGame, seed: u64) -> Result<Formation> {
    let mut order: Vec<usize> = (0..game.node_count()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut engine = Engine {
        game,
        coalitions: order.iter().map(|&n| vec![n]).collect(),
        utilities: Vec::new(),
        evaluations: 0,
    };
    engine.utilities = order.iter().map(|&n| game.utility_of(&[n])).collect();
    engine.evaluations = order.len() as u64;
    let initial = engine.snapshot();

    let scale = game.population.total_rsus.max(game.node_count()).max(2) as u64;
    let cap = scale.saturating_pow(3);
    let mut steps = Vec::new();
    loop {
        let mut changed = false;
        while let Some((members, union, u)) = engine.find_merge() {
            engine.apply_merge(&members, union, u);
            steps.push(FormationStep {
                kind: StepKind::Merge,
                partition: engine.snapshot(),
            });
            changed = true;
            if steps.len() as u64 > cap {
                return Err(CoalitionError::IterationCap(cap));
            }
        }
        while let Some((i, blocks, us)) = engine.find_split() {
            engine.apply_split(i, blocks, us);
            steps.push(FormationStep {
                kind: StepKind::Split,
                partition: engine.snapshot(),
            });
            changed = true;
            if steps.len() as u64 > cap {
                return Err(CoalitionError::IterationCap(cap));
            }
        }
        if !changed {
            break;
        }
    }
    Ok(Formation {
        initial,
        partition: engine.snapshot(),
        steps,
        utility_evaluations: engine.evaluations,
    })
}

/// Exhaustive D_hp stability check: no coalition can be split and no set of
/// coalitions can be merged into a Pareto-preferred arrangement.
pub fn check_dhp_stability(partition: &Partition, game: &CoalitionGame) -> Result<bool> {
    let nodes = partition.node_ids().len();
    if nodes > STABILITY_CHECK_LIMIT {
        return Err(CoalitionError::TooLarge {
            nodes,
            limit: STABILITY_CHECK_LIMIT,
        });
    }
    partition.validate_for(game)?;
    let coalitions: Vec<Vec<usize>> = partition
        .coalitions()
        .iter()
        .map(|c| game.indices(c))
        .collect::<Result<_>>()?;
    let utilities: Vec<f64> = coalitions.iter().map(|c| game.utility_of(c)).collect();

    for (coal, &u) in coalitions.iter().zip(&utilities) {
        for blocks in set_partitions(coal).into_iter().filter(|p| p.len() >= 2) {
            let us: Vec<f64> = blocks.iter().map(|b| game.utility_of(b)).collect();
            if us.iter().all(|&x| x >= u) && us.iter().any(|&x| x > u) {
                return Ok(false);
            }
        }
    }
    let k = coalitions.len();
    for mask in 0u32..(1 << k) {
        if mask.count_ones() < 2 {
            continue;
        }
        let members: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let parts: Vec<&Vec<usize>> = members.iter().map(|&i| &coalitions[i]).collect();
        let u = game.utility_of(&merged(&parts));
        let before: Vec<f64> = members.iter().map(|&i| utilities[i]).collect();
        if improves_all(u, &before) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Highest-utility coalition; ties go to the lexicographically smallest node
/// set.
pub fn select_best(partition: &Partition, game: &CoalitionGame) -> Result<Coalition> {
    let mut best: Option<(&Coalition, f64)> = None;
    for c in partition.coalitions() {
        let u = game.utility_of(&game.indices(c)?);
        best = match best {
            None => Some((c, u)),
            Some((b, bu)) => {
                if u > bu || (u == bu && c.node_ids() < b.node_ids()) {
                    Some((c, u))
                } else {
                    Some((b, bu))
                }
            }
        };
    }
    best.map(|(c, _)| c.clone())
        .ok_or_else(|| CoalitionError::InvalidPartition("empty partition".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rsu(id: u32, reputation: f64, bw: f64) -> Rsu {
        Rsu {
            id: RsuId(id),
            reputation,
            bandwidth_offer: bw,
        }
    }

    fn node(id: u32, members: &[u32]) -> RsuNode {
        RsuNode {
            id: NodeId(id),
            members: members.iter().map(|&m| RsuId(m)).collect(),
        }
    }

    fn coal(ids: &[u32]) -> Coalition {
        Coalition::new(ids.iter().map(|&i| NodeId(i))).unwrap()
    }

    fn game(rsus: Vec<Rsu>, nodes: Vec<RsuNode>, total: usize, params: CoalitionParams) -> CoalitionGame {
        CoalitionGame::new(
            Population {
                rsus,
                nodes,
                total_rsus: total,
            },
            params,
        )
        .unwrap()
    }

    #[test]
    fn bandwidth_uses_set_union() {
        let g = game(
            vec![rsu(0, 0.9, 10.0), rsu(1, 0.8, 20.0), rsu(2, 0.7, 5.0)],
            vec![node(0, &[0]), node(1, &[1]), node(2, &[0, 2])],
            3,
            CoalitionParams::default(),
        );
        assert_eq!(g.coalition_bandwidth(&coal(&[0])).unwrap(), 10.0);
        assert_eq!(g.coalition_bandwidth(&coal(&[0, 1])).unwrap(), 30.0);
        // RSU 0 is served by nodes 0 and 2 and is counted once
        assert_eq!(g.coalition_bandwidth(&coal(&[0, 2])).unwrap(), 15.0);
        assert!(matches!(
            g.coalition_bandwidth(&coal(&[9])),
            Err(CoalitionError::UnknownNode(NodeId(9)))
        ));
    }

    #[test]
    fn contribution_examples() {
        let p = CoalitionParams::default();
        let all = game(
            (0..4).map(|i| rsu(i, 1.0, 1.0)).collect(),
            vec![node(0, &[0, 1, 2, 3])],
            4,
            p.clone(),
        );
        assert_abs_diff_eq!(all.contribution_value(&coal(&[0])).unwrap(), 1.0, epsilon = 1e-12);

        let half = game(
            vec![rsu(0, 0.9, 1.0), rsu(1, 0.7, 1.0), rsu(2, 0.1, 1.0), rsu(3, 0.1, 1.0)],
            vec![node(0, &[0, 1]), node(1, &[2, 3])],
            4,
            p.clone(),
        );
        assert_abs_diff_eq!(half.contribution_value(&coal(&[0])).unwrap(), 0.65, epsilon = 1e-12);

        let single = game(vec![rsu(0, 0.6, 1.0)], vec![node(0, &[0])], 200, p);
        assert_abs_diff_eq!(single.contribution_value(&coal(&[0])).unwrap(), 0.3025, epsilon = 1e-12);
    }

    #[test]
    fn latency_examples() {
        let k = 38.54;
        assert_eq!(service_latency(0.0, 0.5, 10.0, k).unwrap(), 0.0);
        assert_abs_diff_eq!(service_latency(500.0, 0.5, 10.0, k).unwrap(), 250.0 / 385.4, epsilon = 1e-12);
        assert_abs_diff_eq!(service_latency(500.0, 0.5, 10.0, k).unwrap(), 0.6487, epsilon = 1e-4);
        assert_eq!(
            service_latency(500.0, 0.5, 20.0, k).unwrap() * 2.0,
            service_latency(500.0, 0.5, 10.0, k).unwrap()
        );
        assert_eq!(service_latency(500.0, 0.5, 0.0, k), Err(CoalitionError::Infeasible));
    }

    #[test]
    fn cost_examples() {
        assert_eq!(communication_cost(1, 10, 0.1), 0.0);
        assert_abs_diff_eq!(communication_cost(2, 10, 0.1), -(0.81f64).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(communication_cost(2, 10, 0.1), 0.2107, epsilon = 1e-4);
        assert_abs_diff_eq!(communication_cost(10, 10, 0.1), 4.6052, epsilon = 1e-4);
        assert!(communication_cost(10, 10, 0.1).is_finite());
    }

    #[test]
    fn utility_composition() {
        let mut p = CoalitionParams::default();
        p.gamma = 0.0;
        p.sigma = 0.0;
        let rsus = vec![rsu(0, 0.9, 4.0), rsu(1, 0.5, 6.0)];
        let nodes = vec![node(0, &[0]), node(1, &[1])];
        let g = game(rsus.clone(), nodes.clone(), 2, p);
        let c = coal(&[0, 1]);
        assert_eq!(g.coalition_utility(&c).unwrap(), g.contribution_value(&c).unwrap());

        let g = game(rsus, nodes, 2, CoalitionParams::default());
        let s = coal(&[1]);
        let expect = g.contribution_value(&s).unwrap() + (1.0 / g.service_latency(&s).unwrap()).ln_1p();
        assert_abs_diff_eq!(g.coalition_utility(&s).unwrap(), expect, epsilon = 1e-12);

        let pair = g.coalition_utility(&c).unwrap();
        let expect = g.contribution_value(&c).unwrap() + (1.0 / g.service_latency(&c).unwrap()).ln_1p()
            - g.communication_cost(&c);
        assert_abs_diff_eq!(pair, expect, epsilon = 1e-12);
    }

    #[test]
    fn utility_worked_example() {
        // Q = 0.65, I = 0.6487, sigma * C = 0.1, gamma = 1
        let u = 0.65 + (1.0f64 + 1.0 / 0.6487).ln() - 0.1;
        assert_abs_diff_eq!(u, 1.4828, epsilon = 1e-4);
    }

    #[test]
    fn zero_bandwidth_is_infeasible() {
        let g = game(vec![rsu(0, 0.9, 0.0)], vec![node(0, &[0])], 1, CoalitionParams::default());
        assert_eq!(g.coalition_utility(&coal(&[0])), Err(CoalitionError::Infeasible));
    }

    #[test]
    fn set_partition_counts_are_bell_numbers() {
        let bell = [1, 1, 2, 5, 15, 52, 203];
        for (n, &b) in bell.iter().enumerate().skip(1) {
            let items: Vec<usize> = (0..n).collect();
            assert_eq!(set_partitions(&items).len(), b);
        }
    }

    #[test]
    fn partition_rejects_overlap() {
        assert!(Partition::new(vec![coal(&[0, 1]), coal(&[1, 2])]).is_err());
        assert!(Coalition::new(std::iter::empty()).is_err());
    }

    #[test]
    fn single_node_forms_singleton() {
        let g = game(vec![rsu(0, 0.9, 5.0)], vec![node(0, &[0])], 1, CoalitionParams::default());
        let f = form_coalitions(&g, 1).unwrap();
        assert_eq!(f.partition.coalitions(), &[coal(&[0])]);
        assert!(f.steps.is_empty());
    }

    fn strong_pair(n: u32) -> CoalitionGame {
        let mut rsus = vec![rsu(0, 0.9, 10.0), rsu(1, 0.9, 10.0)];
        rsus.extend((2..n).map(|i| rsu(i, 0.55, 0.5)));
        let nodes = (0..n).map(|i| node(i, &[i])).collect();
        game(rsus, nodes, n as usize, CoalitionParams::default())
    }

    #[test]
    fn strong_nodes_gain_from_merging() {
        let g = strong_pair(10);
        let u0 = g.coalition_utility(&coal(&[0])).unwrap();
        let u01 = g.coalition_utility(&coal(&[0, 1])).unwrap();
        assert!(u01 > u0, "{u01} vs {u0}");
        let f = form_coalitions(&g, 3).unwrap();
        assert!(f.merges() >= 1);
        assert!(check_dhp_stability(&f.partition, &g).unwrap());
        let mut prev = &f.initial;
        for step in &f.steps {
            assert!(pareto_prefers(&step.partition, prev, &g).unwrap());
            prev = &step.partition;
        }
    }

    #[test]
    fn cost_keeps_two_node_game_apart() {
        // with N = 2 the pair cost -ln(0.05) outweighs the gains
        let g = game(
            vec![rsu(0, 0.9, 10.0), rsu(1, 0.9, 10.0)],
            vec![node(0, &[0]), node(1, &[1])],
            2,
            CoalitionParams::default(),
        );
        let f = form_coalitions(&g, 3).unwrap();
        assert_eq!(f.partition.coalitions().len(), 2);
        assert!(f.steps.is_empty());
    }

    #[test]
    fn pareto_basics() {
        let g = strong_pair(10);
        let singles = Partition::singletons((0..10).map(NodeId));
        assert!(!pareto_prefers(&singles, &singles, &g).unwrap());
        let mut parts = vec![coal(&[0, 1])];
        parts.extend((2..10).map(|i| coal(&[i])));
        let merged = Partition::new(parts).unwrap();
        assert!(pareto_prefers(&merged, &singles, &g).unwrap());
        assert!(!pareto_prefers(&singles, &merged, &g).unwrap());
        let other = Partition::singletons([NodeId(0), NodeId(1)]);
        assert_eq!(pareto_prefers(&other, &singles, &g), Err(CoalitionError::MismatchedNodes));
    }

    #[test]
    fn select_best_breaks_ties_lexicographically() {
        let g = game(
            vec![rsu(0, 0.8, 5.0), rsu(1, 0.8, 5.0), rsu(2, 0.1, 1.0)],
            vec![node(0, &[0]), node(1, &[1]), node(2, &[2])],
            3,
            CoalitionParams::default(),
        );
        let p = Partition::new(vec![coal(&[1]), coal(&[0]), coal(&[2])]).unwrap();
        assert_eq!(select_best(&p, &g).unwrap(), coal(&[0]));
        let single = Partition::new(vec![coal(&[0, 1, 2])]).unwrap();
        assert_eq!(select_best(&single, &g).unwrap(), coal(&[0, 1, 2]));
    }

    #[test]
    fn stability_check_limits_size() {
        let rsus: Vec<_> = (0..11).map(|i| rsu(i, 0.9, 1.0)).collect();
        let nodes: Vec<_> = (0..11).map(|i| node(i, &[i])).collect();
        let g = game(rsus, nodes, 11, CoalitionParams::default());
        let p = Partition::singletons((0..11).map(NodeId));
        assert!(matches!(
            check_dhp_stability(&p, &g),
            Err(CoalitionError::TooLarge { nodes: 11, .. })
        ));
    }
}
