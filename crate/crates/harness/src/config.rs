//! Scenario configuration.
//!
//! Configs are TOML files; every key is optional and falls back to the
//! defaults below. Unknown keys are rejected so typos surface early.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vtmig_core::coalition::CoalitionParams;
use vtmig_core::consensus::{ConsensusParams, TierProportions};
use vtmig_core::reputation::ReputationParams;
use vtmig_core::stackelberg::MarketParams;
use vtmig_core::ChannelParams;

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub population: PopulationConfig,
    pub reputation: ReputationConfig,
    pub coalition: CoalitionConfig,
    pub channel: ChannelConfig,
    pub migration: MigrationConfig,
    pub market: MarketConfig,
    pub consensus: ConsensusConfig,
    pub experiments: ExperimentsConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            output_dir: PathBuf::from("out"),
            population: PopulationConfig::default(),
            reputation: ReputationConfig::default(),
            coalition: CoalitionConfig::default(),
            channel: ChannelConfig::default(),
            migration: MigrationConfig::default(),
            market: MarketConfig::default(),
            consensus: ConsensusConfig::default(),
            experiments: ExperimentsConfig::default(),
        }
    }
}

/// RSU/VMU world used by the coalition experiments and the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub rsus: usize,
    pub vmus: usize,
    pub nodes: usize,
    /// Chance that an RSU is also served by a second node.
    pub overlap: f64,
    /// Offered bandwidth range per RSU, MHz.
    pub bandwidth_min: f64,
    pub bandwidth_max: f64,
    /// Interaction windows observed before reputations are evaluated.
    pub history: u32,
    /// Upper ends of the per-window interaction frequencies.
    pub positive_max: f64,
    pub negative_max: f64,
    /// Share of RSUs that misbehave in the pipeline run.
    pub misbehavior_ratio: f64,
    /// Latency-sensitivity range of the VMUs in the pipeline market.
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            rsus: 200,
            vmus: 20,
            nodes: 10,
            overlap: 0.1,
            bandwidth_min: 1.0,
            bandwidth_max: 10.0,
            history: 5,
            positive_max: 100.0,
            negative_max: 200.0,
            misbehavior_ratio: 0.2,
            alpha_min: 0.1,
            alpha_max: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReputationConfig {
    /// Weight of positive interactions; the negative weight is `1 - delta1`.
    pub delta1: f64,
    pub xi: f64,
    pub theta: f64,
    pub c: f64,
    pub tau: u32,
    pub base_rate: f64,
    pub rho: f64,
    /// RSUs below this reputation are excluded from coalition formation.
    pub threshold: f64,
}

impl Default for ReputationConfig {
    fn default() -> Self {
        let p = ReputationParams::default();
        Self {
            delta1: p.delta1,
            xi: p.xi,
            theta: p.theta,
            c: p.c,
            tau: p.tau,
            base_rate: p.base_rate,
            rho: p.rho,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoalitionConfig {
    pub zeta1: f64,
    pub zeta2: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub epsilon_cost: f64,
}

impl Default for CoalitionConfig {
    fn default() -> Self {
        let p = CoalitionParams::default();
        Self {
            zeta1: p.zeta1,
            zeta2: p.zeta2,
            gamma: p.gamma,
            sigma: p.sigma,
            epsilon_cost: p.epsilon_cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub tx_power_dbm: f64,
    pub unit_gain_db: f64,
    pub distance_m: f64,
    pub pathloss_exp: f64,
    /// Same power reference as `tx_power_dbm`.
    pub noise_power_dbm: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let c = ChannelParams::default();
        Self {
            tx_power_dbm: c.tx_power_dbm,
            unit_gain_db: c.unit_gain_db,
            distance_m: c.distance_m,
            pathloss_exp: c.pathloss_exp,
            noise_power_dbm: c.noise_power_dbm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MigrationConfig {
    /// VT data size as quoted (MB).
    pub data_size: f64,
    /// Factor applied to `data_size` before it enters the latency model.
    pub data_size_scale: f64,
    /// Data compression ratio.
    pub compression: f64,
}

impl Default for MigrationConfig {
    fn default() -> Self {
        Self {
            data_size: 500.0,
            data_size_scale: 0.001,
            compression: 0.5,
        }
    }
}

impl MigrationConfig {
    pub fn effective_data_size(&self) -> f64 {
        self.data_size * self.data_size_scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub cost: f64,
    pub price_max: f64,
    /// Bandwidth on sale in the standalone market sweeps, MHz. The pipeline
    /// uses the selected coalition's bandwidth instead.
    pub bandwidth_max: f64,
    /// Price grid step; 1% of the price range when absent.
    pub grid_step: Option<f64>,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            cost: 5.0,
            price_max: 100.0,
            bandwidth_max: 100.0,
            grid_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusConfig {
    pub p_malicious: f64,
    pub bonus: f64,
    pub penalty: f64,
    pub tier_a: f64,
    pub tier_b: f64,
    pub tier_c: f64,
    /// Block rounds in the pipeline; RSUs are re-tiered before each.
    pub rounds: usize,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        let p = ConsensusParams::default();
        Self {
            p_malicious: p.p_malicious,
            bonus: p.bonus,
            penalty: p.penalty,
            tier_a: p.tiers.a,
            tier_b: p.tiers.b,
            tier_c: p.tiers.c,
            rounds: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentsConfig {
    pub reputation_decay: DecayConfig,
    pub coalition_distribution: DistributionConfig,
    pub formation_time: FormationTimeConfig,
    pub misbehavior_sweep: MisbehaviorConfig,
    pub consensus_security: SecurityConfig,
    pub market_demand: DemandConfig,
    pub market_price: PriceSweepConfig,
    pub market_utility: PriceSweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayConfig {
    pub vmus: usize,
    pub horizon: i64,
    /// First window in which the RSU misbehaves.
    pub onset: i64,
    /// Reputation the synthetic history before `onset` must produce.
    pub initial_reputation: f64,
    /// Share of VMUs the RSU keeps serving well.
    pub positive_share: f64,
    /// Positive interactions per window for the well-served VMUs.
    pub positive_rate: f64,
    /// Negative interactions per window grow by this much each window.
    pub negative_ramp: f64,
    pub threshold: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            vmus: 100,
            horizon: 20,
            onset: 3,
            initial_reputation: 0.7,
            positive_share: 0.1,
            positive_rate: 1.0,
            negative_ramp: 1.0,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionConfig {
    pub rsus: usize,
    pub nodes: Vec<usize>,
}

impl Default for DistributionConfig {
    fn default() -> Self {
        Self {
            rsus: 200,
            nodes: vec![10, 15, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormationTimeConfig {
    pub rsus: Vec<usize>,
    pub nodes: Vec<usize>,
    pub repetitions: usize,
    /// Each timed sample batches runs until it lasts at least this long.
    pub min_sample_ms: f64,
}

impl Default for FormationTimeConfig {
    fn default() -> Self {
        Self {
            rsus: vec![100, 200],
            nodes: vec![5, 10, 15, 20, 25, 30, 35, 40],
            repetitions: 9,
            min_sample_ms: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MisbehaviorConfig {
    pub rsus: usize,
    pub nodes: Vec<usize>,
    pub ratios: Vec<f64>,
    /// Independent worlds averaged per cell.
    pub replicates: usize,
}

impl Default for MisbehaviorConfig {
    fn default() -> Self {
        Self {
            rsus: 200,
            nodes: vec![10, 15, 20],
            ratios: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            replicates: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityConfig {
    pub delegates: Vec<usize>,
    pub p_malicious: Vec<f64>,
    /// Simulated rounds per cell for the Monte Carlo column.
    pub mc_rounds: usize,
}

impl Default for SecurityConfig {
    fn default() -> Self {
        Self {
            delegates: (4..=40).step_by(3).collect(),
            p_malicious: vec![0.1, 0.2, 0.3],
            mc_rounds: 10_000,
        }
    }
}

fn alpha_axis() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandConfig {
    pub alphas: Vec<f64>,
    pub prices: Vec<f64>,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            alphas: alpha_axis(),
            prices: vec![10.0, 20.0, 30.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceSweepConfig {
    pub alphas: Vec<f64>,
    pub costs: Vec<f64>,
}

impl Default for PriceSweepConfig {
    fn default() -> Self {
        Self {
            alphas: alpha_axis(),
            costs: vec![5.0, 10.0, 15.0],
        }
    }
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> HarnessError {
    HarnessError::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn reputation_params(&self) -> ReputationParams {
        let r = &self.reputation;
        ReputationParams {
            delta1: r.delta1,
            delta2: 1.0 - r.delta1,
            xi: r.xi,
            theta: r.theta,
            c: r.c,
            tau: r.tau,
            base_rate: r.base_rate,
            rho: r.rho,
        }
    }

    pub fn channel_params(&self) -> ChannelParams {
        let c = &self.channel;
        ChannelParams {
            tx_power_dbm: c.tx_power_dbm,
            unit_gain_db: c.unit_gain_db,
            distance_m: c.distance_m,
            pathloss_exp: c.pathloss_exp,
            noise_power_dbm: c.noise_power_dbm,
        }
    }

    pub fn coalition_params(&self) -> CoalitionParams {
        let c = &self.coalition;
        CoalitionParams {
            zeta1: c.zeta1,
            zeta2: c.zeta2,
            gamma: c.gamma,
            sigma: c.sigma,
            epsilon_cost: c.epsilon_cost,
            data_size: self.migration.effective_data_size(),
            compression: self.migration.compression,
            reputation_threshold: self.reputation.threshold,
            channel: self.channel_params(),
        }
    }

    /// Market parameters with the given unit cost and bandwidth on sale.
    pub fn market_params(&self, cost: f64, bandwidth_max: f64) -> MarketParams {
        MarketParams {
            cost,
            price_max: self.market.price_max,
            bandwidth_max,
            compression: self.migration.compression,
            channel: self.channel_params(),
            grid_step: self.market.grid_step,
        }
    }

    pub fn consensus_params(&self) -> ConsensusParams {
        let c = &self.consensus;
        ConsensusParams {
            delegate_count: 1,
            p_malicious: c.p_malicious,
            bonus: c.bonus,
            penalty: c.penalty,
            tiers: TierProportions {
                a: c.tier_a,
                b: c.tier_b,
                c: c.tier_c,
            },
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        use vtmig_core::coalition::CoalitionError;
        use vtmig_core::consensus::ConsensusError;
        use vtmig_core::reputation::ReputationError;
        use vtmig_core::stackelberg::MarketError;

        if let Err(ReputationError::InvalidParams { field, reason }) = self.reputation_params().validate() {
            // delta2 is derived, so blame the knob the user actually sets
            let field = if field == "delta2" { "delta1" } else { field };
            return Err(invalid(format!("reputation.{field}"), reason));
        }
        if !(0.0..=1.0).contains(&self.reputation.threshold) {
            return Err(invalid("reputation.threshold", "must lie in [0, 1]"));
        }
        if let Err(reason) = self.channel_params().validate() {
            return Err(invalid("channel", reason));
        }
        if let Err(CoalitionError::InvalidParams { field, reason }) = self.coalition_params().validate() {
            let section = match field {
                "data_size" | "compression" => "migration",
                _ => "coalition",
            };
            return Err(invalid(format!("{section}.{field}"), reason));
        }
        if let Err(MarketError::InvalidParams { field, reason }) =
            self.market_params(self.market.cost, self.market.bandwidth_max).validate()
        {
            let section = if field == "compression" { "migration" } else { "market" };
            return Err(invalid(format!("{section}.{field}"), reason));
        }
        if let Err(ConsensusError::InvalidParams { field, reason }) = self.consensus_params().validate() {
            return Err(invalid(format!("consensus.{field}"), reason));
        }
        if self.consensus.rounds == 0 {
            return Err(invalid("consensus.rounds", "must be at least 1"));
        }

        let p = &self.population;
        if p.rsus == 0 {
            return Err(invalid("population.rsus", "must be positive"));
        }
        if p.vmus == 0 {
            return Err(invalid("population.vmus", "must be positive"));
        }
        if p.nodes == 0 || p.nodes > p.rsus {
            return Err(invalid("population.nodes", "must lie in [1, rsus]"));
        }
        if !(0.0..=1.0).contains(&p.overlap) {
            return Err(invalid("population.overlap", "must lie in [0, 1]"));
        }
        if !(p.bandwidth_min > 0.0 && p.bandwidth_max >= p.bandwidth_min) {
            return Err(invalid("population.bandwidth_min", "need 0 < bandwidth_min <= bandwidth_max"));
        }
        if p.history == 0 {
            return Err(invalid("population.history", "must be at least 1"));
        }
        if !(p.positive_max > 0.0 && p.negative_max > 0.0) {
            return Err(invalid("population.positive_max", "interaction ranges must be positive"));
        }
        if !(0.0..=1.0).contains(&p.misbehavior_ratio) {
            return Err(invalid("population.misbehavior_ratio", "must lie in [0, 1]"));
        }
        if !(p.alpha_min > 0.0 && p.alpha_max < 1.0 && p.alpha_min <= p.alpha_max) {
            return Err(invalid("population.alpha_min", "need 0 < alpha_min <= alpha_max < 1"));
        }
        if self.migration.data_size_scale <= 0.0 {
            return Err(invalid("migration.data_size_scale", "must be positive"));
        }
        self.validate_experiments()
    }

    fn validate_experiments(&self) -> Result<(), HarnessError> {
        let e = &self.experiments;
        let d = &e.reputation_decay;
        if d.vmus < 2 {
            return Err(invalid("experiments.reputation_decay.vmus", "need at least 2 VMUs"));
        }
        if !(d.onset >= 1 && d.horizon >= d.onset) {
            return Err(invalid("experiments.reputation_decay.onset", "need 1 <= onset <= horizon"));
        }
        if !(d.initial_reputation > 0.0 && d.initial_reputation < 1.0) {
            return Err(invalid("experiments.reputation_decay.initial_reputation", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&d.positive_share) {
            return Err(invalid("experiments.reputation_decay.positive_share", "must lie in [0, 1]"));
        }
        if d.positive_rate < 0.0 || d.negative_ramp < 0.0 {
            return Err(invalid("experiments.reputation_decay.positive_rate", "rates must be non-negative"));
        }
        let nodes_ok = |rsus: usize, nodes: &[usize]| nodes.iter().all(|&n| n >= 1 && n <= rsus);
        if !nodes_ok(e.coalition_distribution.rsus, &e.coalition_distribution.nodes) {
            return Err(invalid("experiments.coalition_distribution.nodes", "need 1 <= nodes <= rsus"));
        }
        let ft = &e.formation_time;
        if ft.rsus.iter().any(|&r| !nodes_ok(r, &ft.nodes)) {
            return Err(invalid("experiments.formation_time.nodes", "need 1 <= nodes <= rsus"));
        }
        if ft.repetitions < 5 {
            return Err(invalid("experiments.formation_time.repetitions", "need at least 5"));
        }
        let ms = &e.misbehavior_sweep;
        if !nodes_ok(ms.rsus, &ms.nodes) {
            return Err(invalid("experiments.misbehavior_sweep.nodes", "need 1 <= nodes <= rsus"));
        }
        if ms.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(invalid("experiments.misbehavior_sweep.ratios", "must lie in [0, 1]"));
        }
        if ms.replicates == 0 {
            return Err(invalid("experiments.misbehavior_sweep.replicates", "must be positive"));
        }
        let cs = &e.consensus_security;
        if cs.delegates.contains(&0) {
            return Err(invalid("experiments.consensus_security.delegates", "must be positive"));
        }
        if cs.p_malicious.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("experiments.consensus_security.p_malicious", "must lie in [0, 1]"));
        }
        if cs.mc_rounds == 0 {
            return Err(invalid("experiments.consensus_security.mc_rounds", "must be positive"));
        }
        let alphas_ok = |a: &[f64]| a.iter().all(|&x| x > 0.0 && x < 1.0);
        if !alphas_ok(&e.market_demand.alphas) {
            return Err(invalid("experiments.market_demand.alphas", "must lie in (0, 1)"));
        }
        if e.market_demand.prices.iter().any(|&p| !(p > 0.0)) {
            return Err(invalid("experiments.market_demand.prices", "must be positive"));
        }
        for (name, sweep) in [("market_price", &e.market_price), ("market_utility", &e.market_utility)] {
            if !alphas_ok(&sweep.alphas) {
                return Err(invalid(format!("experiments.{name}.alphas"), "must lie in (0, 1)"));
            }
            if sweep.costs.iter().any(|&c| !(c > 0.0 && c <= self.market.price_max)) {
                return Err(invalid(format!("experiments.{name}.costs"), "must lie in (0, price_max]"));
            }
        }
        Ok(())
    }

    /// Dotted `key = value` lines for every setting that differs from the
    /// defaults. Output location is not a model parameter and is skipped.
    pub fn overrides(&self) -> Vec<String> {
        let mine = toml::Value::try_from(self).expect("config serialises");
        let base = toml::Value::try_from(Self::default()).expect("config serialises");
        let mut out = Vec::new();
        diff("", &mine, Some(&base), &mut out);
        out.retain(|line| !line.starts_with("output_dir ") && !line.starts_with("seed "));
        out
    }
}

fn diff(prefix: &str, mine: &toml::Value, base: Option<&toml::Value>, out: &mut Vec<String>) {
    match (mine, base) {
        (toml::Value::Table(t), Some(toml::Value::Table(b))) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                diff(&key, v, b.get(k), out);
            }
        }
        (v, Some(b)) if v == b => {}
        (v, _) => {
            let mut line = String::new();
            let _ = write!(line, "{prefix} = {v}");
            out.push(line);
        }
    }
}
