//! The experiment families and their sweeps.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vtmig_core::coalition::{form_coalitions, select_best, Coalition, CoalitionGame};
use vtmig_core::consensus::{empirical_acceptance, security_probability};
use vtmig_core::stackelberg::{
    best_response, closed_form_price, solve_grid, vmu_utility, MarketParams, MarketStatus, PriceRegime, VmuProfile,
};
use vtmig_core::VmuId;

use crate::config::ScenarioConfig;
use crate::decay::run_decay;
use crate::error::HarnessError;
use crate::result::{Cell, ExperimentResult, ExperimentRun};
use crate::scenario::{derive_seed, node_composition, World, TAG_CONSENSUS, TAG_FORMATION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    ReputationDecay,
    CoalitionDistribution,
    FormationTime,
    MisbehaviorSweep,
    ConsensusSecurity,
    MarketDemand,
    MarketPrice,
    MarketUtility,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::ReputationDecay,
        Experiment::CoalitionDistribution,
        Experiment::FormationTime,
        Experiment::MisbehaviorSweep,
        Experiment::ConsensusSecurity,
        Experiment::MarketDemand,
        Experiment::MarketPrice,
        Experiment::MarketUtility,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::ReputationDecay => "reputation-decay",
            Experiment::CoalitionDistribution => "coalition-distribution",
            Experiment::FormationTime => "formation-time",
            Experiment::MisbehaviorSweep => "misbehavior-sweep",
            Experiment::ConsensusSecurity => "consensus-security",
            Experiment::MarketDemand => "market-demand",
            Experiment::MarketPrice => "market-price",
            Experiment::MarketUtility => "market-utility",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::ReputationDecay => "reputation of an RSU that starts misbehaving, four scoring variants",
            Experiment::CoalitionDistribution => "final coalitions per node count",
            Experiment::FormationTime => "merge-and-split effort and wall-clock time per (RSUs, nodes)",
            Experiment::MisbehaviorSweep => "selected-coalition reputation vs misbehavior ratio, with and without exclusion",
            Experiment::ConsensusSecurity => "validator-group safety probability, analytic and simulated",
            Experiment::MarketDemand => "VMU bandwidth demand over latency sensitivity and price",
            Experiment::MarketPrice => "leader price over latency sensitivity and unit cost",
            Experiment::MarketUtility => "leader utility over latency sensitivity and unit cost",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| HarnessError::UnknownExperiment(s.to_string()))
    }
}

const UNITS: &str = "bandwidth MHz; price and cost per MHz; latency s; data size MB scaled by migration.data_size_scale; time in interaction windows";

fn standard_metadata(r: &mut ExperimentResult, cfg: &ScenarioConfig, grid_step: &str) {
    r.meta("experiment", r.name.clone());
    r.meta("seed", cfg.seed);
    r.meta("version", env!("CARGO_PKG_VERSION"));
    r.meta("units", UNITS);
    r.meta("grid_step", grid_step);
    let overrides = cfg.overrides();
    if overrides.is_empty() {
        r.meta("overrides", "none");
    } else {
        r.meta("overrides", overrides.join("; "));
    }
}

fn grid_step_label(cfg: &ScenarioConfig) -> String {
    match cfg.market.grid_step {
        Some(s) => s.to_string(),
        None => "0.01 * (price_max - cost)".into(),
    }
}

pub fn run_experiment(exp: Experiment, cfg: &ScenarioConfig) -> Result<ExperimentRun, HarnessError> {
    cfg.validate()?;
    let mut run = match exp {
        Experiment::ReputationDecay => reputation_decay(cfg)?,
        Experiment::CoalitionDistribution => coalition_distribution(cfg)?,
        Experiment::FormationTime => formation_time(cfg)?,
        Experiment::MisbehaviorSweep => misbehavior_sweep(cfg)?,
        Experiment::ConsensusSecurity => consensus_security(cfg),
        Experiment::MarketDemand => market_demand(cfg),
        Experiment::MarketPrice => market_sweep(cfg, Experiment::MarketPrice)?,
        Experiment::MarketUtility => market_sweep(cfg, Experiment::MarketUtility)?,
    };
    let step = match exp {
        Experiment::MarketDemand | Experiment::MarketPrice | Experiment::MarketUtility => grid_step_label(cfg),
        _ => "n/a".into(),
    };
    for r in std::iter::once(&mut run.result).chain(run.sidecars.iter_mut()) {
        let extra = std::mem::take(&mut r.metadata);
        standard_metadata(r, cfg, &step);
        r.metadata.extend(extra);
    }
    Ok(run)
}

pub fn run_named(name: &str, cfg: &ScenarioConfig) -> Result<ExperimentRun, HarnessError> {
    run_experiment(name.parse()?, cfg)
}

fn single(result: ExperimentResult) -> ExperimentRun {
    ExperimentRun {
        result,
        sidecars: Vec::new(),
    }
}

fn reputation_decay(cfg: &ScenarioConfig) -> Result<ExperimentRun, HarnessError> {
    let d = &cfg.experiments.reputation_decay;
    let run = run_decay(cfg)?;
    let mut r = ExperimentResult::new(
        Experiment::ReputationDecay.name(),
        &["t"],
        &["fresh_recommended", "flat_recommended", "local_only", "no_protection"],
    );
    for row in &run.rows {
        r.push(vec![
            row.t.into(),
            row.fresh.into(),
            row.flat.into(),
            row.local_only.into(),
            row.no_protection.into(),
        ]);
    }
    let crossing = |c: Option<i64>| c.map_or("none".to_string(), |t| t.to_string());
    r.meta("threshold", d.threshold);
    r.meta("initial_positive_rate", run.initial_rate);
    r.meta("positive_vmus", run.positive.iter().filter(|&&g| g).count());
    r.meta("tracked_vmu", run.tracked_vmu);
    r.meta("fresh_crossing", crossing(run.crossing(d.threshold, |x| x.fresh)));
    r.meta("flat_crossing", crossing(run.crossing(d.threshold, |x| x.flat)));
    Ok(single(r))
}

/// Seed of the world shared by every cell with `rsus` RSUs.
pub fn world_seed(cfg: &ScenarioConfig, rsus: usize, replicate: usize) -> u64 {
    derive_seed(cfg.seed, &[rsus as u64, replicate as u64])
}

pub fn formation_seed(cfg: &ScenarioConfig, rsus: usize, nodes: usize) -> u64 {
    derive_seed(cfg.seed, &[TAG_FORMATION, rsus as u64, nodes as u64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionStats {
    pub rsus: usize,
    pub bandwidth: f64,
    pub mean_reputation: f64,
    pub utility: f64,
}

pub fn coalition_stats(game: &CoalitionGame, coal: &Coalition) -> CoalitionStats {
    let members = game.member_rsus(coal).expect("coalition from this game");
    let reps: Vec<f64> = game
        .population()
        .rsus
        .iter()
        .filter(|r| members.contains(&r.id))
        .map(|r| r.reputation)
        .collect();
    CoalitionStats {
        rsus: members.len(),
        bandwidth: game.coalition_bandwidth(coal).expect("coalition from this game"),
        mean_reputation: reps.iter().sum::<f64>() / reps.len() as f64,
        utility: game.coalition_utility(coal).unwrap_or(f64::NEG_INFINITY),
    }
}

fn join_ids(ids: &BTreeSet<vtmig_core::NodeId>) -> String {
    ids.iter().map(|n| n.0.to_string()).collect::<Vec<_>>().join(";")
}

fn sweep_err(experiment: Experiment, coords: String) -> impl FnOnce(vtmig_core::coalition::CoalitionError) -> HarnessError {
    move |e| HarnessError::Sweep {
        experiment: experiment.name(),
        coords,
        message: e.to_string(),
    }
}

fn coalition_distribution(cfg: &ScenarioConfig) -> Result<ExperimentRun, HarnessError> {
    let d = &cfg.experiments.coalition_distribution;
    let seed = world_seed(cfg, d.rsus, 0);
    let world = World::generate(cfg, d.rsus, cfg.population.misbehavior_ratio, seed);
    let threshold = Some(cfg.reputation.threshold);
    let mut r = ExperimentResult::new(
        Experiment::CoalitionDistribution.name(),
        &["nodes", "coalition"],
        &["node_count", "rsu_count", "bandwidth", "mean_reputation", "utility", "selected", "members"],
    );
    r.meta("rsus", d.rsus);
    r.meta("misbehavior_ratio", cfg.population.misbehavior_ratio);
    r.meta("excluded_rsus", world.admitted(threshold).iter().filter(|&&a| !a).count());
    for &n in &d.nodes {
        let comp = node_composition(d.rsus, n, cfg.population.overlap, seed);
        let Some(game) = world.game(cfg, &comp, threshold) else {
            r.meta(format!("nodes_{n}"), "no admitted RSUs");
            continue;
        };
        let formed = form_coalitions(&game, formation_seed(cfg, d.rsus, n))
            .map_err(sweep_err(Experiment::CoalitionDistribution, format!("nodes={n}")))?;
        let best = select_best(&formed.partition, &game)
            .map_err(sweep_err(Experiment::CoalitionDistribution, format!("nodes={n}")))?;
        let mut coalitions: Vec<(Coalition, CoalitionStats)> = formed
            .partition
            .coalitions()
            .iter()
            .map(|c| (c.clone(), coalition_stats(&game, c)))
            .collect();
        coalitions.sort_by(|a, b| b.1.rsus.cmp(&a.1.rsus).then_with(|| a.0.cmp(&b.0)));
        for (i, (c, s)) in coalitions.iter().enumerate() {
            r.push(vec![
                n.into(),
                (i + 1).into(),
                c.len().into(),
                s.rsus.into(),
                s.bandwidth.into(),
                s.mean_reputation.into(),
                s.utility.into(),
                (*c == best).into(),
                join_ids(c.node_ids()).into(),
            ]);
        }
    }
    Ok(single(r))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn formation_time(cfg: &ScenarioConfig) -> Result<ExperimentRun, HarnessError> {
    let ft = &cfg.experiments.formation_time;
    let threshold = Some(cfg.reputation.threshold);
    let mut r = ExperimentResult::new(
        Experiment::FormationTime.name(),
        &["rsus", "nodes"],
        &["participating_nodes", "coalitions", "merges", "splits", "utility_evaluations"],
    );
    let mut cells = Vec::new();
    for &rsus in &ft.rsus {
        let seed = world_seed(cfg, rsus, 0);
        let world = World::generate(cfg, rsus, cfg.population.misbehavior_ratio, seed);
        for &n in &ft.nodes {
            let coords = format!("rsus={rsus}, nodes={n}");
            let comp = node_composition(rsus, n, cfg.population.overlap, seed);
            let Some(game) = world.game(cfg, &comp, threshold) else {
                return Err(HarnessError::Sweep {
                    experiment: Experiment::FormationTime.name(),
                    coords,
                    message: "no admitted RSUs".into(),
                });
            };
            let fseed = formation_seed(cfg, rsus, n);
            let formed = form_coalitions(&game, fseed).map_err(sweep_err(Experiment::FormationTime, coords))?;
            r.push(vec![
                rsus.into(),
                n.into(),
                game.node_count().into(),
                formed.partition.coalitions().len().into(),
                formed.merges().into(),
                formed.splits().into(),
                formed.utility_evaluations.into(),
            ]);
            cells.push((rsus, n, game, fseed));
        }
    }

    // batch short runs so each sample lasts at least min_sample_ms
    let batches: Vec<usize> = cells
        .iter()
        .map(|(_, _, game, fseed)| {
            let start = Instant::now();
            let _ = std::hint::black_box(form_coalitions(game, *fseed));
            let once = start.elapsed().as_secs_f64() * 1e3;
            ((ft.min_sample_ms / once.max(1e-6)).ceil() as usize).max(1)
        })
        .collect();
    // repetitions sweep every cell in turn so slow spells of the machine are
    // shared across cells instead of landing on one
    let mut samples = vec![Vec::with_capacity(ft.repetitions); cells.len()];
    for _ in 0..ft.repetitions {
        for (i, (_, _, game, fseed)) in cells.iter().enumerate() {
            let start = Instant::now();
            for _ in 0..batches[i] {
                let _ = std::hint::black_box(form_coalitions(game, *fseed));
            }
            samples[i].push(start.elapsed().as_secs_f64() * 1e3 / batches[i] as f64);
        }
    }

    let mut timing = ExperimentResult::new(
        format!("{}.timing", Experiment::FormationTime.name()),
        &["rsus", "nodes"],
        &["repetitions", "batch", "median_ms", "min_ms", "max_ms"],
    );
    timing.meta("note", "wall-clock, machine dependent; not reproducible byte for byte");
    for (i, (rsus, n, _, _)) in cells.iter().enumerate() {
        let s = &mut samples[i];
        let min = s.iter().copied().fold(f64::INFINITY, f64::min);
        let max = s.iter().copied().fold(0.0, f64::max);
        timing.push(vec![
            (*rsus).into(),
            (*n).into(),
            ft.repetitions.into(),
            batches[i].into(),
            median(s).into(),
            min.into(),
            max.into(),
        ]);
    }
    Ok(ExperimentRun {
        result: r,
        sidecars: vec![timing],
    })
}

/// Formation seed of one misbehavior-sweep replicate.
pub fn replicate_formation_seed(world_seed: u64, nodes: usize) -> u64 {
    derive_seed(world_seed, &[TAG_FORMATION, nodes as u64])
}

/// Mean reputation of the selected coalition's RSUs for one world, node
/// count and exclusion setting. `None` when no RSU is admitted.
pub fn selected_reputation(
    cfg: &ScenarioConfig,
    world: &World,
    comp: &[BTreeSet<usize>],
    exclusion: bool,
    fseed: u64,
) -> Result<Option<CoalitionStats>, vtmig_core::coalition::CoalitionError> {
    let threshold = exclusion.then_some(cfg.reputation.threshold);
    let Some(game) = world.game(cfg, comp, threshold) else {
        return Ok(None);
    };
    let formed = form_coalitions(&game, fseed)?;
    let best = select_best(&formed.partition, &game)?;
    Ok(Some(coalition_stats(&game, &best)))
}

fn misbehavior_sweep(cfg: &ScenarioConfig) -> Result<ExperimentRun, HarnessError> {
    let ms = &cfg.experiments.misbehavior_sweep;
    // [node][ratio][exclusion] -> (sum rep, sum rsus, sum excluded, count)
    let mut acc = vec![vec![[(0.0, 0.0, 0.0, 0usize); 2]; ms.ratios.len()]; ms.nodes.len()];
    for rep in 0..ms.replicates {
        let seed = world_seed(cfg, ms.rsus, rep);
        for (ri, &ratio) in ms.ratios.iter().enumerate() {
            let world = World::generate(cfg, ms.rsus, ratio, seed);
            let excluded = world.admitted(Some(cfg.reputation.threshold)).iter().filter(|&&a| !a).count();
            for (ni, &n) in ms.nodes.iter().enumerate() {
                let comp = node_composition(ms.rsus, n, cfg.population.overlap, seed);
                for (ei, exclusion) in [true, false].into_iter().enumerate() {
                    let coords = format!("nodes={n}, ratio={ratio}, exclusion={exclusion}, replicate={rep}");
                    let fseed = replicate_formation_seed(seed, n);
                    let stats = selected_reputation(cfg, &world, &comp, exclusion, fseed)
                        .map_err(sweep_err(Experiment::MisbehaviorSweep, coords))?;
                    if let Some(s) = stats {
                        let cell = &mut acc[ni][ri][ei];
                        cell.0 += s.mean_reputation;
                        cell.1 += s.rsus as f64;
                        cell.2 += if exclusion { excluded as f64 } else { 0.0 };
                        cell.3 += 1;
                    }
                }
            }
        }
    }
    let mut r = ExperimentResult::new(
        Experiment::MisbehaviorSweep.name(),
        &["nodes", "ratio", "exclusion"],
        &["mean_reputation", "selected_rsus", "excluded_rsus", "replicates"],
    );
    r.meta("rsus", ms.rsus);
    for (ni, &n) in ms.nodes.iter().enumerate() {
        for (ri, &ratio) in ms.ratios.iter().enumerate() {
            for (ei, exclusion) in [true, false].into_iter().enumerate() {
                let (rep, rsus, excl, count) = acc[ni][ri][ei];
                let k = count as f64;
                r.push(vec![
                    n.into(),
                    ratio.into(),
                    exclusion.into(),
                    (rep / k).into(),
                    (rsus / k).into(),
                    (excl / k).into(),
                    count.into(),
                ]);
            }
        }
    }
    Ok(single(r))
}

pub fn mc_seed(cfg: &ScenarioConfig, n: usize, p: f64) -> u64 {
    derive_seed(cfg.seed, &[TAG_CONSENSUS, n as u64, p.to_bits()])
}

fn consensus_security(cfg: &ScenarioConfig) -> ExperimentRun {
    let cs = &cfg.experiments.consensus_security;
    let mut r = ExperimentResult::new(
        Experiment::ConsensusSecurity.name(),
        &["delegates", "p_malicious"],
        &["p_safety", "mc_acceptance", "mc_stderr"],
    );
    r.meta("mc_rounds", cs.mc_rounds);
    r.meta("retiering", "validators are re-tiered at the start of every round");
    for &n in &cs.delegates {
        for &p in &cs.p_malicious {
            let exact = security_probability(n, p);
            let mut rng = ChaCha8Rng::seed_from_u64(mc_seed(cfg, n, p));
            let mc = empirical_acceptance(n, p, cs.mc_rounds, &mut rng);
            let stderr = (exact * (1.0 - exact) / cs.mc_rounds as f64).sqrt();
            r.push(vec![n.into(), p.into(), exact.into(), mc.into(), stderr.into()]);
        }
    }
    single(r)
}

pub fn single_vmu(cfg: &ScenarioConfig, alpha: f64) -> VmuProfile {
    VmuProfile {
        id: VmuId(0),
        alpha,
        data_size: cfg.migration.effective_data_size(),
    }
}

/// Relative demand drop of a single VMU when the price moves `from -> to`.
pub fn demand_drop(cfg: &ScenarioConfig, alpha: f64, from: f64, to: f64) -> f64 {
    let m = cfg.market_params(cfg.market.cost, cfg.market.bandwidth_max);
    let v = single_vmu(cfg, alpha);
    1.0 - best_response(&v, to, &m) / best_response(&v, from, &m)
}

fn market_demand(cfg: &ScenarioConfig) -> ExperimentRun {
    let md = &cfg.experiments.market_demand;
    let m = cfg.market_params(cfg.market.cost, cfg.market.bandwidth_max);
    let mut r = ExperimentResult::new(
        Experiment::MarketDemand.name(),
        &["price", "alpha"],
        &["demand", "follower_utility"],
    );
    let offset = cfg.migration.effective_data_size() * cfg.migration.compression / m.efficiency();
    r.meta("cost", cfg.market.cost);
    r.meta("demand_offset", offset);
    r.meta("demand_drop_alpha_0.5_price_10_to_30", demand_drop(cfg, 0.5, 10.0, 30.0));
    for &price in &md.prices {
        for &alpha in &md.alphas {
            let v = single_vmu(cfg, alpha);
            let b = best_response(&v, price, &m);
            r.push(vec![price.into(), alpha.into(), b.into(), vmu_utility(&v, b, price, &m).into()]);
        }
    }
    single(r)
}

fn regime_label(regime: PriceRegime) -> &'static str {
    match regime {
        PriceRegime::Interior => "interior",
        PriceRegime::ClippedLow => "clipped-low",
        PriceRegime::ClippedHigh => "clipped-high",
        PriceRegime::PartialParticipation => "partial-participation",
        PriceRegime::Unbounded => "unbounded",
    }
}

fn market_sweep(cfg: &ScenarioConfig, exp: Experiment) -> Result<ExperimentRun, HarnessError> {
    let sweep = match exp {
        Experiment::MarketPrice => &cfg.experiments.market_price,
        _ => &cfg.experiments.market_utility,
    };
    let metrics: &[&str] = match exp {
        Experiment::MarketPrice => &["grid_price", "closed_form_price", "regime", "grid_step", "demand", "status"],
        _ => &["price", "leader_utility", "follower_utility", "demand", "status"],
    };
    let mut r = ExperimentResult::new(exp.name(), &["cost", "alpha"], metrics);
    r.meta("bandwidth_max", cfg.market.bandwidth_max);
    for &cost in &sweep.costs {
        let m: MarketParams = cfg.market_params(cost, cfg.market.bandwidth_max);
        for &alpha in &sweep.alphas {
            let v = [single_vmu(cfg, alpha)];
            let err = |e: vtmig_core::stackelberg::MarketError| HarnessError::Sweep {
                experiment: exp.name(),
                coords: format!("cost={cost}, alpha={alpha}"),
                message: e.to_string(),
            };
            let out = solve_grid(&v, &m).map_err(err)?;
            let demand = out.total_demand();
            let status = match out.status {
                MarketStatus::Cleared => "cleared",
                MarketStatus::Empty => "empty",
            };
            let row: Vec<Cell> = match exp {
                Experiment::MarketPrice => {
                    let cf = closed_form_price(&v, &m).map_err(err)?;
                    vec![
                        cost.into(),
                        alpha.into(),
                        out.price.into(),
                        cf.price.into(),
                        regime_label(cf.regime).into(),
                        out.grid_step.into(),
                        demand.into(),
                        status.into(),
                    ]
                }
                _ => vec![
                    cost.into(),
                    alpha.into(),
                    out.price.into(),
                    out.leader_utility.into(),
                    out.follower_utilities[&VmuId(0)].into(),
                    demand.into(),
                    status.into(),
                ],
            };
            r.push(row);
        }
    }
    Ok(single(r))
}
