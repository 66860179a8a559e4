//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line to stderr
//! (written straight to the handle so libtest does not swallow it) and runs
//! under a global lock so wall-clock budgets and timings are not disturbed by
//! sibling tests.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vtmig_core::coalition::{
    check_dhp_stability, form_coalitions, pareto_prefers, CoalitionGame, CoalitionParams, Population, Rsu, RsuNode,
};
use vtmig_core::consensus::{empirical_acceptance, security_probability};
use vtmig_core::reputation::{fuse_opinions, window_opinion, Opinion, ReputationParams};
use vtmig_core::stackelberg::{
    closed_form_price, grid_margin, leader_utility_at, leader_utility_derivative, solve_grid, verify_equilibrium,
    vmu_utility, vmu_utility_derivative, MarketParams, MarketStatus, PriceRegime, VmuProfile,
};
use vtmig_core::{NodeId, RsuId, VmuId};
use vtmig_harness::decay::run_decay;
use vtmig_harness::{run_experiment, Experiment, ExperimentResult, ScenarioConfig};

static LOCK: Mutex<()> = Mutex::new(());

const OPINION_TOL: f64 = 1e-6;
const REPUTATION_THRESHOLD: f64 = 0.5;
const ORACLE_INSTANCES: usize = 100;
const ORACLE_MAX_NODES: usize = 4;
const EXCLUSION_SPREAD: f64 = 0.05;
const MARKET_INSTANCES: usize = 50;
const EQUILIBRIUM_TRIALS: usize = 500;
const DERIVATIVE_REL_TOL: f64 = 1e-4;
const SAFETY_TOL: f64 = 1e-12;
const MC_ROUNDS: usize = 100_000;
const MC_SIGMAS: f64 = 3.0;
const DEMAND_DROP_TOL: f64 = 1e-12;

type Outcome = Result<String, String>;

fn criterion(name: &str, budget: Duration, body: impl FnOnce() -> Outcome) {
    let _guard = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut outcome = body();
    let elapsed = start.elapsed();
    if outcome.is_ok() && elapsed > budget {
        outcome = Err(format!("took {elapsed:.2?}, budget {budget:?}"));
    }
    let line = match &outcome {
        Ok(detail) => format!("PASS {name} ({elapsed:.2?}): {detail}\n"),
        Err(why) => format!("FAIL {name} ({elapsed:.2?}): {why}\n"),
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
    if let Err(why) = outcome {
        panic!("{name}: {why}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn opinion_algebra_is_exact() {
    criterion("opinion algebra exactness", Duration::from_secs(1), || {
        let params = ReputationParams::default();
        let w = window_opinion(100.0, 0.0, &params).map_err(|e| e.to_string())?;
        ensure(
            close(w.belief, 50.0 / 51.0, OPINION_TOL)
                && close(w.disbelief, 0.0, OPINION_TOL)
                && close(w.uncertainty, 1.0 / 51.0, OPINION_TOL),
            || format!("window opinion (100, 0) = {w:?}"),
        )?;

        let a = Opinion::new(0.6, 0.2, 0.2, 0.5).unwrap();
        let b = Opinion::new(0.4, 0.4, 0.2, 0.5).unwrap();
        let f = fuse_opinions(&a, &b).map_err(|e| e.to_string())?;
        ensure(
            close(f.belief, 5.0 / 9.0, OPINION_TOL)
                && close(f.disbelief, 1.0 / 3.0, OPINION_TOL)
                && close(f.uncertainty, 1.0 / 9.0, OPINION_TOL),
            || format!("fusion = {f:?}"),
        )?;
        ensure(
            close(f.belief, 0.5556, 1e-4) && close(f.disbelief, 0.3333, 1e-4) && close(f.uncertainty, 0.1111, 1e-4),
            || format!("fusion does not round to (0.5556, 0.3333, 0.1111): {f:?}"),
        )?;

        let vacuous = Opinion::vacuous(0.5);
        let id = fuse_opinions(&a, &vacuous).map_err(|e| e.to_string())?;
        ensure(id == a, || format!("vacuous fusion changed {a:?} into {id:?}"))?;
        Ok(format!("w(100,0) = ({:.6}, 0, {:.6}), fused = {f:?}", w.belief, w.uncertainty))
    });
}

#[test]
fn reputation_decay_trend() {
    criterion("reputation decay trend", Duration::from_secs(10), || {
        let cfg = ScenarioConfig::default();
        let run = run_decay(&cfg).map_err(|e| e.to_string())?;
        let horizon = cfg.experiments.reputation_decay.horizon;
        let fresh = run.crossing(REPUTATION_THRESHOLD, |r| r.fresh);
        let flat = run.crossing(REPUTATION_THRESHOLD, |r| r.flat);
        let fresh_t = fresh.ok_or("fresh+recommendation never falls below 0.5")?;
        ensure(fresh_t <= horizon, || format!("crossing {fresh_t} after horizon"))?;
        ensure(flat.is_none_or(|f| fresh_t < f), || {
            format!("fresh crosses at {fresh_t}, flat at {flat:?}")
        })?;
        for w in run.rows.windows(2) {
            ensure(w[1].no_protection >= w[0].no_protection, || {
                format!(
                    "no-protection baseline drops at t={}: {} -> {}",
                    w[1].t, w[0].no_protection, w[1].no_protection
                )
            })?;
        }
        Ok(format!("fresh crosses at t={fresh_t}, flat at {flat:?}"))
    });
}

fn oracle_instance(seed: u64) -> (CoalitionGame, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = rng.gen_range(1..=ORACLE_MAX_NODES);
    let rsus = rng.gen_range(nodes..=nodes + 6);
    let rsu_list: Vec<Rsu> = (0..rsus as u32)
        .map(|id| Rsu {
            id: RsuId(id),
            reputation: rng.gen_range(0.0..=1.0),
            bandwidth_offer: rng.gen_range(0.5..=20.0),
        })
        .collect();
    let node_list = (0..nodes)
        .map(|n| {
            let mut members: BTreeSet<RsuId> = BTreeSet::new();
            members.insert(RsuId(n as u32));
            for r in nodes..rsus {
                if rng.gen_bool(1.0 / nodes as f64) {
                    members.insert(RsuId(r as u32));
                }
            }
            RsuNode {
                id: NodeId(n as u32),
                members,
            }
        })
        .collect();
    let params = CoalitionParams {
        gamma: rng.gen_range(0.1..=3.0),
        sigma: rng.gen_range(0.1..=2.0),
        ..CoalitionParams::default()
    };
    let pop = Population {
        rsus: rsu_list,
        nodes: node_list,
        total_rsus: rsus + rng.gen_range(0..=4),
    };
    (CoalitionGame::new(pop, params).expect("valid instance"), rng.gen())
}

#[test]
fn coalition_oracle_equivalence() {
    criterion("coalition oracle equivalence", Duration::from_secs(60), || {
        let mut steps = 0;
        for i in 0..ORACLE_INSTANCES as u64 {
            let (game, seed) = oracle_instance(1000 + i);
            let formed = form_coalitions(&game, seed).map_err(|e| format!("instance {i}: {e}"))?;
            let stable = check_dhp_stability(&formed.partition, &game).map_err(|e| e.to_string())?;
            ensure(stable, || format!("instance {i}: {:?} is not stable", formed.partition))?;
            let mut prev = &formed.initial;
            for step in &formed.steps {
                let better = pareto_prefers(&step.partition, prev, &game).map_err(|e| e.to_string())?;
                ensure(better, || format!("instance {i}: step {:?} is not a Pareto improvement", step.kind))?;
                prev = &step.partition;
                steps += 1;
            }
        }
        Ok(format!("{ORACLE_INSTANCES} instances stable, {steps} steps all strict improvements"))
    });
}

fn rows_where<'a>(r: &'a ExperimentResult, pred: impl Fn(usize) -> bool + 'a) -> impl Iterator<Item = usize> + 'a {
    (0..r.rows.len()).filter(move |&i| pred(i))
}

#[test]
fn misbehavior_sweep_trend() {
    criterion("misbehavior sweep trend", Duration::from_secs(120), || {
        let cfg = ScenarioConfig::default();
        let r = run_experiment(Experiment::MisbehaviorSweep, &cfg).map_err(|e| e.to_string())?.result;
        let mut spreads = Vec::new();
        for &n in &[10.0, 15.0, 20.0] {
            let with: Vec<f64> = rows_where(&r, |i| r.value(i, "nodes") == n && r.value(i, "exclusion") == 1.0)
                .map(|i| r.value(i, "mean_reputation"))
                .collect();
            let without: Vec<f64> = rows_where(&r, |i| r.value(i, "nodes") == n && r.value(i, "exclusion") == 0.0)
                .map(|i| r.value(i, "mean_reputation"))
                .collect();
            ensure(with.len() == 5 && without.len() == 5, || format!("N={n}: missing ratios"))?;
            let spread = with.iter().cloned().fold(f64::MIN, f64::max) - with.iter().cloned().fold(f64::MAX, f64::min);
            ensure(spread < EXCLUSION_SPREAD, || format!("N={n}: exclusion spread {spread}"))?;
            ensure(without.windows(2).all(|w| w[1] < w[0]), || {
                format!("N={n}: ablation not monotone: {without:?}")
            })?;
            spreads.push(spread);
        }
        Ok(format!("exclusion spreads {spreads:.4?}"))
    });
}

#[test]
fn formation_time_trend() {
    criterion("formation time trend", Duration::from_secs(300), || {
        let cfg = ScenarioConfig::default();
        let run = run_experiment(Experiment::FormationTime, &cfg).map_err(|e| e.to_string())?;
        let t = &run.sidecars[0];
        let mut medians: BTreeMap<(u64, u64), f64> = BTreeMap::new();
        for i in 0..t.rows.len() {
            medians.insert(
                (t.value(i, "rsus") as u64, t.value(i, "nodes") as u64),
                t.value(i, "median_ms"),
            );
        }
        for &rsus in &cfg.experiments.formation_time.rsus {
            let series: Vec<(u64, f64)> = medians
                .iter()
                .filter(|((r, _), _)| *r == rsus as u64)
                .map(|((_, n), &m)| (*n, m))
                .collect();
            ensure(series.windows(2).all(|w| w[1].1 >= w[0].1), || {
                format!("R={rsus}: median not non-decreasing in N: {series:?}")
            })?;
        }
        for &n in cfg.experiments.formation_time.nodes.iter().filter(|&&n| n >= 20) {
            let (lo, hi) = (medians[&(100, n as u64)], medians[&(200, n as u64)]);
            ensure(hi > lo, || format!("N={n}: R=200 median {hi} ms <= R=100 median {lo} ms"))?;
        }
        let top = cfg.experiments.formation_time.nodes.iter().max().copied().unwrap_or(0) as u64;
        Ok(format!(
            "medians at N={top}: R=100 {:.4} ms, R=200 {:.4} ms",
            medians[&(100, top)],
            medians[&(200, top)]
        ))
    });
}

fn interior_instance(rng: &mut ChaCha8Rng) -> Option<(Vec<VmuProfile>, MarketParams)> {
    let n = rng.gen_range(1..=5);
    let profiles: Vec<VmuProfile> = (0..n as u32)
        .map(|id| VmuProfile {
            id: VmuId(id),
            alpha: rng.gen_range(0.1..0.9),
            data_size: rng.gen_range(0.05..1.0),
        })
        .collect();
    let market = MarketParams {
        cost: rng.gen_range(1.0..20.0),
        ..MarketParams::default()
    };
    let cf = closed_form_price(&profiles, &market).ok()?;
    (cf.regime == PriceRegime::Interior).then_some((profiles, market))
}

fn rel_close(numeric: f64, analytic: f64, tol: f64) -> bool {
    (numeric - analytic).abs() <= tol * analytic.abs().max(1e-8)
}

#[test]
fn stackelberg_cross_validation() {
    criterion("stackelberg cross-validation", Duration::from_secs(30), || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut found = 0;
        let mut worst_gap: f64 = 0.0;
        while found < MARKET_INSTANCES {
            let Some((profiles, market)) = interior_instance(&mut rng) else {
                continue;
            };
            found += 1;
            let out = solve_grid(&profiles, &market).map_err(|e| e.to_string())?;
            let cf = closed_form_price(&profiles, &market).map_err(|e| e.to_string())?;
            let step = market.step();
            ensure(out.status == MarketStatus::Cleared, || format!("instance {found}: empty market"))?;
            let gap = (out.price - cf.price).abs();
            ensure(gap <= step, || {
                format!("instance {found}: grid {} vs closed form {} (step {step}), cost {}, {profiles:?}", out.price, cf.price, market.cost)
            })?;
            worst_gap = worst_gap.max(gap / step);
            let tol = grid_margin(&out, &profiles, &market).max(1e-6);
            ensure(
                verify_equilibrium(&out, &profiles, &market, EQUILIBRIUM_TRIALS, tol, &mut rng),
                || format!("instance {found}: equilibrium check failed at price {} (tolerance {tol}), cost {}, {profiles:?}", out.price, market.cost),
            )?;

            // follower derivative away from the optimum
            let v = &profiles[0];
            let b = out.demands[&v.id].max(1e-3) * rng.gen_range(0.3..3.0);
            let h = b * 1e-5;
            let fd = (vmu_utility(v, b + h, out.price, &market) - vmu_utility(v, b - h, out.price, &market)) / (2.0 * h);
            let an = vmu_utility_derivative(v, b, out.price, &market);
            ensure(rel_close(fd, an, DERIVATIVE_REL_TOL), || {
                format!("instance {found}: follower derivative {an}, finite difference {fd}")
            })?;

            // leader derivative below the optimum, where every VMU participates
            let p = market.cost + (cf.price - market.cost) * rng.gen_range(0.3..0.9);
            let h = p * 1e-6;
            let fd = (leader_utility_at(p + h, &profiles, &market) - leader_utility_at(p - h, &profiles, &market)) / (2.0 * h);
            let an = leader_utility_derivative(p, &profiles, &market);
            ensure(rel_close(fd, an, DERIVATIVE_REL_TOL), || {
                format!("instance {found}: leader derivative {an}, finite difference {fd}")
            })?;
        }
        Ok(format!("{MARKET_INSTANCES} interior instances, worst |grid - closed form| = {worst_gap:.3} steps"))
    });
}

fn series(r: &ExperimentResult, fixed: &str, value: f64, along: &str, metric: &str) -> Vec<(f64, f64, String)> {
    let status = r.column("status");
    rows_where(r, |i| r.value(i, fixed) == value)
        .map(|i| {
            (
                r.value(i, along),
                r.value(i, metric),
                status.map(|_| r.text(i, "status")).unwrap_or_default(),
            )
        })
        .collect()
}

fn values_of(r: &ExperimentResult, col: &str) -> Vec<f64> {
    let mut v: Vec<f64> = (0..r.rows.len()).map(|i| r.value(i, col)).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

#[test]
fn market_trends() {
    criterion("market trends", Duration::from_secs(30), || {
        let cfg = ScenarioConfig::default();
        let demand = run_experiment(Experiment::MarketDemand, &cfg).map_err(|e| e.to_string())?.result;
        let price = run_experiment(Experiment::MarketPrice, &cfg).map_err(|e| e.to_string())?.result;
        let utility = run_experiment(Experiment::MarketUtility, &cfg).map_err(|e| e.to_string())?.result;

        for a in values_of(&demand, "alpha") {
            let s = series(&demand, "alpha", a, "price", "demand");
            ensure(s.windows(2).all(|w| w[1].1 < w[0].1 || w[0].1 == 0.0), || {
                format!("demand not decreasing in price at alpha={a}: {s:?}")
            })?;
        }
        for p in values_of(&demand, "price") {
            let s = series(&demand, "price", p, "alpha", "demand");
            ensure(s.windows(2).all(|w| w[1].1 > w[0].1 || w[1].1 == 0.0), || {
                format!("demand not increasing in alpha at price={p}: {s:?}")
            })?;
        }

        let costs = values_of(&price, "cost");
        let alphas = values_of(&price, "alpha");
        for &c in &costs {
            let s = series(&price, "cost", c, "alpha", "closed_form_price");
            ensure(s.windows(2).all(|w| w[1].1 > w[0].1), || {
                format!("closed-form price not increasing in alpha at C={c}: {s:?}")
            })?;
            let cleared: Vec<_> = series(&price, "cost", c, "alpha", "grid_price")
                .into_iter()
                .filter(|x| x.2 == "cleared")
                .collect();
            ensure(cleared.windows(2).all(|w| w[1].1 >= w[0].1), || {
                format!("grid price decreasing in alpha at C={c}: {cleared:?}")
            })?;
            let u = series(&utility, "cost", c, "alpha", "leader_utility");
            ensure(u.windows(2).all(|w| w[1].1 > w[0].1), || {
                format!("leader utility not increasing in alpha at C={c}: {u:?}")
            })?;
        }
        for &a in &alphas {
            let s = series(&price, "alpha", a, "cost", "closed_form_price");
            ensure(s.windows(2).all(|w| w[1].1 > w[0].1), || {
                format!("closed-form price not increasing in C at alpha={a}: {s:?}")
            })?;
            let cleared: Vec<_> = series(&price, "alpha", a, "cost", "grid_price")
                .into_iter()
                .filter(|x| x.2 == "cleared")
                .collect();
            ensure(cleared.windows(2).all(|w| w[1].1 >= w[0].1), || {
                format!("grid price decreasing in C at alpha={a}: {cleared:?}")
            })?;
            let u = series(&utility, "alpha", a, "cost", "leader_utility");
            ensure(u.windows(2).all(|w| w[1].1 < w[0].1 || w[1].1 == 0.0), || {
                format!("leader utility not decreasing in C at alpha={a}: {u:?}")
            })?;
        }

        let c0: f64 = demand.meta_value("demand_offset").and_then(|v| v.parse().ok()).ok_or("no demand_offset")?;
        let drop: f64 = demand
            .meta_value("demand_drop_alpha_0.5_price_10_to_30")
            .and_then(|v| v.parse().ok())
            .ok_or("no demand drop")?;
        let exact = (0.05 - 0.5 / 30.0) / (0.05 - c0);
        ensure(close(drop, exact, DEMAND_DROP_TOL), || format!("drop {drop}, expected {exact}"))?;
        Ok(format!("demand drop {:.2}% at c0 = {c0:.6}", 100.0 * drop))
    });
}

#[test]
fn consensus_exactness() {
    criterion("consensus exactness (values, Monte Carlo)", Duration::from_secs(30), || {
        let p4 = security_probability(4, 0.2);
        ensure(close(p4, 0.8192, SAFETY_TOL), || format!("P(4, 0.2) = {p4}"))?;
        let p7 = security_probability(7, 0.5);
        ensure(close(p7, 29.0 / 128.0, SAFETY_TOL), || format!("P(7, 0.5) = {p7}"))?;
        let exact = security_probability(10, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mc = empirical_acceptance(10, 0.2, MC_ROUNDS, &mut rng);
        let se = (exact * (1.0 - exact) / MC_ROUNDS as f64).sqrt();
        ensure((mc - exact).abs() <= MC_SIGMAS * se, || {
            format!("Monte Carlo {mc} vs {exact}, {} standard errors", (mc - exact).abs() / se)
        })?;
        Ok(format!("MC {mc:.5} vs analytic {exact:.5} ({:.2} SE)", (mc - exact).abs() / se))
    });
}

#[test]
fn consensus_safety_is_monotone_in_delegates() {
    criterion("consensus exactness (monotonicity in N)", Duration::from_secs(30), || {
        let cfg = ScenarioConfig::default();
        let r = run_experiment(Experiment::ConsensusSecurity, &cfg).map_err(|e| e.to_string())?.result;
        let mut broken = Vec::new();
        for p in values_of(&r, "p_malicious") {
            let s = series(&r, "p_malicious", p, "delegates", "p_safety");
            for w in s.windows(2) {
                if w[1].1 < w[0].1 {
                    broken.push(format!("p={p}: N={} {:.4} -> N={} {:.4}", w[0].0, w[0].1, w[1].0, w[1].1));
                }
            }
        }
        ensure(broken.is_empty(), || format!("safety decreases: {}", broken.join("; ")))?;
        Ok("safety non-decreasing in N for every p".into())
    });
}

#[test]
fn experiments_are_deterministic() {
    criterion("determinism", Duration::from_secs(600), || {
        let cfg = ScenarioConfig::default();
        for e in Experiment::ALL {
            let a = run_experiment(e, &cfg).map_err(|x| x.to_string())?;
            let b = run_experiment(e, &cfg).map_err(|x| x.to_string())?;
            let (ca, cb) = (a.result.to_csv().unwrap(), b.result.to_csv().unwrap());
            ensure(ca == cb, || format!("{e}: CSV differs between runs"))?;
        }
        Ok(format!("{} experiments byte-identical", Experiment::ALL.len()))
    });
}
