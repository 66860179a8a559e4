use vtmig_core::stackelberg::best_response;
use vtmig_core::VmuId;
use vtmig_harness::{run_pipeline, PipelineStatus, ScenarioConfig};

fn tiny() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.population.rsus = 1;
    cfg.population.vmus = 1;
    cfg.population.nodes = 1;
    cfg.population.misbehavior_ratio = 0.0;
    cfg
}

#[test]
fn single_node_single_vmu_buys_its_best_response() {
    let cfg = tiny();
    let r = run_pipeline(&cfg).unwrap();
    assert_eq!(r.status, PipelineStatus::Completed);
    assert_eq!(r.selected_rsus.len(), 1);
    let bw = r.bandwidth_max.unwrap();
    let out = r.market.as_ref().unwrap();
    let market = cfg.market_params(cfg.market.cost, bw);
    let expected = best_response(&r.vmus[0], out.price, &market);
    assert!(expected > 0.0);
    assert_eq!(out.demands[&VmuId(0)], expected);
    assert_eq!(r.rounds.len(), cfg.consensus.rounds);
    assert_eq!(r.final_reputations.len(), 1);
}

#[test]
fn everyone_below_threshold_means_no_coalition() {
    let mut cfg = ScenarioConfig::default();
    cfg.population.rsus = 30;
    cfg.population.vmus = 3;
    cfg.population.nodes = 5;
    cfg.population.misbehavior_ratio = 1.0;
    let r = run_pipeline(&cfg).unwrap();
    assert_eq!(r.status, PipelineStatus::NoCoalition);
    assert_eq!(r.excluded.len(), 30);
    assert!(r.market.is_none());
    assert!(r.audit.iter().any(|a| a.stage == "coalition"));
}

#[test]
fn unprofitable_cost_means_empty_market() {
    let mut cfg = tiny();
    cfg.market.cost = 90.0;
    let r = run_pipeline(&cfg).unwrap();
    assert_eq!(r.status, PipelineStatus::EmptyMarket);
    assert!(r.rounds.is_empty());
}

#[test]
fn pipeline_is_deterministic() {
    let mut cfg = ScenarioConfig::default();
    cfg.population.rsus = 40;
    cfg.population.vmus = 5;
    cfg.population.nodes = 6;
    cfg.consensus.rounds = 4;
    let a = serde_json::to_string(&run_pipeline(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&run_pipeline(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    cfg.seed += 1;
    let c = serde_json::to_string(&run_pipeline(&cfg).unwrap()).unwrap();
    assert_ne!(a, c);
}
