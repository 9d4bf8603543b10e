use mbadmm_core::dist::message_stats;
use mbadmm_core::offload::{build_offload, centralized_offload_oracle, run_offloading, simulate_offloading, OffloadSpec};
use mbadmm_core::{SolverConfig, Status};

fn cfg() -> SolverConfig {
    SolverConfig { tol_primal: 1e-7, tol_dual: 1e-7, max_iter: 20_000, ..Default::default() }
}

#[test]
fn five_by_five_matches_the_oracle() {
    let inst = OffloadSpec::standard_setup(5, 5, 1).instance().unwrap();
    let run = run_offloading(&inst, &cfg()).unwrap();
    assert_eq!(run.outcome.report.status, Status::Converged);
    assert!(run.allocation.consensus_gap() <= 1e-5);
    let (value, _) = centralized_offload_oracle(&inst, 1e-12, 200_000).unwrap();
    assert!((run.allocation.objective - value).abs() <= 1e-4 * value.abs(), "{} vs {value}", run.allocation.objective);
}

#[test]
fn more_access_points_take_more_iterations() {
    let small = run_offloading(&OffloadSpec::standard_setup(5, 5, 1).instance().unwrap(), &cfg()).unwrap();
    let large = run_offloading(&OffloadSpec::standard_setup(5, 10, 1).instance().unwrap(), &cfg()).unwrap();
    assert_eq!(large.outcome.report.status, Status::Converged);
    assert!(large.outcome.report.iterations > small.outcome.report.iterations);
}

#[test]
fn iterates_respect_access_point_capacity() {
    let inst = build_offload(4, 3, 10.0, 5).unwrap();
    let run = run_offloading(&inst, &cfg()).unwrap();
    for row in &run.allocation.y {
        assert!(row.iter().all(|&v| v >= -1e-12));
        assert!(row.iter().sum::<f64>() <= 10.0 + 1e-9);
    }
}

#[test]
fn simulated_offloading_is_bitwise_identical_with_per_edge_message_sizes() {
    let (b, a) = (5, 5);
    let inst = OffloadSpec::standard_setup(b, a, 2).instance().unwrap();
    let direct = run_offloading(&inst, &cfg()).unwrap();
    let (sim, log) = simulate_offloading(&inst, &cfg()).unwrap();
    assert!(direct.outcome.trace.bitwise_eq(&sim.outcome.trace));
    assert!(direct.outcome.report.x.bitwise_eq(&sim.outcome.report.x));
    log.validate().unwrap();
    let stats = message_stats(&log);
    for s in &stats[..stats.len() - 1] {
        for (&w, &reals) in &s.per_worker_reals {
            let expected = if w < b { 2 * a } else { 2 * b };
            assert_eq!(reals, expected, "round {} worker {w}", s.round);
        }
    }
}

#[test]
fn objective_running_minimum_settles_at_the_optimum() {
    let inst = OffloadSpec::standard_setup(5, 5, 3).instance().unwrap();
    let run = run_offloading(&inst, &cfg()).unwrap();
    let (value, _) = centralized_offload_oracle(&inst, 1e-12, 200_000).unwrap();
    let recs = run.outcome.trace.records();
    let tail = &recs[recs.len() * 3 / 4..];
    assert!(tail.iter().all(|r| (r.objective - value).abs() <= 1e-2 * value.abs().max(1.0)));
}
