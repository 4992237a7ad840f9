mod common;

use contentflow::controller::Mode;
use contentflow::exec::Execution;
use contentflow::httpsem;
use contentflow::scenarios::{self, delay_decompose, sweep_config, Case, ScenarioConfig, ServedBy};

use common::scenario;

fn parse(name: &str, text: &str) -> ScenarioConfig {
    ScenarioConfig::parse(name, text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// A client and an origin joined through one switch: a slow link of delay
/// `d` and rate `r` on the client side, a near-instant one on the server side.
fn single_link(d: u64, r: u64, size: usize) -> ScenarioConfig {
    parse(
        "single-link",
        &format!(
            "[nodes]\nswitch s1\nclient c1 10.0.0.1\nserver srv 10.0.1.1\n\
             [links]\nc1 s1 delay={d} rate={r}\ns1 srv delay=0 rate=1000000000\n\
             [contents]\nsrv /f.bin {size}\n[workload]\nget c1 srv /f.bin at=0\n\
             [policy]\nmode = direct\n"
        ),
    )
}

#[test]
fn direct_single_link_matches_hand_computation() {
    let (d, r, size) = (50u64, 1000u64, 100_000usize);
    let report = scenarios::run(&single_link(d, r, size)).unwrap();
    let measured = report.metrics.request("get").unwrap().delay().unwrap();

    let request = httpsem::render_get("srv", "/f.bin", None).len() as u64;
    let header = httpsem::render_response(200, &vec![0; size]).len() as u64 - size as u64;
    // SYN and SYN-ACK cross the slow link (2d); the request follows the
    // handshake ACK (d plus its serialization, plus the one-unit floor on the
    // fast hop); the response takes one unit on the fast hop, then its full
    // serialization and d on the slow one.
    let hand = 2 * d + (request.div_ceil(r) + d + 1) + 1 + (size as u64 + header).div_ceil(r) + d;
    assert_eq!(measured, hand);
    // The textbook 3D + F/R + D, off only by header, request and per-hop rounding.
    let textbook = 3 * d + size as u64 / r + d;
    assert!(measured - textbook <= request.div_ceil(r) + header.div_ceil(r) + 2);

    let decomposition = delay_decompose(&report, "get", Case::Direct).unwrap();
    assert_eq!(decomposition.analytic(), measured);
}

#[test]
fn zero_size_file_is_all_connection_setup() {
    let d = 50;
    let report = scenarios::run(&single_link(d, 1000, 0)).unwrap();
    let out = report.outcome("get").unwrap();
    assert_eq!(out.status(), Some(200));
    assert_eq!(out.body(), Some(&b""[..]));
    let dec = delay_decompose(&report, "get", Case::Direct).unwrap();
    assert!(dec.agrees(), "{dec}");
    let (tcp, rest): (Vec<_>, Vec<_>) = dec.terms.iter().partition(|t| t.label.starts_with("TCP("));
    let tcp: u64 = tcp.iter().map(|t| t.value).sum();
    let rest: u64 = rest.iter().map(|t| t.value).sum();
    assert!(tcp >= 3 * d);
    assert!(rest <= d + 2, "transfer term {rest}");
}

#[test]
fn empty_workload_installs_nothing() {
    let mut cfg = scenario("miss_hit");
    cfg.workload.clear();
    let report = scenarios::run(&cfg).unwrap();
    assert!(report.metrics.requests.is_empty());
    assert!(report.is_clean(), "{:?}", report.violations);
    assert_eq!(report.trace.find("install").count(), 0);
    assert_eq!(report.rules_left, 0);
    assert!(report.mappings.is_empty());
}

#[test]
fn miss_then_hit_is_flagged_in_metrics() {
    let report = scenarios::run(&scenario("miss_hit")).unwrap();
    let miss = report.metrics.request("miss").unwrap();
    let hit = report.metrics.request("hit").unwrap();
    assert!(!miss.hit && hit.hit);
    assert_eq!((miss.served_by, hit.served_by), (ServedBy::Origin, ServedBy::Cache));
    assert_eq!(
        report.outcome("miss").unwrap().body(),
        report.outcome("hit").unwrap().body()
    );
}

#[test]
fn processes_on_one_client_get_their_own_handles() {
    let report = scenarios::run(&scenario("multi_process_client")).unwrap();
    let handles: Vec<_> = report.metrics.requests.iter().map(|m| m.handle.unwrap()).collect();
    let mut distinct = handles.clone();
    distinct.sort();
    distinct.dedup();
    assert_eq!(distinct.len(), handles.len());
}

#[test]
fn twelve_sizes_make_twelve_rows() {
    let sizes = [
        2_000, 5_000, 10_000, 20_000, 50_000, 100_000, 200_000, 500_000, 1_000_000, 2_000_000, 4_000_000, 6_000_000,
    ];
    let rows = scenarios::sweep(&scenario("sweep"), &sizes, Execution::available()).unwrap();
    assert_eq!(rows.iter().map(|r| r.size).collect::<Vec<_>>(), sizes);
    let mut csv = Vec::new();
    scenarios::write_sweep_csv(&rows, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 13);
    assert!(text.starts_with("size,miss_delay,hit_delay,direct_delay,hit,flagged,violations\n"));
    assert!(rows.iter().all(|r| r.hit && !r.flagged && r.violations == 0));
}

#[test]
fn sequential_and_parallel_sweeps_agree() {
    let cfg = scenario("sweep");
    let sizes = [2_000, 40_000, 300_000];
    assert_eq!(
        scenarios::sweep(&cfg, &sizes, Execution::Sequential).unwrap(),
        scenarios::sweep(&cfg, &sizes, Execution::available()).unwrap()
    );
}

fn two_sided(cache_delay: u64, server_delay: u64) -> ScenarioConfig {
    parse(
        "two-sided",
        &format!(
            "[nodes]\nswitch s1\nswitch s2\nclient c1 10.0.0.1\nproxy p1 10.0.0.100\n\
             cache k1 10.0.0.200\nserver srv 10.0.1.1\n\
             [links]\nc1 s1 delay=1 rate=1000\np1 s1 delay=1 rate=1000\ns1 s2 delay=100 rate=1000\n\
             k1 s2 delay={cache_delay} rate=1000\nsrv s2 delay={server_delay} rate=1000\n\
             [contents]\nsrv /p.bin 100\n[workload]\nprobe c1 srv /p.bin at=0\n"
        ),
    )
}

#[test]
fn farther_cache_makes_hits_slower_and_is_flagged() {
    let rows = scenarios::sweep(&two_sided(300, 1), &[20_000], Execution::Sequential).unwrap();
    let row = &rows[0];
    assert!(row.hit);
    assert!(row.hit_delay > row.miss_delay, "{row:?}");
    assert!(row.flagged);
}

#[test]
fn equidistant_cache_and_origin_give_equal_delays_up_to_handshakes() {
    let cfg = two_sided(5, 5);
    let size = 20_000;
    let rows = scenarios::sweep(&cfg, &[size], Execution::Sequential).unwrap();
    let row = &rows[0];
    assert!(row.hit);

    let report = scenarios::run(&sweep_config(&cfg, size, Mode::ContentFlow).unwrap()).unwrap();
    let tcp = |label, case, leg| {
        delay_decompose(&report, label, case)
            .unwrap()
            .terms
            .iter()
            .find(|t| t.label == leg)
            .unwrap_or_else(|| panic!("no {leg}"))
            .value
    };
    let bound = tcp("miss", Case::Proxied, "TCP(Proxy,Server)").abs_diff(tcp("hit", Case::Cached, "TCP(Proxy,Cache)"));
    assert!(
        row.hit_delay.abs_diff(row.miss_delay) <= bound,
        "{row:?}, bound {bound}"
    );
}

#[test]
fn every_shipped_scenario_runs_clean() {
    for cfg in common::all_scenarios() {
        let report = scenarios::run(&cfg).unwrap();
        assert!(report.is_clean(), "{}: {:?}", cfg.name, report.violations);
        for m in &report.metrics.requests {
            assert!(m.delay().is_some(), "{}/{} incomplete", cfg.name, m.label);
        }
    }
}
