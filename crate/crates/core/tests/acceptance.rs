//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion, followed by indented detail, then asserts.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::time::{Duration, Instant};

use bytes::Bytes;
use contentflow::cache::{Cache, FlowFilter, Outcome, Store, TapEffect};
use contentflow::controller::{compute_fork_switch, Controller, MappingState, Mode, StandardPolicy};
use contentflow::exec::{self, Execution};
use contentflow::httpsem::render_response;
use contentflow::msg::{Body, DiscardReason, FilterReleased, PortRange, Query, Register, StoredAck};
use contentflow::netmodel::{ControlEnv, ControlPlane, HostRole, NodeId, TcpFlags, Topology};
use contentflow::scenarios::{self, delay_decompose, Case, RunReport, ScenarioConfig, ServedBy};
use contentflow::switchfab::Fabric;
use contentflow::trace::{Milestone, Trace};
use contentflow::SimPacket;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use common::*;

fn verdict(criterion: u32, ok: bool, summary: impl Display) {
    println!("{} criterion {criterion}: {summary}", if ok { "PASS" } else { "FAIL" });
}

fn detail(line: impl Display) {
    println!("    {line}");
}

fn run(cfg: &ScenarioConfig) -> RunReport {
    scenarios::run(cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.name))
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_miss_then_hit_end_to_end() {
    let start = Instant::now();
    let cfg = scenario("miss_hit");
    let report = run(&cfg);
    let elapsed = start.elapsed();
    let server = SocketAddrV4::new(Ipv4Addr::new(10, 0, 1, 1), 80);
    let name = "srv/f.bin".parse().unwrap();
    let fixture = &report.fixtures[&name];

    let miss = report.outcome("miss").unwrap();
    let hit = report.outcome("hit").unwrap();
    let mut failures = Vec::new();
    if miss.body() != Some(&fixture[..]) {
        failures.push("miss body differs from fixture".to_string());
    }
    if hit.body() != miss.body() {
        failures.push("hit body differs from miss body".to_string());
    }
    let hit_metrics = report.metrics.request("hit").unwrap();
    if hit_metrics.served_by != ServedBy::Cache || !hit_metrics.hit {
        failures.push(format!("hit served by {}", hit_metrics.served_by));
    }
    if report.metrics.request("miss").unwrap().hit {
        failures.push("miss flagged as hit".into());
    }
    // No packet to or from the origin once the hit has started.
    let hit_start = hit.started.unwrap();
    let origin_flows: Vec<_> = report
        .trace
        .events()
        .iter()
        .filter(|e| e.packet && e.time >= hit_start)
        .filter(|e| e.component == "srv" || e.detail.contains("->srv "))
        .collect();
    if !origin_flows.is_empty() {
        failures.push(format!(
            "{} origin packets during the hit, first: {}",
            origin_flows.len(),
            origin_flows[0]
        ));
    }
    let hit_mapping = report
        .mappings
        .iter()
        .find(|m| Some(m.client) == hit.local)
        .expect("hit has a mapping");
    if hit_mapping.source.is_none() {
        failures.push("controller sent the hit to the origin".into());
    }
    for (label, out) in [("miss", miss), ("hit", hit)] {
        if out.sources != BTreeSet::from([server]) {
            failures.push(format!("{label} saw sources {:?}", out.sources));
        }
    }
    if elapsed >= Duration::from_secs(1) {
        failures.push(format!("took {elapsed:?}"));
    }
    failures.extend(report.violations.iter().cloned());

    let ok = failures.is_empty();
    verdict(
        1,
        ok,
        format!(
            "miss/hit bodies identical ({} bytes), hit from cache, client saw only {server} ({elapsed:.2?})",
            fixture.len()
        ),
    );
    failures.iter().for_each(detail);
    assert!(ok, "{failures:#?}");
}

// ---------------------------------------------------------------------------

const SWEEP_SIZES: [usize; 12] = [
    2_000, 5_000, 10_000, 20_000, 50_000, 100_000, 200_000, 500_000, 1_000_000, 2_000_000, 4_000_000, 6_000_000,
];

#[test]
fn criterion_2_delay_ordering() {
    let cfg = scenario("sweep");
    let delay_of = |a: &str, b: &str| {
        cfg.links
            .iter()
            .find(|l| (l.a == a && l.b == b) || (l.a == b && l.b == a))
            .unwrap()
            .delay
    };
    // Precondition: proxy and cache are local to the client.
    let client_server: u64 = delay_of("c1", "s1") + delay_of("s1", "s2") + delay_of("s2", "srv");
    let local = delay_of("p1", "s1").max(delay_of("k1", "s1")).max(delay_of("c1", "s1"));
    assert!(local * 100 <= client_server, "local {local} vs {client_server}");

    let start = Instant::now();
    let mut rows = Vec::new();
    let mut slowest = Duration::ZERO;
    for &size in &SWEEP_SIZES {
        let t = Instant::now();
        rows.extend(scenarios::sweep(&cfg, &[size], Execution::Sequential).unwrap());
        slowest = slowest.max(t.elapsed());
    }
    let total = start.elapsed();

    let mut cached_lt_proxied = true;
    let mut proxied_lt_direct = true;
    for r in rows.iter().filter(|r| r.size >= 5_000) {
        cached_lt_proxied &= r.hit && r.hit_delay < r.miss_delay;
        proxied_lt_direct &= r.miss_delay < r.direct_delay;
    }
    let clean = rows.iter().all(|r| r.violations == 0);
    let timely = slowest < Duration::from_secs(1) && total < Duration::from_secs(15);
    let ok = cached_lt_proxied && proxied_lt_direct && clean && timely;
    verdict(
        2,
        ok,
        format!(
            "cached < proxied: {cached_lt_proxied}, proxied < direct: {proxied_lt_direct} \
             (12 sizes, local/remote delay {local}/{client_server}, slowest size {slowest:.2?}, sweep {total:.2?})"
        ),
    );
    detail("size        cached   proxied   direct");
    for r in &rows {
        detail(format!(
            "{:>9} {:>8} {:>9} {:>8}",
            r.size, r.hit_delay, r.miss_delay, r.direct_delay
        ));
    }
    assert!(clean && timely);
    assert!(cached_lt_proxied, "cached delay not below proxied delay");
    assert!(
        proxied_lt_direct,
        "proxied delay not below direct delay: the proxied path adds the client-proxy \
         handshake and relay hop to every term of the direct path"
    );
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_3_analytic_matches_measured() {
    let seeds: Vec<u64> = (0..24).collect();
    let results = exec::map(Execution::available(), seeds, |seed| {
        let mut lines = Vec::new();
        for mode in ["contentflow", "direct"] {
            let rs = random_scenario(seed, mode);
            let cfg = ScenarioConfig::parse(&format!("random-{seed}-{mode}"), &rs.text).unwrap();
            let report = run(&cfg);
            for m in &report.metrics.requests {
                let case = match m.served_by {
                    ServedBy::Direct => Case::Direct,
                    ServedBy::Origin => Case::Proxied,
                    ServedBy::Cache => Case::Cached,
                    ServedBy::PassThrough => unreachable!("GET only"),
                };
                let d = delay_decompose(&report, &m.label, case);
                lines.push((cfg.name.clone(), m.label.clone(), rs.size, d));
            }
        }
        lines
    });
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut worst = 0;
    for (name, label, size, d) in results.into_iter().flatten() {
        checked += 1;
        match d {
            Ok(d) => {
                worst = worst.max(d.error());
                if !d.agrees() {
                    failures.push(format!("{name}/{label} size {size}: {d}"));
                }
            }
            Err(e) => failures.push(format!("{name}/{label}: {e}")),
        }
    }
    let ok = failures.is_empty() && checked >= 20;
    verdict(
        3,
        ok,
        format!("{checked} requests over 48 randomized runs, worst |measured - analytic| = {worst}"),
    );
    failures.iter().for_each(detail);
    assert!(ok);
}

// ---------------------------------------------------------------------------

const CLIENT: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);
const SERVERS: [Ipv4Addr; 2] = [Ipv4Addr::new(10, 0, 1, 1), Ipv4Addr::new(10, 0, 2, 1)];
const PROXY: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 100);
const CACHE: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 200);

struct Bench {
    topo: Topology,
    fabric: Fabric,
    trace: Trace,
    ctl: Controller,
}

impl Bench {
    fn new(pool: u16) -> Self {
        let mut t = Topology::new();
        let s1 = t.add_switch("s1").unwrap();
        let s2 = t.add_switch("s2").unwrap();
        let c = t.add_host("c", CLIENT, HostRole::Client).unwrap();
        let p = t.add_host("p", PROXY, HostRole::Proxy).unwrap();
        let k = t.add_host("k", CACHE, HostRole::Cache).unwrap();
        t.add_link(s1, s2, 1, 100).unwrap();
        t.add_link(c, s1, 1, 100).unwrap();
        t.add_link(p, s1, 1, 100).unwrap();
        t.add_link(k, s1, 1, 100).unwrap();
        for (i, ip) in SERVERS.iter().enumerate() {
            let srv = t.add_host(&format!("srv{i}"), *ip, HostRole::Server).unwrap();
            t.add_link(srv, s2, 1, 100).unwrap();
        }
        let mut ctl = Controller::new(Mode::ContentFlow, Box::new(StandardPolicy::default()));
        ctl.add_cache(1, k, CACHE);
        let mut b = Self {
            fabric: Fabric::new(&t),
            topo: t,
            trace: Trace::new(),
            ctl,
        };
        b.with(|c, env| {
            c.register_proxy(
                env,
                p,
                Register {
                    proxy_id: 1,
                    port_range: PortRange::new(8000, 8000 + pool - 1),
                    listen_range: PortRange::new(20000, 20099),
                },
            )
        })
        .unwrap();
        b
    }

    fn with<R>(&mut self, f: impl FnOnce(&mut Controller, &mut ControlEnv<'_>) -> R) -> R {
        let mut env = ControlEnv {
            now: 0,
            topo: &self.topo,
            fabric: &mut self.fabric,
            trace: &mut self.trace,
        };
        f(&mut self.ctl, &mut env)
    }
}

/// Reference bookkeeping for the fuzz: which handles are held and which
/// still have a cache capturing them.
#[derive(Default)]
struct PoolModel {
    held: BTreeMap<u16, Ipv4Addr>,
    capturing: BTreeSet<u16>,
    released: BTreeSet<u16>,
}

fn fuzz_interleaving(seed: u64) -> Result<(usize, usize), String> {
    let mut r = rng(seed);
    let pool: u16 = r.random_range(1..=16);
    let mut b = Bench::new(pool);
    let mut model = PoolModel::default();
    let mut exhausted = 0;
    let names = ["a/1", "a/2", "b/3", "b/4", "c/5", "c/6"];
    let steps = r.random_range(20..120);
    for step in 0..steps {
        let op = r.random_range(0..10);
        match op {
            0..=4 => {
                let server = *SERVERS.choose(&mut r).unwrap();
                let q = Query {
                    proxy_id: 1,
                    content_name: names.choose(&mut r).unwrap().parse().unwrap(),
                    client_ip: CLIENT,
                    client_port: 40000 + step as u16,
                    server_ip: server,
                    server_port: 80,
                };
                let reply = b.with(|c, env| c.handle_query(env, q)).map_err(|e| e.to_string())?;
                for (_, n) in b.ctl.take_notices() {
                    if let Body::SetFilter(f) = n.body {
                        model.capturing.insert(f.dst_port);
                    }
                }
                match reply.handle_port {
                    Some(h) => {
                        if model.held.len() == pool as usize {
                            return Err(format!("step {step}: allocated {h} with all {pool} held"));
                        }
                        if model.held.insert(h, server).is_some() {
                            return Err(format!("step {step}: handle {h} handed out twice"));
                        }
                    }
                    None => {
                        exhausted += 1;
                        if model.held.len() != pool as usize {
                            return Err(format!("step {step}: refused with {} of {pool} held", model.held.len()));
                        }
                    }
                }
            }
            5..=7 => {
                let Some(&h) = model.held.keys().copied().collect::<Vec<_>>().choose(&mut r) else {
                    continue;
                };
                b.with(|c, env| c.on_release(env, 1, h));
                // Releasing twice must not matter.
                if r.random_bool(0.2) {
                    b.with(|c, env| c.on_release(env, 1, h));
                }
                model.released.insert(h);
                if !model.capturing.contains(&h) {
                    model.held.remove(&h);
                    model.released.remove(&h);
                }
            }
            _ => {
                let Some(&h) = model.capturing.iter().copied().collect::<Vec<_>>().choose(&mut r) else {
                    continue;
                };
                let server = model.held[&h];
                if r.random_bool(0.5) {
                    let name = b.ctl.snapshot().request_dictionary[&(server, h)].clone();
                    b.with(|c, env| {
                        c.on_stored_ack(
                            env,
                            StoredAck {
                                content_name: name,
                                cache_id: 1,
                                server_ip: server,
                                dst_port: h,
                            },
                        )
                    });
                } else {
                    b.with(|c, env| {
                        c.on_filter_released(
                            env,
                            FilterReleased {
                                cache_id: 1,
                                server_ip: server,
                                dst_port: h,
                                reason: DiscardReason::Discarded,
                            },
                        )
                    });
                }
                model.capturing.remove(&h);
                if model.released.remove(&h) {
                    model.held.remove(&h);
                }
            }
        }

        let live: Vec<_> = b.ctl.live_mappings().cloned().collect();
        let mut keys = BTreeSet::new();
        for m in &live {
            if m.state != MappingState::Live {
                return Err(format!("step {step}: released mapping still listed"));
            }
            if !keys.insert((m.proxy_id, *m.server.ip(), m.handle)) {
                return Err(format!(
                    "step {step}: two live mappings share {:?}",
                    (m.proxy_id, m.server, m.handle)
                ));
            }
        }
        let controller_held: BTreeSet<u16> = live.iter().map(|m| m.handle).collect();
        let model_held: BTreeSet<u16> = model.held.keys().copied().collect();
        if controller_held != model_held {
            return Err(format!(
                "step {step}: controller holds {controller_held:?}, expected {model_held:?}"
            ));
        }
        let pool_view = b.ctl.pool(1).unwrap();
        if pool_view.live_count() != model.held.len()
            || pool_view.free_count() + pool_view.live_count() != pool as usize
        {
            return Err(format!("step {step}: pool counts off"));
        }
        if let Some(v) = b.ctl.violations().first() {
            return Err(format!("step {step}: {v}"));
        }
    }
    Ok((steps, exhausted))
}

#[test]
fn criterion_4_handle_consistency_fuzz() {
    let start = Instant::now();
    let outcomes = exec::map(Execution::available(), (0..1000u64).collect(), |seed| {
        (seed, fuzz_interleaving(seed))
    });
    let elapsed = start.elapsed();
    let mut failures = Vec::new();
    let (mut ops, mut refusals) = (0, 0);
    for (seed, o) in outcomes {
        match o {
            Ok((n, e)) => {
                ops += n;
                refusals += e;
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    let ok = failures.is_empty() && refusals > 0 && elapsed < Duration::from_secs(30);
    verdict(
        4,
        ok,
        format!("1000 interleavings, {ops} operations, {refusals} refusals at a full pool ({elapsed:.2?})"),
    );
    failures.iter().take(10).for_each(detail);
    assert!(ok);
}

// ---------------------------------------------------------------------------

/// Oracle: lay the segments down in sequence order into a flat buffer.
fn sort_by_seq_oracle(segments: &[(u32, Vec<u8>)]) -> Option<Vec<u8>> {
    let mut sorted: Vec<&(u32, Vec<u8>)> = segments.iter().collect();
    sorted.sort_by_key(|(seq, _)| *seq);
    let len = sorted.iter().map(|(s, d)| *s as usize + d.len()).max().unwrap_or(0);
    let mut out = vec![0u8; len];
    let mut covered = vec![false; len];
    for (seq, data) in sorted {
        let at = *seq as usize;
        out[at..at + data.len()].copy_from_slice(data);
        covered[at..at + data.len()].iter_mut().for_each(|c| *c = true);
    }
    covered.iter().all(|c| *c).then_some(out)
}

fn strip_header(raw: &[u8]) -> Option<&[u8]> {
    let end = raw.windows(4).position(|w| w == b"\r\n\r\n")?;
    Some(&raw[end + 4..])
}

fn reassembly_case(seed: u64) -> Result<usize, String> {
    let mut r = rng(seed);
    let size = if seed.is_multiple_of(10) {
        r.random_range(0..64)
    } else {
        r.random_range(0..=1_000_000)
    };
    let mut body = vec![0u8; size];
    r.fill(&mut body[..]);
    let raw = render_response(200, &body);
    let mss = r.random_range(1..=1460usize);

    let mut segs: Vec<(u32, Vec<u8>)> = Vec::new();
    let mut at = 0;
    while at < raw.len() {
        let n = r.random_range(1..=mss).min(raw.len() - at);
        segs.push((at as u32, raw[at..at + n].to_vec()));
        at += n;
    }
    let dup_rate = r.random_range(0.0..0.5);
    let mut wire = segs.clone();
    for (seq, data) in &segs {
        if r.random_bool(dup_rate) {
            // Exact duplicate, or a retransmission cut at a different point.
            if data.len() > 1 && r.random_bool(0.5) {
                let cut = r.random_range(1..data.len());
                wire.push((seq + cut as u32, data[cut..].to_vec()));
            } else {
                wire.push((*seq, data.clone()));
            }
        }
    }
    wire.shuffle(&mut r);

    let server = SocketAddrV4::new(Ipv4Addr::new(10, 0, 1, 1), 80);
    let proxy = SocketAddrV4::new(PROXY, 8000);
    let mut packets: Vec<SimPacket> = wire
        .iter()
        .map(|(seq, data)| SimPacket {
            src: server,
            dst: proxy,
            seq: *seq,
            ack: 77,
            flags: TcpFlags::ACK,
            payload: Bytes::copy_from_slice(data),
        })
        .collect();
    let fin_at = r.random_range(0..=packets.len());
    packets.insert(
        fin_at,
        SimPacket::control(server, proxy, raw.len() as u32, 77, TcpFlags::FIN | TcpFlags::ACK),
    );

    let expected_raw = sort_by_seq_oracle(&wire).ok_or("oracle saw a gap")?;
    let expected = strip_header(&expected_raw).ok_or("oracle found no header")?;

    let mut cache = Cache::new(1, Store::new());
    let name = format!("srv/s{seed}.bin").parse().unwrap();
    cache
        .set_filter(FlowFilter {
            filename: name,
            server_ip: *server.ip(),
            dst_port: proxy.port(),
        })
        .unwrap();
    let mut last = TapEffect::Ignored;
    for p in &packets {
        last = cache.on_packet(p);
    }
    let TapEffect::Complete(key) = last else {
        return Err(format!("size {size}: stream not complete after all packets ({last:?})"));
    };
    match cache.finalize(key, 1) {
        Some(Outcome::Stored(ack)) => {
            let stored = &cache.store().get(&ack.content_name).unwrap().body;
            if &stored[..] != expected {
                return Err(format!("size {size} mss {mss}: stored body differs from oracle"));
            }
            Ok(packets.len())
        }
        other => Err(format!("size {size} mss {mss}: {other:?}")),
    }
}

#[test]
fn criterion_5_reassembly_oracle() {
    let start = Instant::now();
    let outcomes = exec::map(Execution::available(), (0..500u64).collect(), |seed| {
        (seed, reassembly_case(seed))
    });
    let elapsed = start.elapsed();
    let mut failures = Vec::new();
    let mut packets = 0;
    for (seed, o) in outcomes {
        match o {
            Ok(n) => packets += n,
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    let ok = failures.is_empty() && elapsed < Duration::from_secs(60);
    verdict(
        5,
        ok,
        format!("500 streams (0 to 1 MB), {packets} tapped packets, byte-exact against sort-by-seq ({elapsed:.2?})"),
    );
    failures.iter().take(10).for_each(detail);
    assert!(ok);
}

// ---------------------------------------------------------------------------

fn range_scenario(size: usize, cuts: &[usize], skip: Option<usize>) -> String {
    let mut bounds = vec![0];
    bounds.extend_from_slice(cuts);
    bounds.push(size);
    let mut workload = String::new();
    let mut prev: Option<String> = None;
    for (i, w) in bounds.windows(2).enumerate() {
        if Some(i) == skip {
            continue;
        }
        let label = format!("part{i}");
        let when = match &prev {
            None => "at=0".to_string(),
            Some(p) => format!("after={p} gap=10"),
        };
        workload.push_str(&format!(
            "{label} c1 srv /clip.mp4 {when} range={}-{}\n",
            w[0],
            w[1] - 1
        ));
        prev = Some(label);
    }
    format!(
        "[nodes]\nswitch s1\nswitch s2\nclient c1 10.0.0.1\nproxy p1 10.0.0.100\ncache k1 10.0.0.200\n\
         server srv 10.0.1.1\n[links]\nc1 s1 delay=1 rate=1000\np1 s1 delay=1 rate=1000\n\
         k1 s1 delay=1 rate=1000\ns1 s2 delay=40 rate=1000\ns2 srv delay=1 rate=1000\n\
         [contents]\nsrv /clip.mp4 {size}\n[workload]\n{workload}"
    )
}

#[test]
fn criterion_6_range_accumulation() {
    let mut r = rng(6);
    let mut failures = Vec::new();
    let mut runs = 0;
    let name = "srv/clip.mp4".parse().unwrap();
    for k in 1..=8usize {
        let size = r.random_range(k * 300..20_000);
        let mut cuts: BTreeSet<usize> = BTreeSet::new();
        while cuts.len() < k - 1 {
            cuts.insert(r.random_range(1..size));
        }
        let cuts: Vec<usize> = cuts.into_iter().collect();

        let cfg = ScenarioConfig::parse(&format!("ranges-{k}"), &range_scenario(size, &cuts, None)).unwrap();
        let report = run(&cfg);
        runs += 1;
        let acks: Vec<_> = report.trace.find("recv STORED_ACK").collect();
        let last_served = report
            .trace
            .events()
            .iter()
            .filter(|e| matches!(e.milestone, Some(Milestone::Served { .. })) && e.component == "srv")
            .map(|e| e.time)
            .max()
            .unwrap();
        let stored = report.caches["k1"].get(&name).map(|e| e.body.clone());
        if acks.len() != 1 {
            failures.push(format!("k={k}: {} STORED ACKs", acks.len()));
        } else if acks[0].time < last_served {
            failures.push(format!(
                "k={k}: stored at {} before the last chunk left the origin",
                acks[0].time
            ));
        }
        if stored.as_deref() != Some(&report.fixtures[&name][..]) {
            failures.push(format!("k={k}: stored copy differs from fixture"));
        }
        if report.caches["k1"].len() != 1 {
            failures.push(format!("k={k}: {} entries in the cache", report.caches["k1"].len()));
        }
        failures.extend(report.violations.iter().map(|v| format!("k={k}: {v}")));

        if k >= 2 {
            let skip = r.random_range(0..k);
            let text = range_scenario(size, &cuts, Some(skip));
            let cfg = ScenarioConfig::parse(&format!("ranges-{k}-partial"), &text).unwrap();
            let report = run(&cfg);
            runs += 1;
            if report.trace.find("recv STORED_ACK").count() != 0 || !report.caches["k1"].is_empty() {
                failures.push(format!("k={k} without chunk {skip}: content stored"));
            }
            failures.extend(report.violations.iter().map(|v| format!("k={k} partial: {v}")));
        }
    }
    let ok = failures.is_empty();
    verdict(
        6,
        ok,
        format!("k = 1..8 range chunks stored once after full coverage; partial coverage never stored ({runs} runs)"),
    );
    failures.iter().for_each(detail);
    assert!(ok);
}

// ---------------------------------------------------------------------------

struct ForkCase {
    topo: Topology,
    switches: Vec<NodeId>,
    adj: BTreeMap<usize, Vec<usize>>,
    server: NodeId,
    proxy: NodeId,
    cache: NodeId,
    at: [usize; 3],
}

fn fork_case(n: usize, edges: &BTreeSet<(usize, usize)>, at: [usize; 3]) -> ForkCase {
    let mut topo = Topology::new();
    let switches: Vec<NodeId> = (0..n).map(|i| topo.add_switch(&format!("s{i}")).unwrap()).collect();
    let mut adj: BTreeMap<usize, Vec<usize>> = (0..n).map(|i| (i, Vec::new())).collect();
    for &(a, b) in edges {
        topo.add_link(switches[a], switches[b], 1, 1).unwrap();
        adj.get_mut(&a).unwrap().push(b);
        adj.get_mut(&b).unwrap().push(a);
    }
    let server = topo
        .add_host("srv", Ipv4Addr::new(10, 0, 1, 1), HostRole::Server)
        .unwrap();
    let proxy = topo.add_host("p", PROXY, HostRole::Proxy).unwrap();
    let cache = topo.add_host("k", CACHE, HostRole::Cache).unwrap();
    topo.add_link(server, switches[at[0]], 1, 1).unwrap();
    topo.add_link(proxy, switches[at[1]], 1, 1).unwrap();
    topo.add_link(cache, switches[at[2]], 1, 1).unwrap();
    ForkCase {
        topo,
        switches,
        adj,
        server,
        proxy,
        cache,
        at,
    }
}

/// Brute force: on the routed server→proxy switch path (checked to be a
/// shortest path), the minimum hop count to the cache's switch, ties to
/// the smallest node id.
fn check_fork(c: &ForkCase) -> Result<(), String> {
    let got = compute_fork_switch(&c.topo, c.server, c.proxy, c.cache).ok_or("no fork switch")?;
    let path = c.topo.switches_on_route(c.server, c.proxy).ok_or("no route")?;
    let index = |id: NodeId| c.switches.iter().position(|s| *s == id).unwrap();
    let path: Vec<usize> = path.into_iter().map(index).collect();
    let from_server = bfs(&c.adj, c.at[0]);
    if path.len() as u32 != from_server[&c.at[1]] + 1 || path[0] != c.at[0] || *path.last().unwrap() != c.at[1] {
        return Err(format!("route {path:?} is not a shortest server→proxy path"));
    }
    let to_cache = bfs(&c.adj, c.at[2]);
    let best = path.iter().map(|s| to_cache[s]).min().unwrap();
    let expected = path
        .iter()
        .filter(|s| to_cache[s] == best)
        .map(|s| c.switches[*s])
        .min()
        .unwrap();
    let got_i = index(got);
    if !path.contains(&got_i) {
        return Err(format!("fork s{got_i} not on path {path:?}"));
    }
    if got != expected {
        return Err(format!(
            "fork s{got_i} ({} hops), expected s{} ({best} hops)",
            to_cache[&got_i],
            index(expected)
        ));
    }
    Ok(())
}

fn connected(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    let mut adj: BTreeMap<usize, Vec<usize>> = (0..n).map(|i| (i, Vec::new())).collect();
    for &(a, b) in edges {
        adj.get_mut(&a).unwrap().push(b);
        adj.get_mut(&b).unwrap().push(a);
    }
    bfs(&adj, 0).len() == n
}

#[test]
fn criterion_7_fork_point_optimality() {
    let mut failures = Vec::new();
    let mut cases = 0;
    let mut graphs = 0;
    // Every connected labelled graph on up to four switches, every placement.
    for n in 1..=4usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        for mask in 0u32..(1 << pairs.len()) {
            let edges: BTreeSet<_> = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, e)| *e)
                .collect();
            if !connected(n, &edges) {
                continue;
            }
            graphs += 1;
            for s in 0..n {
                for p in 0..n {
                    for k in 0..n {
                        cases += 1;
                        if let Err(e) = check_fork(&fork_case(n, &edges, [s, p, k])) {
                            failures.push(format!("n={n} edges={edges:?} at={:?}: {e}", [s, p, k]));
                        }
                    }
                }
            }
        }
    }
    // Random graphs up to ten switches.
    let mut r = rng(7);
    for _ in 0..100 {
        let n = r.random_range(5..=10);
        let extra = r.random_range(0..n);
        let edges = random_graph(&mut r, n, extra);
        graphs += 1;
        for _ in 0..5 {
            let at = [r.random_range(0..n), r.random_range(0..n), r.random_range(0..n)];
            cases += 1;
            if let Err(e) = check_fork(&fork_case(n, &edges, at)) {
                failures.push(format!("n={n} edges={edges:?} at={at:?}: {e}"));
            }
        }
    }
    let ok = failures.is_empty();
    verdict(
        7,
        ok,
        format!("{cases} placements over {graphs} connected graphs (exhaustive to 4 switches, 100 random to 10)"),
    );
    failures.iter().take(10).for_each(detail);
    assert!(ok);
}

// ---------------------------------------------------------------------------

/// Offsets of 256-byte blocks whose leading tag does not name `content`.
fn leaked_blocks(content: &str, offset: usize, body: &[u8]) -> Vec<usize> {
    let mut bad = Vec::new();
    let first = offset.div_ceil(256) * 256;
    let mut at = first;
    while at < offset + body.len() {
        let tag = format!("{content}#{}|", at / 256);
        let slice = &body[at - offset..(at - offset + tag.len()).min(body.len())];
        if !tag.as_bytes().starts_with(slice) {
            bad.push(at);
        }
        at += 256;
    }
    bad
}

#[test]
fn criterion_8_multi_entity_cases() {
    let names = [
        "one_client_one_server",
        "many_clients_one_server",
        "multi_process_client",
        "multi_file_server",
        "many_clients_many_servers",
    ];
    let mut failures = Vec::new();
    let mut requests = 0;
    for name in names {
        let report = run(&scenario(name));
        failures.extend(report.violations.iter().map(|v| format!("{name}: {v}")));
        for m in &report.metrics.requests {
            requests += 1;
            let out = report.outcome(&m.label).unwrap();
            let body = out.body().unwrap_or_default();
            if body.is_empty() {
                failures.push(format!("{name}/{}: empty response", m.label));
            }
            let leaks = leaked_blocks(&m.content, 0, body);
            if !leaks.is_empty() {
                failures.push(format!("{name}/{}: foreign blocks at {leaks:?}", m.label));
            }
            if m.handle.is_none() {
                failures.push(format!("{name}/{}: no handle", m.label));
            }
        }
        // Mappings alive at the same time never share a handle.
        let maps = &report.mappings;
        for (i, a) in maps.iter().enumerate() {
            for b in &maps[i + 1..] {
                let a_end = a.released_at.unwrap_or(u64::MAX);
                let b_end = b.released_at.unwrap_or(u64::MAX);
                let overlap = a.allocated_at < b_end && b.allocated_at < a_end;
                if overlap && a.proxy_id == b.proxy_id && a.handle == b.handle {
                    failures.push(format!(
                        "{name}: handle {} live for {} and {}",
                        a.handle, a.client, b.client
                    ));
                }
            }
        }
        if name == "multi_process_client" {
            let locals: BTreeSet<_> = report.outcomes.values().filter_map(|o| o.local).collect();
            let handles: BTreeSet<_> = report.metrics.requests.iter().filter_map(|m| m.handle).collect();
            if locals.len() != 4 || handles.len() != 4 {
                failures.push(format!(
                    "{name}: {} connections, {} handles for 4 processes",
                    locals.len(),
                    handles.len()
                ));
            }
        }
    }
    let ok = failures.is_empty();
    verdict(
        8,
        ok,
        format!("5 multi-entity scenarios, {requests} requests, no foreign payload blocks, live handles distinct"),
    );
    failures.iter().for_each(detail);
    assert!(ok);
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_9_determinism() {
    let mut configs = all_scenarios();
    for seed in 0..5 {
        let rs = random_scenario(900 + seed, "contentflow");
        configs.push(ScenarioConfig::parse(&format!("random-{seed}"), &rs.text).unwrap());
    }
    let digests = |exec_mode| {
        exec::map(exec_mode, configs.clone(), |cfg| {
            let r = run(&cfg);
            (cfg.name.clone(), r.trace.digest(), r.metrics.to_csv())
        })
    };
    let first = digests(Execution::available());
    let second = digests(Execution::Sequential);
    let mut failures = Vec::new();
    for (a, b) in first.iter().zip(&second) {
        if a != b {
            failures.push(format!("{}: trace digest {} vs {}", a.0, &a.1[..12], &b.1[..12]));
        }
    }
    let ok = failures.is_empty();
    verdict(
        9,
        ok,
        format!("{} scenarios run twice, identical trace digests", first.len()),
    );
    failures.iter().for_each(detail);
    assert!(ok);
}
