#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write;
use std::path::PathBuf;

use contentflow::controller::compute_fork_switch;
use contentflow::netmodel::NodeId;
use contentflow::scenarios::{ScenarioConfig, World};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn scenario(name: &str) -> ScenarioConfig {
    let path = scenario_dir().join(format!("{name}.cfg"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ScenarioConfig::parse(name, &text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn all_scenarios() -> Vec<ScenarioConfig> {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "cfg").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names.iter().map(|n| scenario(n)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random connected switch graph: a random spanning tree plus extra edges.
pub fn random_graph(rng: &mut ChaCha8Rng, switches: usize, extra: usize) -> BTreeSet<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for i in 1..switches {
        let j = rng.random_range(0..i);
        edges.insert((j, i));
    }
    for _ in 0..extra {
        let a = rng.random_range(0..switches);
        let b = rng.random_range(0..switches);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    edges
}

/// Hop distances from `from` over an undirected adjacency list.
pub fn bfs(adj: &BTreeMap<usize, Vec<usize>>, from: usize) -> BTreeMap<usize, u32> {
    let mut dist = BTreeMap::from([(from, 0)]);
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        for &m in adj.get(&n).into_iter().flatten() {
            if !dist.contains_key(&m) {
                dist.insert(m, dist[&n] + 1);
                queue.push_back(m);
            }
        }
    }
    dist
}

/// Random single-client topology with one proxy, one cache and one origin
/// holding `/f.bin`, fetched twice (miss, then hit).
pub struct RandomScenario {
    pub text: String,
    pub size: usize,
}

/// Generates configs until the cache's copy of the origin response shares
/// no directed link with the other legs of the transfer, the setting in
/// which the tandem delay model holds.
pub fn random_scenario(seed: u64, mode: &str) -> RandomScenario {
    (0u64..)
        .map(|attempt| random_candidate(seed, attempt, mode))
        .find(|rs| !fork_copy_contends(&rs.text))
        .unwrap()
}

/// Whether the fork-to-cache copy overlaps, link and direction, with the
/// server→proxy or proxy→client legs.
pub fn fork_copy_contends(text: &str) -> bool {
    let cfg = ScenarioConfig::parse("candidate", text).unwrap();
    let topo = World::build(&cfg).unwrap().topology;
    let id = |n| topo.by_name(n).unwrap();
    let (srv, proxy, cache, client) = (id("srv"), id("p1"), id("k1"), id("c1"));
    let Some(fork) = compute_fork_switch(&topo, srv, proxy, cache) else {
        return false;
    };
    let directed =
        |a, b| -> BTreeSet<(NodeId, NodeId)> { topo.route(a, b).unwrap().iter().map(|h| (h.from, h.to)).collect() };
    let copy = directed(fork, cache);
    let legs: BTreeSet<_> = directed(srv, proxy).union(&directed(proxy, client)).copied().collect();
    !copy.is_disjoint(&legs)
}

fn random_candidate(seed: u64, attempt: u64, mode: &str) -> RandomScenario {
    let mut r = rng(seed ^ attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let switches = r.random_range(1..=5);
    let extra = r.random_range(0..3);
    let edges = random_graph(&mut r, switches, extra);
    let size = *[0usize, 1, 700, 1460, 5_000, 20_000, 100_000].choose(&mut r).unwrap() + r.random_range(0..3000);
    let mss = *[536usize, 1000, 1460].choose(&mut r).unwrap();
    let proxy_delay = *[0u64, 0, 3, 17].choose(&mut r).unwrap();
    let mut t = String::new();
    writeln!(t, "[nodes]").unwrap();
    for s in 0..switches {
        writeln!(t, "switch s{s}").unwrap();
    }
    writeln!(t, "client c1 10.0.0.1").unwrap();
    writeln!(t, "proxy p1 10.0.0.100 delay={proxy_delay}").unwrap();
    writeln!(t, "cache k1 10.0.0.200").unwrap();
    writeln!(t, "server srv 10.0.1.1").unwrap();
    writeln!(t, "[links]").unwrap();
    let link = |t: &mut String, a: String, b: String, r: &mut ChaCha8Rng| {
        let delay = r.random_range(0..60);
        let rate = *[50u64, 200, 1000, 10_000].choose(r).unwrap();
        writeln!(t, "{a} {b} delay={delay} rate={rate}").unwrap();
    };
    for (a, b) in &edges {
        link(&mut t, format!("s{a}"), format!("s{b}"), &mut r);
    }
    for host in ["c1", "p1", "k1", "srv"] {
        let at = r.random_range(0..switches);
        link(&mut t, host.into(), format!("s{at}"), &mut r);
    }
    writeln!(t, "[contents]\nsrv /f.bin {size}").unwrap();
    writeln!(t, "[workload]").unwrap();
    writeln!(t, "miss c1 srv /f.bin at={}", r.random_range(0..20)).unwrap();
    writeln!(t, "hit c1 srv /f.bin after=miss gap=5000").unwrap();
    writeln!(t, "[policy]\nmode = {mode}\nmss = {mss}\nseed = {seed}").unwrap();
    RandomScenario { text: t, size }
}
