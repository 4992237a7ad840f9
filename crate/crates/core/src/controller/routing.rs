use crate::netmodel::{NodeId, Topology};

/// The switch on the server→proxy route closest (in hops) to the cache;
/// ties go to the smallest node id. `None` when there is no route or no
/// on-path switch reaches the cache.
pub fn compute_fork_switch(topo: &Topology, server: NodeId, proxy: NodeId, cache: NodeId) -> Option<NodeId> {
    let on_path = topo.switches_on_route(server, proxy)?;
    let to_cache = topo.hop_distances(cache);
    on_path
        .into_iter()
        .filter_map(|sw| to_cache.get(&sw).map(|d| (*d, sw)))
        .min()
        .map(|(_, sw)| sw)
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;

    use super::*;
    use crate::netmodel::HostRole;

    #[test]
    fn line_forks_at_cache_switch() {
        let mut t = Topology::new();
        let s1 = t.add_switch("s1").unwrap();
        let s2 = t.add_switch("s2").unwrap();
        let s3 = t.add_switch("s3").unwrap();
        let p = t.add_host("p", Ipv4Addr::new(10, 0, 0, 1), HostRole::Proxy).unwrap();
        let srv = t.add_host("srv", Ipv4Addr::new(10, 0, 0, 2), HostRole::Server).unwrap();
        let k = t.add_host("k", Ipv4Addr::new(10, 0, 0, 3), HostRole::Cache).unwrap();
        t.add_link(s1, s2, 1, 1).unwrap();
        t.add_link(s2, s3, 1, 1).unwrap();
        t.add_link(p, s1, 1, 1).unwrap();
        t.add_link(srv, s3, 1, 1).unwrap();
        t.add_link(k, s2, 1, 1).unwrap();
        assert_eq!(compute_fork_switch(&t, srv, p, k), Some(s2));
    }

    #[test]
    fn colocated_cache_forks_at_proxy_switch() {
        let mut t = Topology::new();
        let s1 = t.add_switch("s1").unwrap();
        let s2 = t.add_switch("s2").unwrap();
        let p = t.add_host("p", Ipv4Addr::new(10, 0, 0, 1), HostRole::Proxy).unwrap();
        let srv = t.add_host("srv", Ipv4Addr::new(10, 0, 0, 2), HostRole::Server).unwrap();
        let k = t.add_host("k", Ipv4Addr::new(10, 0, 0, 3), HostRole::Cache).unwrap();
        t.add_link(s1, s2, 1, 1).unwrap();
        t.add_link(p, s1, 1, 1).unwrap();
        t.add_link(srv, s2, 1, 1).unwrap();
        t.add_link(k, s1, 1, 1).unwrap();
        assert_eq!(compute_fork_switch(&t, srv, p, k), Some(s1));
    }

    #[test]
    fn equidistant_candidates_pick_smaller_id() {
        // s1 - s2 - s3 in a line; the cache hangs off s4, which links to both
        // s1 and s2.
        let mut t = Topology::new();
        let s1 = t.add_switch("s1").unwrap();
        let s2 = t.add_switch("s2").unwrap();
        let s3 = t.add_switch("s3").unwrap();
        let s4 = t.add_switch("s4").unwrap();
        let p = t.add_host("p", Ipv4Addr::new(10, 0, 0, 1), HostRole::Proxy).unwrap();
        let srv = t.add_host("srv", Ipv4Addr::new(10, 0, 0, 2), HostRole::Server).unwrap();
        let k = t.add_host("k", Ipv4Addr::new(10, 0, 0, 3), HostRole::Cache).unwrap();
        t.add_link(s1, s2, 1, 1).unwrap();
        t.add_link(s2, s3, 1, 1).unwrap();
        t.add_link(s4, s1, 1, 1).unwrap();
        t.add_link(s4, s2, 1, 1).unwrap();
        t.add_link(p, s1, 1, 1).unwrap();
        t.add_link(srv, s3, 1, 1).unwrap();
        t.add_link(k, s4, 1, 1).unwrap();
        assert_eq!(compute_fork_switch(&t, srv, p, k), Some(s1));
    }
}
