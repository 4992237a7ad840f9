//! Access-delay decomposition.
//!
//! A completed request's measured delay (first SYN to last response byte at
//! the client) is set against a closed composition of per-leg terms computed
//! from link parameters alone:
//!
//! * direct:  `TCP(C,S) + F(S,C)`
//! * proxied: `TCP(C,P) + Delay(P) + TCP(P,S) + F(S,P) + F(P,C)`
//! * cached:  `TCP(C,P) + Delay(P) + TCP(P,K) + F(K,P) + F(P,C)`
//!
//! `TCP(A,B)` is the round trip of the handshake plus the request's own
//! transit from A to B. `F(A,B)` is the time for a response sent as one burst
//! of MSS segments to fully arrive over the routed path. The proxy relays
//! each segment as it arrives, so `F(P,C)` is what the P→C leg adds on top of
//! `F(S,P)` when both legs form one store-and-forward pipeline.
//!
//! The pipeline arithmetic is the tandem-queue recurrence on each hop:
//! a packet starts serializing when it has arrived and the previous one has
//! left, and arrives `ceil(bytes/rate) + delay` later, on the byte clock the
//! links use. It is evaluated here directly from the topology, independent
//! of the event loop.

use std::fmt;

use thiserror::Error;

use crate::netmodel::{Hop, NodeId, Time, Topology};
use crate::trace::Milestone;

use super::run::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    Direct,
    Proxied,
    Cached,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::Direct => "direct",
            Case::Proxied => "proxied",
            Case::Cached => "cached",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DelayError {
    #[error("no request labelled {0}")]
    UnknownRequest(String),
    #[error("trace incomplete: {0}")]
    Incomplete(String),
    #[error("no route between {0} and {1}")]
    NoRoute(String, String),
    #[error("request was not a {expected} transfer: {found}")]
    WrongCase { expected: Case, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub label: String,
    pub value: Time,
    /// TCP and transfer terms carry up to one unit of rounding each; the
    /// proxy delay is exact.
    pub rounded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub case: Case,
    pub measured: Time,
    pub terms: Vec<Term>,
}

impl Decomposition {
    pub fn analytic(&self) -> Time {
        self.terms.iter().map(|t| t.value).sum()
    }

    /// One unit per TCP or transfer term.
    pub fn tolerance(&self) -> Time {
        self.terms.iter().filter(|t| t.rounded).count() as Time
    }

    pub fn error(&self) -> Time {
        self.measured.abs_diff(self.analytic())
    }

    pub fn agrees(&self) -> bool {
        self.error() <= self.tolerance()
    }
}

impl fmt::Display for Decomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self.terms.iter().map(|t| format!("{}={}", t.label, t.value)).collect();
        write!(
            f,
            "{}: measured={} analytic={} ({})",
            self.case,
            self.measured,
            self.analytic(),
            terms.join(" + ")
        )
    }
}

/// MSS segmentation of a `len`-byte message.
pub fn segments(len: u64, mss: usize) -> Vec<u64> {
    let mss = mss as u64;
    let mut out = vec![mss; (len / mss) as usize];
    if !len.is_multiple_of(mss) {
        out.push(len % mss);
    }
    out
}

/// Arrival time at the far end of `hops` of the last of `sizes`, all handed
/// to the first hop at `start` on idle links.
pub fn tandem(start: Time, sizes: &[u64], hops: &[Hop]) -> Time {
    let mut at = vec![start; sizes.len()];
    for hop in hops {
        let rate = u128::from(hop.rate);
        let mut free = 0u128;
        for (t, &size) in at.iter_mut().zip(sizes) {
            let begin = (u128::from(*t) * rate).max(free);
            free = begin + u128::from(size);
            *t = free.div_ceil(rate) as Time + hop.delay;
        }
    }
    at.last()
        .copied()
        .unwrap_or(start + hops.iter().map(|h| h.delay).sum::<Time>())
}

fn path(topo: &Topology, a: NodeId, b: NodeId) -> Result<Vec<Hop>, DelayError> {
    topo.route(a, b)
        .ok_or_else(|| DelayError::NoRoute(topo.name(a).to_string(), topo.name(b).to_string()))
}

fn one_way(hops: &[Hop]) -> Time {
    hops.iter().map(|h| h.delay).sum()
}

/// Handshake round trip, then the request's transit.
fn tcp_term(topo: &Topology, a: NodeId, b: NodeId, request: u64) -> Result<Time, DelayError> {
    let fwd = path(topo, a, b)?;
    let rev = path(topo, b, a)?;
    let handshake = one_way(&fwd) + one_way(&rev);
    Ok(handshake + tandem(0, &[request], &fwd))
}

/// Leg names and nodes as they appear in a decomposition.
struct Leg<'a> {
    name: &'a str,
    node: NodeId,
}

/// Closed composition for a transfer along `client → [proxy →] source`.
#[allow(clippy::too_many_arguments)]
pub fn compose(
    topo: &Topology,
    case: Case,
    client: NodeId,
    proxy: Option<(NodeId, Time)>,
    source: NodeId,
    request: u64,
    response: u64,
    mss: usize,
) -> Result<Vec<Term>, DelayError> {
    let segs = segments(response, mss);
    let c = Leg {
        name: "Client",
        node: client,
    };
    let s = Leg {
        name: if case == Case::Cached { "Cache" } else { "Server" },
        node: source,
    };
    let term = |label: String, value, rounded| Term { label, value, rounded };
    match proxy {
        None => Ok(vec![
            term(
                format!("TCP({},{})", c.name, s.name),
                tcp_term(topo, c.node, s.node, request)?,
                true,
            ),
            term(
                format!("F({},{})", s.name, c.name),
                tandem(0, &segs, &path(topo, s.node, c.node)?),
                true,
            ),
        ]),
        Some((p, delay)) => {
            let to_proxy = path(topo, s.node, p)?;
            let mut through = to_proxy.clone();
            through.extend(path(topo, p, c.node)?);
            let f_sp = tandem(0, &segs, &to_proxy);
            let f_all = tandem(0, &segs, &through);
            Ok(vec![
                term(
                    format!("TCP({},Proxy)", c.name),
                    tcp_term(topo, c.node, p, request)?,
                    true,
                ),
                term("Delay(Proxy)".into(), delay, false),
                term(
                    format!("TCP(Proxy,{})", s.name),
                    tcp_term(topo, p, s.node, request)?,
                    true,
                ),
                term(format!("F({},Proxy)", s.name), f_sp, true),
                term(format!("F(Proxy,{})", c.name), f_all - f_sp, true),
            ])
        }
    }
}

/// Decomposes the delay of request `label` in a finished run.
pub fn delay_decompose(report: &RunReport, label: &str, case: Case) -> Result<Decomposition, DelayError> {
    let spec = report
        .request(label)
        .ok_or_else(|| DelayError::UnknownRequest(label.to_string()))?;
    let out = report
        .outcome(label)
        .ok_or_else(|| DelayError::UnknownRequest(label.to_string()))?;
    let missing = |what: &str| DelayError::Incomplete(format!("{label}: {what}"));
    let local = out.local.ok_or_else(|| missing("never started"))?;
    let (start, done) = report.trace.milestones().fold((None, None), |(s, d), (t, m)| match m {
        Milestone::ClientStart { local: l, .. } if *l == local => (Some(t), d),
        Milestone::ClientDone { local: l, .. } if *l == local => (s, Some(t)),
        _ => (s, d),
    });
    let start = start.ok_or_else(|| missing("no start"))?;
    let done = done.ok_or_else(|| missing("no completion"))?;

    let upstream = report.trace.events().iter().find_map(|e| match e.milestone {
        Some(Milestone::ProxyUpstream {
            client,
            local: up,
            remote,
        }) if client == local => Some((e.component.clone(), up, remote)),
        _ => None,
    });
    let served_for = |peer| {
        report.trace.milestones().find_map(|(_, m)| match m {
            Milestone::Served {
                peer: p,
                request_bytes,
                response_bytes,
                local,
            } if *p == peer => Some((*local, *request_bytes, *response_bytes)),
            _ => None,
        })
    };
    let topo = &report.topology;
    let node_at = |ip| topo.by_ip(ip).ok_or_else(|| missing("responder not in topology"));

    let terms = match (case, upstream) {
        (Case::Direct, None) => {
            let (server, request, response) = served_for(local).ok_or_else(|| missing("no response served"))?;
            compose(
                topo,
                case,
                spec.client,
                None,
                node_at(*server.ip())?,
                request,
                response,
                report.mss,
            )?
        }
        (Case::Proxied | Case::Cached, Some((proxy_name, up, remote))) => {
            let is_cache = report.caches.keys().any(|k| {
                topo.by_name(k)
                    .and_then(|n| topo.ip(n))
                    .is_some_and(|ip| ip == *remote.ip())
            });
            if is_cache != (case == Case::Cached) {
                return Err(DelayError::WrongCase {
                    expected: case,
                    found: format!("upstream went to {remote}"),
                });
            }
            let (_, request, response) = served_for(up).ok_or_else(|| missing("no upstream response"))?;
            let proxy = topo.by_name(&proxy_name).ok_or_else(|| missing("unknown proxy"))?;
            let delay = report.proxy_delays.get(&proxy_name).copied().unwrap_or(0);
            compose(
                topo,
                case,
                spec.client,
                Some((proxy, delay)),
                node_at(*remote.ip())?,
                request,
                response,
                report.mss,
            )?
        }
        (_, found) => {
            return Err(DelayError::WrongCase {
                expected: case,
                found: match found {
                    Some((p, _, remote)) => format!("relayed by {p} from {remote}"),
                    None => "no proxy involved".into(),
                },
            })
        }
    };
    Ok(Decomposition {
        case,
        measured: done - start,
        terms,
    })
}
