//! Scenario files.
//!
//! Line-oriented text in five sections. `#` starts a comment; blank lines
//! are ignored. Every entry is a few positional fields followed by
//! `key=value` options. The full grammar, with examples, is in
//! `scenarios/README.md` at the repository root.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::controller::{Admission, Mode, Selection};
use crate::httpsem::{content_name, ByteRange, ContentName};
use crate::msg::PortRange;
use crate::netmodel::{Direction, FaultKind, LinkFault, Time, Trigger, DEFAULT_MSS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}\n  | {text}")]
pub struct ConfigError {
    pub line: usize,
    pub text: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Switch,
    Client,
    Server,
    Proxy,
    Cache,
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeRole::Switch => "switch",
            NodeRole::Client => "client",
            NodeRole::Server => "server",
            NodeRole::Proxy => "proxy",
            NodeRole::Cache => "cache",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeDecl {
    pub line: usize,
    pub name: String,
    pub role: NodeRole,
    pub ip: Option<Ipv4Addr>,
    /// Proxy or cache id.
    pub id: Option<u32>,
    pub handles: Option<PortRange>,
    pub listen: Option<PortRange>,
    /// Proxy processing delay per request.
    pub delay: Time,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkDecl {
    pub line: usize,
    pub a: String,
    pub b: String,
    pub delay: Time,
    pub rate: u64,
    pub faults: Vec<LinkFault>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentDecl {
    pub line: usize,
    pub server: String,
    pub path: String,
    pub size: usize,
}

impl ContentDecl {
    /// The server's node name doubles as its HTTP host name.
    pub fn name(&self) -> ContentName {
        content_name(&self.server, &self.path).expect("validated")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestDecl {
    pub line: usize,
    pub label: String,
    pub client: String,
    pub server: String,
    pub path: String,
    pub at: Time,
    /// Start `gap` after this request completes instead of at `at`.
    pub after: Option<String>,
    pub gap: Time,
    pub range: Option<ByteRange>,
    pub method: String,
    /// Body length for methods that carry one.
    pub body: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyDecl {
    pub mode: Mode,
    pub admission: Admission,
    pub selection: Selection,
    pub seed: u64,
    pub mss: usize,
    pub controller_up: bool,
    pub grace: Time,
    pub max_events: u64,
    pub trace_packets: bool,
}

impl Default for PolicyDecl {
    fn default() -> Self {
        Self {
            mode: Mode::ContentFlow,
            admission: Admission::All,
            selection: Selection::First,
            seed: 1,
            mss: DEFAULT_MSS,
            controller_up: true,
            grace: crate::cache::GRACE_PERIOD,
            max_events: 20_000_000,
            trace_packets: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub name: String,
    pub nodes: Vec<NodeDecl>,
    pub links: Vec<LinkDecl>,
    pub contents: Vec<ContentDecl>,
    pub workload: Vec<RequestDecl>,
    pub policy: PolicyDecl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Nodes,
    Links,
    Contents,
    Workload,
    Policy,
}

struct Line<'a> {
    no: usize,
    text: &'a str,
}

impl Line<'_> {
    fn err(&self, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: self.no,
            text: self.text.to_string(),
            message: message.into(),
        }
    }
}

/// Positional fields and `key=value` options of one entry.
struct Fields<'a> {
    positional: Vec<&'a str>,
    options: BTreeMap<&'a str, &'a str>,
}

fn split<'a>(line: &Line<'a>, body: &'a str) -> Result<Fields<'a>, ConfigError> {
    let mut positional = Vec::new();
    let mut options = BTreeMap::new();
    for token in body.split_whitespace() {
        match token.split_once('=') {
            Some((k, v)) => {
                if options.insert(k, v).is_some() {
                    return Err(line.err(format!("option `{k}` given twice")));
                }
            }
            None if options.is_empty() => positional.push(token),
            None => return Err(line.err(format!("`{token}` after options"))),
        }
    }
    Ok(Fields { positional, options })
}

impl<'a> Fields<'a> {
    fn take(&mut self, key: &str) -> Option<&'a str> {
        self.options.remove(key)
    }

    fn finish(self, line: &Line<'_>) -> Result<(), ConfigError> {
        match self.options.keys().next() {
            Some(k) => Err(line.err(format!("unknown option `{k}`"))),
            None => Ok(()),
        }
    }
}

fn num<T: std::str::FromStr>(line: &Line<'_>, what: &str, s: &str) -> Result<T, ConfigError> {
    s.parse()
        .map_err(|_| line.err(format!("{what}: `{s}` is not a valid number")))
}

fn port_range(line: &Line<'_>, what: &str, s: &str) -> Result<PortRange, ConfigError> {
    let (a, b) = s
        .split_once('-')
        .ok_or_else(|| line.err(format!("{what}: expected `first-last`, got `{s}`")))?;
    Ok(PortRange::new(num(line, what, a)?, num(line, what, b)?))
}

/// `fwd:drop#3;rev:dup%2;fwd:delay%4+50`: direction, kind, and either
/// `#n` (the n-th data packet) or `%n` (every n-th).
fn faults(line: &Line<'_>, s: &str) -> Result<Vec<LinkFault>, ConfigError> {
    let mut out = Vec::new();
    for item in s.split(';').filter(|i| !i.is_empty()) {
        let bad = || line.err(format!("fault `{item}`: expected dir:kind#n or dir:kind%n"));
        let (dir, rest) = item.split_once(':').ok_or_else(bad)?;
        let direction = match dir {
            "fwd" => Direction::Forward,
            "rev" => Direction::Reverse,
            _ => return Err(bad()),
        };
        let (kind, trig, n) = if let Some((k, n)) = rest.split_once('#') {
            (k, '#', n)
        } else if let Some((k, n)) = rest.split_once('%') {
            (k, '%', n)
        } else {
            return Err(bad());
        };
        let (n, extra) = match n.split_once('+') {
            Some((n, e)) => (n, Some(num::<Time>(line, "fault delay", e)?)),
            None => (n, None),
        };
        let n: u64 = num(line, "fault trigger", n)?;
        if n == 0 {
            return Err(line.err("fault trigger must be at least 1"));
        }
        let kind = match (kind, extra) {
            ("drop", None) => FaultKind::Drop,
            ("dup", None) => FaultKind::Duplicate,
            ("delay", Some(e)) => FaultKind::Delay(e),
            _ => return Err(bad()),
        };
        let trigger = if trig == '#' {
            Trigger::Nth(n)
        } else {
            Trigger::Every(n)
        };
        out.push(LinkFault {
            direction,
            kind,
            trigger,
        });
    }
    Ok(out)
}

/// A comment starts at a `#` that begins the line or follows whitespace, so
/// the `#` of a fault trigger is kept.
fn strip_comment(raw: &str) -> &str {
    let bytes = raw.as_bytes();
    let cut = (0..bytes.len()).find(|&i| bytes[i] == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()));
    &raw[..cut.unwrap_or(raw.len())]
}

fn parse_node(line: &Line<'_>, body: &str) -> Result<NodeDecl, ConfigError> {
    let mut f = split(line, body)?;
    let (role, name, ip) = match f.positional[..] {
        [role, name] => (role, name, None),
        [role, name, ip] => (role, name, Some(ip)),
        _ => return Err(line.err("expected `<role> <name> [ip] [options]`")),
    };
    let role = match role {
        "switch" => NodeRole::Switch,
        "client" => NodeRole::Client,
        "server" => NodeRole::Server,
        "proxy" => NodeRole::Proxy,
        "cache" => NodeRole::Cache,
        other => return Err(line.err(format!("unknown role `{other}`"))),
    };
    let ip = ip
        .map(|s| {
            s.parse::<Ipv4Addr>()
                .map_err(|_| line.err(format!("`{s}` is not an IPv4 address")))
        })
        .transpose()?;
    match (role, ip) {
        (NodeRole::Switch, Some(_)) => return Err(line.err("switches have no address")),
        (NodeRole::Switch, None) => {}
        (_, None) => return Err(line.err(format!("{role} `{name}` needs an address"))),
        _ => {}
    }
    let mut decl = NodeDecl {
        line: line.no,
        name: name.to_string(),
        role,
        ip,
        id: None,
        handles: None,
        listen: None,
        delay: 0,
    };
    if matches!(role, NodeRole::Proxy | NodeRole::Cache) {
        if let Some(v) = f.take("id") {
            decl.id = Some(num(line, "id", v)?);
        }
    }
    if role == NodeRole::Proxy {
        if let Some(v) = f.take("handles") {
            decl.handles = Some(port_range(line, "handles", v)?);
        }
        if let Some(v) = f.take("listen") {
            decl.listen = Some(port_range(line, "listen", v)?);
        }
        if let Some(v) = f.take("delay") {
            decl.delay = num(line, "delay", v)?;
        }
    }
    f.finish(line)?;
    Ok(decl)
}

fn parse_link(line: &Line<'_>, body: &str) -> Result<LinkDecl, ConfigError> {
    let mut f = split(line, body)?;
    let [a, b] = f.positional[..] else {
        return Err(line.err("expected `<a> <b> delay=<t> rate=<bytes per unit>`"));
    };
    let delay = f.take("delay").ok_or_else(|| line.err("missing delay="))?;
    let rate = f.take("rate").ok_or_else(|| line.err("missing rate="))?;
    let decl = LinkDecl {
        line: line.no,
        a: a.to_string(),
        b: b.to_string(),
        delay: num(line, "delay", delay)?,
        rate: num(line, "rate", rate)?,
        faults: f
            .take("faults")
            .map(|s| faults(line, s))
            .transpose()?
            .unwrap_or_default(),
    };
    if decl.rate == 0 {
        return Err(line.err("rate must be positive"));
    }
    f.finish(line)?;
    Ok(decl)
}

fn parse_content(line: &Line<'_>, body: &str) -> Result<ContentDecl, ConfigError> {
    let f = split(line, body)?;
    let [server, path, size] = f.positional[..] else {
        return Err(line.err("expected `<server> <path> <size>`"));
    };
    let decl = ContentDecl {
        line: line.no,
        server: server.to_string(),
        path: path.to_string(),
        size: num(line, "size", size)?,
    };
    content_name(server, path).map_err(|e| line.err(e.to_string()))?;
    f.finish(line)?;
    Ok(decl)
}

fn parse_request(line: &Line<'_>, body: &str) -> Result<RequestDecl, ConfigError> {
    let mut f = split(line, body)?;
    let [label, client, server, path] = f.positional[..] else {
        return Err(line.err("expected `<label> <client> <server> <path> [options]`"));
    };
    let mut decl = RequestDecl {
        line: line.no,
        label: label.to_string(),
        client: client.to_string(),
        server: server.to_string(),
        path: path.to_string(),
        at: 0,
        after: None,
        gap: 0,
        range: None,
        method: "GET".to_string(),
        body: 0,
    };
    if let Some(v) = f.take("at") {
        decl.at = num(line, "at", v)?;
    }
    decl.after = f.take("after").map(str::to_string);
    if let Some(v) = f.take("gap") {
        decl.gap = num(line, "gap", v)?;
    }
    if let Some(v) = f.take("range") {
        let (a, b) = v
            .split_once('-')
            .ok_or_else(|| line.err(format!("range: expected `first-last`, got `{v}`")))?;
        let (first, last) = (num(line, "range", a)?, num(line, "range", b)?);
        if first > last {
            return Err(line.err("range: first exceeds last"));
        }
        decl.range = Some(ByteRange { first, last });
    }
    if let Some(v) = f.take("method") {
        decl.method = v.to_ascii_uppercase();
    }
    if let Some(v) = f.take("body") {
        decl.body = num(line, "body", v)?;
    }
    if decl.after.is_some() && decl.at != 0 {
        return Err(line.err("`at` and `after` are exclusive"));
    }
    f.finish(line)?;
    Ok(decl)
}

fn parse_policy(line: &Line<'_>, body: &str, policy: &mut PolicyDecl) -> Result<(), ConfigError> {
    let (key, value) = body
        .split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| line.err("expected `key = value`"))?;
    match key {
        "mode" => {
            policy.mode = match value {
                "contentflow" => Mode::ContentFlow,
                "direct" => Mode::Direct,
                _ => return Err(line.err("mode: expected `contentflow` or `direct`")),
            }
        }
        "admission" => {
            policy.admission = match value.split_once(':') {
                None if value == "all" => Admission::All,
                None if value == "none" => Admission::None,
                Some(("popularity", k)) => Admission::Popularity(num(line, "popularity", k)?),
                _ => return Err(line.err("admission: expected `all`, `none` or `popularity:<k>`")),
            }
        }
        "selection" => {
            policy.selection = match value {
                "first" => Selection::First,
                "least_loaded" => Selection::LeastLoaded,
                _ => return Err(line.err("selection: expected `first` or `least_loaded`")),
            }
        }
        "seed" => policy.seed = num(line, "seed", value)?,
        "mss" => {
            policy.mss = num(line, "mss", value)?;
            if policy.mss == 0 {
                return Err(line.err("mss must be positive"));
            }
        }
        "controller" => {
            policy.controller_up = match value {
                "up" => true,
                "down" => false,
                _ => return Err(line.err("controller: expected `up` or `down`")),
            }
        }
        "grace" => policy.grace = num(line, "grace", value)?,
        "max_events" => policy.max_events = num(line, "max_events", value)?,
        "trace_packets" => {
            policy.trace_packets = value
                .parse()
                .map_err(|_| line.err("trace_packets: expected `true` or `false`"))?
        }
        other => return Err(line.err(format!("unknown policy key `{other}`"))),
    }
    Ok(())
}

impl ScenarioConfig {
    /// Parses and validates a scenario. `name` labels its metrics.
    pub fn parse(name: &str, text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig {
            name: name.to_string(),
            nodes: Vec::new(),
            links: Vec::new(),
            contents: Vec::new(),
            workload: Vec::new(),
            policy: PolicyDecl::default(),
        };
        let mut section = None;
        for (i, raw) in text.lines().enumerate() {
            let line = Line { no: i + 1, text: raw };
            let body = strip_comment(raw).trim();
            if body.is_empty() {
                continue;
            }
            if let Some(head) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
                section = Some(match head {
                    "nodes" => Section::Nodes,
                    "links" => Section::Links,
                    "contents" => Section::Contents,
                    "workload" => Section::Workload,
                    "policy" => Section::Policy,
                    other => return Err(line.err(format!("unknown section [{other}]"))),
                });
                continue;
            }
            match section {
                None => return Err(line.err("entry before any [section]")),
                Some(Section::Nodes) => cfg.nodes.push(parse_node(&line, body)?),
                Some(Section::Links) => cfg.links.push(parse_link(&line, body)?),
                Some(Section::Contents) => cfg.contents.push(parse_content(&line, body)?),
                Some(Section::Workload) => cfg.workload.push(parse_request(&line, body)?),
                Some(Section::Policy) => parse_policy(&line, body, &mut cfg.policy)?,
            }
        }
        cfg.validate(text)?;
        Ok(cfg)
    }

    fn line_err(text: &str, no: usize, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: no,
            text: text.lines().nth(no.saturating_sub(1)).unwrap_or("").to_string(),
            message: message.into(),
        }
    }

    /// Cross-entry checks: names resolve, roles fit, ids and ranges do not collide.
    fn validate(&mut self, text: &str) -> Result<(), ConfigError> {
        let err = |no: usize, m: String| Self::line_err(text, no, m);
        let mut roles = BTreeMap::new();
        let mut ips = BTreeSet::new();
        for n in &self.nodes {
            if roles.insert(n.name.clone(), n.role).is_some() {
                return Err(err(n.line, format!("node `{}` declared twice", n.name)));
            }
            if let Some(ip) = n.ip {
                if !ips.insert(ip) {
                    return Err(err(n.line, format!("address {ip} used twice")));
                }
            }
        }
        self.assign_ids().map_err(|(no, m)| err(no, m))?;

        let mut linked = BTreeSet::new();
        for l in &self.links {
            for end in [&l.a, &l.b] {
                let Some(role) = roles.get(end) else {
                    return Err(err(l.line, format!("unknown node `{end}`")));
                };
                if *role != NodeRole::Switch && !linked.insert(end.clone()) {
                    return Err(err(l.line, format!("host `{end}` already has a link")));
                }
            }
            if l.a == l.b {
                return Err(err(l.line, "a link needs two distinct ends".into()));
            }
        }
        for n in self.nodes.iter().filter(|n| n.role != NodeRole::Switch) {
            if !linked.contains(&n.name) {
                return Err(err(n.line, format!("host `{}` has no link", n.name)));
            }
        }

        let mut names = BTreeSet::new();
        for c in &self.contents {
            if roles.get(&c.server) != Some(&NodeRole::Server) {
                return Err(err(c.line, format!("`{}` is not a server", c.server)));
            }
            if !names.insert(c.name()) {
                return Err(err(c.line, format!("content {} declared twice", c.name())));
            }
        }

        let mut labels = BTreeMap::new();
        for r in &self.workload {
            if roles.get(&r.client) != Some(&NodeRole::Client) {
                return Err(err(r.line, format!("`{}` is not a client", r.client)));
            }
            if roles.get(&r.server) != Some(&NodeRole::Server) {
                return Err(err(r.line, format!("`{}` is not a server", r.server)));
            }
            if r.method == "GET" {
                let name = content_name(&r.server, &r.path).map_err(|e| err(r.line, e.to_string()))?;
                if !names.contains(&name) {
                    return Err(err(r.line, format!("no content {name}")));
                }
            }
            if let Some(after) = &r.after {
                if !labels.contains_key(after) {
                    return Err(err(r.line, format!("`after={after}` must name an earlier request")));
                }
            }
            if labels.insert(r.label.clone(), r.line).is_some() {
                return Err(err(r.line, format!("request label `{}` used twice", r.label)));
            }
        }
        Ok(())
    }

    /// Fills in default proxy and cache ids and port ranges, and rejects
    /// collisions among explicit ones.
    fn assign_ids(&mut self) -> Result<(), (usize, String)> {
        for role in [NodeRole::Proxy, NodeRole::Cache] {
            let taken: BTreeSet<u32> = self
                .nodes
                .iter()
                .filter(|n| n.role == role)
                .filter_map(|n| n.id)
                .collect();
            let mut seen = BTreeSet::new();
            let mut next = 1;
            for n in self.nodes.iter_mut().filter(|n| n.role == role) {
                let id = match n.id {
                    Some(id) => id,
                    None => {
                        while taken.contains(&next) || seen.contains(&next) {
                            next += 1;
                        }
                        next
                    }
                };
                if !seen.insert(id) {
                    return Err((n.line, format!("{role} id {id} used twice")));
                }
                n.id = Some(id);
            }
        }
        let mut ranges: Vec<(usize, PortRange)> = Vec::new();
        for n in self.nodes.iter_mut().filter(|n| n.role == NodeRole::Proxy) {
            let k = (n.id.expect("assigned") - 1) as u16;
            let handles = *n
                .handles
                .get_or_insert_with(|| PortRange::new(8000 + k * 100, 8099 + k * 100));
            let listen = *n
                .listen
                .get_or_insert_with(|| PortRange::new(20000 + k * 100, 20099 + k * 100));
            for r in [handles, listen] {
                if r.is_empty() {
                    return Err((n.line, format!("empty port range {r}")));
                }
                if let Some((no, other)) = ranges.iter().find(|(_, o)| o.overlaps(&r)) {
                    return Err((n.line, format!("port range {r} overlaps {other} (line {no})")));
                }
                ranges.push((n.line, r));
            }
        }
        Ok(())
    }

    pub fn node(&self, name: &str) -> Option<&NodeDecl> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn content(&self, server: &str, path: &str) -> Option<&ContentDecl> {
        self.contents.iter().find(|c| c.server == server && c.path == path)
    }
}
