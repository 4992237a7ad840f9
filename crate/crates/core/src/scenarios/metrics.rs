use std::fmt;
use std::io;

use serde::Serialize;

use crate::netmodel::Time;

/// Where a response came from, as seen from the proxy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ServedBy {
    /// No proxy involved: the client talked to the server.
    Direct,
    /// Through the proxy, from the origin, under a handle.
    Origin,
    Cache,
    /// Through the proxy without content handling.
    PassThrough,
}

impl fmt::Display for ServedBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ServedBy::Direct => "direct",
            ServedBy::Origin => "origin",
            ServedBy::Cache => "cache",
            ServedBy::PassThrough => "pass_through",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestMetrics {
    pub index: u32,
    pub label: String,
    pub client: String,
    pub content: String,
    pub hit: bool,
    pub served_by: ServedBy,
    pub handle: Option<u16>,
    pub status: Option<u16>,
    /// Response body bytes received.
    pub bytes: u64,
    pub started: Option<Time>,
    pub finished: Option<Time>,
}

impl RequestMetrics {
    /// Request issue to last byte at the client.
    pub fn delay(&self) -> Option<Time> {
        self.finished?.checked_sub(self.started?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunMetrics {
    pub scenario: String,
    pub requests: Vec<RequestMetrics>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    request_id: &'a str,
    content: &'a str,
    hit: bool,
    bytes: u64,
    delay_units: Option<Time>,
}

impl RunMetrics {
    pub fn request(&self, label: &str) -> Option<&RequestMetrics> {
        self.requests.iter().find(|r| r.label == label)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        if self.requests.is_empty() {
            w.write_record(["scenario", "request_id", "content", "hit", "bytes", "delay_units"])?;
        }
        for r in &self.requests {
            w.serialize(CsvRow {
                scenario: &self.scenario,
                request_id: &r.label,
                content: &r.content,
                hit: r.hit,
                bytes: r.bytes,
                delay_units: r.delay(),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rows() {
        let mut m = RunMetrics {
            scenario: "s".into(),
            requests: Vec::new(),
        };
        assert_eq!(m.to_csv(), "scenario,request_id,content,hit,bytes,delay_units\n");
        m.requests.push(RequestMetrics {
            index: 0,
            label: "r1".into(),
            client: "c1".into(),
            content: "srv/f.bin".into(),
            hit: false,
            served_by: ServedBy::Origin,
            handle: Some(8000),
            status: Some(200),
            bytes: 5000,
            started: Some(10),
            finished: Some(130),
        });
        m.requests.push(RequestMetrics {
            label: "r2".into(),
            hit: true,
            finished: None,
            ..m.requests[0].clone()
        });
        assert_eq!(
            m.to_csv(),
            "scenario,request_id,content,hit,bytes,delay_units\n\
             s,r1,srv/f.bin,false,5000,120\n\
             s,r2,srv/f.bin,true,5000,\n"
        );
    }
}
