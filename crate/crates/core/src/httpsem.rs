//! The HTTP/1.1 subset the content layer needs: request and response header
//! parsing, content naming, Content-Range handling and header stripping.
//!
//! Header tokenizing is delegated to `httparse`; the semantic rules (what
//! counts as content, how names are formed, range validity) live here.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAX_HEADERS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HttpError {
    #[error("header block is not terminated")]
    Incomplete,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("path must start with '/': {0:?}")]
    BadPath(String),
    #[error("content name needs a host")]
    EmptyHost,
    #[error("invalid range: {0}")]
    BadRange(String),
}

/// Globally unique content identifier: the server host followed by the path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentName(String);

impl ContentName {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Last path segment, the name a file would be stored under.
    pub fn filename(&self) -> &str {
        self.0.rsplit('/').next().unwrap_or(&self.0)
    }

    /// Host part of the name.
    pub fn host(&self) -> &str {
        self.0.split('/').next().unwrap_or("")
    }

    /// Path part of the name, including the leading '/'.
    pub fn path(&self) -> &str {
        &self.0[self.host().len()..]
    }
}

impl fmt::Display for ContentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for ContentName {
    type Err = HttpError;

    /// Parses `host/path...`.
    fn from_str(s: &str) -> Result<Self, HttpError> {
        match s.find('/') {
            Some(i) => content_name(&s[..i], &s[i..]),
            None => Err(HttpError::BadPath(s.to_string())),
        }
    }
}

/// `host + path`. Hosts cannot contain '/', so distinct pairs give distinct names.
pub fn content_name(host: &str, path: &str) -> Result<ContentName, HttpError> {
    let host = host.trim();
    if host.is_empty() {
        return Err(HttpError::EmptyHost);
    }
    if host.contains('/') {
        return Err(HttpError::Malformed(format!("host contains '/': {host}")));
    }
    if !path.starts_with('/') {
        return Err(HttpError::BadPath(path.to_string()));
    }
    Ok(ContentName(format!("{host}{path}")))
}

/// Inclusive byte range `first..=last` requested by a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteRange {
    pub first: u64,
    pub last: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub host: String,
    pub raw_header_len: usize,
    pub range: Option<ByteRange>,
    pub content_length: Option<u64>,
}

impl HttpRequest {
    pub fn content_name(&self) -> Result<ContentName, HttpError> {
        content_name(&self.host, &self.path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestVerdict {
    /// A GET: names content and goes through the content layer.
    Content(HttpRequest),
    /// Any other method: relayed untouched.
    PassThrough(HttpRequest),
}

/// Offset just past the first `\r\n\r\n`, if present.
pub fn header_end(bytes: &[u8]) -> Option<usize> {
    bytes.windows(4).position(|w| w == b"\r\n\r\n").map(|i| i + 4)
}

fn header_value<'a>(headers: &'a [httparse::Header<'a>], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|h| h.name.eq_ignore_ascii_case(name))
        .and_then(|h| std::str::from_utf8(h.value).ok())
        .map(str::trim)
}

pub fn parse_request(bytes: &[u8]) -> Result<RequestVerdict, HttpError> {
    let mut headers = [httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut req = httparse::Request::new(&mut headers);
    let raw_header_len = match req.parse(bytes) {
        Ok(httparse::Status::Complete(n)) => n,
        Ok(httparse::Status::Partial) => return Err(HttpError::Incomplete),
        Err(e) => return Err(HttpError::Malformed(e.to_string())),
    };
    let method = req.method.unwrap_or_default().to_string();
    let path = req.path.unwrap_or_default().to_string();
    if !path.starts_with('/') {
        return Err(HttpError::BadPath(path));
    }
    let host = header_value(req.headers, "host").unwrap_or_default().to_string();
    let range = header_value(req.headers, "range").map(parse_range_header).transpose()?;
    let content_length = header_value(req.headers, "content-length")
        .map(|v| {
            v.parse()
                .map_err(|_| HttpError::Malformed(format!("content-length `{v}`")))
        })
        .transpose()?;
    let request = HttpRequest {
        method,
        path,
        host,
        raw_header_len,
        range,
        content_length,
    };
    if request.method == "GET" {
        Ok(RequestVerdict::Content(request))
    } else {
        Ok(RequestVerdict::PassThrough(request))
    }
}

fn parse_range_header(value: &str) -> Result<ByteRange, HttpError> {
    let bad = || HttpError::BadRange(value.to_string());
    let spec = value.strip_prefix("bytes=").ok_or_else(bad)?;
    let (a, b) = spec.split_once('-').ok_or_else(bad)?;
    let first = a.trim().parse().map_err(|_| bad())?;
    let last = b.trim().parse().map_err(|_| bad())?;
    if first > last {
        return Err(bad());
    }
    Ok(ByteRange { first, last })
}

/// `Content-Range: bytes first-last/total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentRange {
    pub first: u64,
    pub last: u64,
    pub total: u64,
}

impl ContentRange {
    pub fn new(first: u64, last: u64, total: u64) -> Result<Self, HttpError> {
        if first > last || last >= total {
            return Err(HttpError::BadRange(format!("{first}-{last}/{total}")));
        }
        Ok(Self { first, last, total })
    }

    pub fn len(&self) -> u64 {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl std::str::FromStr for ContentRange {
    type Err = HttpError;

    fn from_str(value: &str) -> Result<Self, HttpError> {
        let bad = || HttpError::BadRange(value.to_string());
        let spec = value.trim().strip_prefix("bytes ").ok_or_else(bad)?;
        let (span, total) = spec.split_once('/').ok_or_else(bad)?;
        let (a, b) = span.split_once('-').ok_or_else(bad)?;
        let parse = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
        ContentRange::new(parse(a)?, parse(b)?, parse(total)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponseMeta {
    pub status: u16,
    pub content_length: Option<u64>,
    pub content_range: Option<ContentRange>,
    pub header_len: usize,
}

impl HttpResponseMeta {
    /// Error responses bypass the content layer.
    pub fn is_error(&self) -> bool {
        self.status >= 400
    }

    /// Body bytes the headers promise, if they say.
    pub fn expected_body_len(&self) -> Option<u64> {
        self.content_length.or(self.content_range.map(|r| r.len()))
    }

    /// Header plus promised body, i.e. where the message ends on the wire.
    pub fn expected_total_len(&self) -> Option<u64> {
        self.expected_body_len().map(|b| b + self.header_len as u64)
    }
}

pub fn parse_response_meta(bytes: &[u8]) -> Result<HttpResponseMeta, HttpError> {
    let mut headers = [httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut resp = httparse::Response::new(&mut headers);
    let header_len = match resp.parse(bytes) {
        Ok(httparse::Status::Complete(n)) => n,
        Ok(httparse::Status::Partial) => return Err(HttpError::Incomplete),
        Err(e) => return Err(HttpError::Malformed(e.to_string())),
    };
    let status = resp.code.unwrap_or_default();
    if !(100..=599).contains(&status) {
        return Err(HttpError::Malformed(format!("status {status}")));
    }
    let content_length = header_value(resp.headers, "content-length")
        .map(|v| {
            v.parse::<u64>()
                .map_err(|_| HttpError::Malformed(format!("content-length {v:?}")))
        })
        .transpose()?;
    let content_range = header_value(resp.headers, "content-range")
        .map(str::parse::<ContentRange>)
        .transpose()?;
    Ok(HttpResponseMeta {
        status,
        content_length,
        content_range,
        header_len,
    })
}

/// Everything after the first blank line, byte-exact.
pub fn strip_headers(bytes: &[u8]) -> Result<&[u8], HttpError> {
    header_end(bytes).map(|i| &bytes[i..]).ok_or(HttpError::Incomplete)
}

pub fn render_get(host: &str, path: &str, range: Option<ByteRange>) -> Vec<u8> {
    let mut s = format!("GET {path} HTTP/1.1\r\nHost: {host}\r\n");
    if let Some(r) = range {
        s.push_str(&format!("Range: bytes={}-{}\r\n", r.first, r.last));
    }
    s.push_str("Connection: close\r\n\r\n");
    s.into_bytes()
}

/// A request with a body, for methods other than GET.
pub fn render_upload(method: &str, host: &str, path: &str, body: &[u8]) -> Vec<u8> {
    let mut out = format!(
        "{method} {path} HTTP/1.1\r\nHost: {host}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )
    .into_bytes();
    out.extend_from_slice(body);
    out
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        206 => "Partial Content",
        400 => "Bad Request",
        404 => "Not Found",
        416 => "Range Not Satisfiable",
        _ => "Status",
    }
}

pub fn render_response(status: u16, body: &[u8]) -> Vec<u8> {
    let mut out = format!(
        "HTTP/1.1 {status} {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        reason(status),
        body.len()
    )
    .into_bytes();
    out.extend_from_slice(body);
    out
}

/// A 206 carrying `body` as the `range` slice of a `total`-byte file.
pub fn render_partial(range: ContentRange, body: &[u8]) -> Vec<u8> {
    let mut out = format!(
        "HTTP/1.1 206 Partial Content\r\nContent-Range: bytes {}-{}/{}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        range.first,
        range.last,
        range.total,
        body.len()
    )
    .into_bytes();
    out.extend_from_slice(body);
    out
}
