//! Streaming readers for port-scan output.
//!
//! Two line formats are understood: `plain` (one dotted quad per line) and
//! `csv_saddr` (a header row followed by comma-separated rows, of which only
//! the `saddr` column is read). Lines starting with `#` are comments in both.
//! Only IPv4 is accepted; anything else is an invalid line.

use std::fmt;
use std::io::BufRead;
use std::net::Ipv4Addr;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Udp,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tcp" => Ok(Protocol::Tcp),
            "udp" => Ok(Protocol::Udp),
            other => Err(Error::usage(format!("unknown protocol {other:?}"))),
        }
    }
}

/// A (protocol, port) pair. Every scan and every application-layer
/// result is specific to one of these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Service {
    pub protocol: Protocol,
    pub port: u16,
}

impl Service {
    pub fn new(protocol: Protocol, port: u16) -> Self {
        Service { protocol, port }
    }

    pub fn tcp(port: u16) -> Self {
        Service::new(Protocol::Tcp, port)
    }

    /// Returns `ServiceMismatch` unless `other` equals `self`.
    pub fn ensure_same(&self, other: &Service) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::ServiceMismatch {
                expected: *self,
                found: *other,
            })
        }
    }
}

impl fmt::Display for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.protocol, self.port)
    }
}

/// Identity of one scan run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanMeta {
    pub service: Service,
    pub scan_id: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vantage: Option<String>,
}

impl ScanMeta {
    pub fn new(
        service: Service,
        scan_id: impl Into<String>,
        timestamp: DateTime<Utc>,
    ) -> Result<Self> {
        let scan_id = scan_id.into();
        if scan_id.trim().is_empty() {
            return Err(Error::usage("scan id must not be empty"));
        }
        Ok(ScanMeta {
            service,
            scan_id,
            timestamp,
            vantage: None,
        })
    }

    pub fn with_vantage(mut self, vantage: impl Into<String>) -> Self {
        self.vantage = Some(vantage.into());
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressFormat {
    #[default]
    Plain,
    CsvSaddr,
}

impl FromStr for AddressFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(AddressFormat::Plain),
            "csv_saddr" => Ok(AddressFormat::CsvSaddr),
            other => Err(Error::usage(format!("unknown address format {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    Strict,
    #[default]
    Lenient,
}

impl FromStr for ErrorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(ErrorPolicy::Strict),
            "lenient" => Ok(ErrorPolicy::Lenient),
            other => Err(Error::usage(format!("unknown policy {other:?}"))),
        }
    }
}

/// Where the address lives on a data line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineLayout {
    Plain,
    /// Zero-based index of the `saddr` column.
    Column(usize),
}

impl LineLayout {
    /// Resolves the `saddr` column from a csv header row.
    pub fn from_csv_header(header: &str) -> Option<LineLayout> {
        header
            .split(',')
            .position(|name| name.trim() == "saddr")
            .map(LineLayout::Column)
    }
}

/// Parses one data line. Returns `None` for anything that is not an IPv4
/// dotted quad in the expected position.
pub fn parse_address_line(line: &str, layout: LineLayout) -> Option<Ipv4Addr> {
    let field = match layout {
        LineLayout::Plain => line,
        LineLayout::Column(idx) => line.split(',').nth(idx)?,
    };
    let field = field.trim();
    if field.is_empty() {
        return None;
    }
    field.parse().ok()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines_read: u64,
    pub addresses_emitted: u64,
    pub invalid_lines: u64,
    /// Comment lines plus the csv header row.
    pub comment_lines: u64,
}

impl IngestStats {
    pub fn merge(&mut self, other: &IngestStats) {
        self.lines_read += other.lines_read;
        self.addresses_emitted += other.addresses_emitted;
        self.invalid_lines += other.invalid_lines;
        self.comment_lines += other.comment_lines;
    }
}

/// Single-pass address iterator over a scan source.
///
/// Yields addresses in file order. Under [`ErrorPolicy::Strict`] the first
/// invalid line produces an [`Error::Ingest`] and ends the stream; under
/// [`ErrorPolicy::Lenient`] it is skipped and counted.
pub struct ScanReader<R> {
    source: R,
    format: AddressFormat,
    policy: ErrorPolicy,
    layout: Option<LineLayout>,
    stats: IngestStats,
    buf: Vec<u8>,
    done: bool,
}

pub fn open_scan_source<R: BufRead>(
    source: R,
    format: AddressFormat,
    policy: ErrorPolicy,
) -> ScanReader<R> {
    ScanReader {
        source,
        format,
        policy,
        layout: match format {
            AddressFormat::Plain => Some(LineLayout::Plain),
            AddressFormat::CsvSaddr => None,
        },
        stats: IngestStats::default(),
        buf: Vec::with_capacity(64),
        done: false,
    }
}

impl<R: BufRead> ScanReader<R> {
    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    pub fn format(&self) -> AddressFormat {
        self.format
    }

    fn next_line(&mut self) -> Option<Result<()>> {
        self.buf.clear();
        match self.source.read_until(b'\n', &mut self.buf) {
            Ok(0) => None,
            Ok(_) => {
                self.stats.lines_read += 1;
                Some(Ok(()))
            }
            Err(e) => Some(Err(e.into())),
        }
    }
}

impl<R: BufRead> Iterator for ScanReader<R> {
    type Item = Result<Ipv4Addr>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            match self.next_line()? {
                Ok(()) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
            let line_no = self.stats.lines_read;
            let text = std::str::from_utf8(&self.buf).map(|s| s.trim_end_matches(['\n', '\r']));
            let Ok(text) = text else {
                if let Some(err) = self.reject(line_no, "line is not valid UTF-8") {
                    return Some(Err(err));
                }
                continue;
            };
            if text.trim_start().starts_with('#') {
                self.stats.comment_lines += 1;
                continue;
            }
            let layout = match self.layout {
                Some(layout) => layout,
                None => match LineLayout::from_csv_header(text) {
                    // the header row counts as a comment line
                    Some(layout) => {
                        self.layout = Some(layout);
                        self.stats.comment_lines += 1;
                        continue;
                    }
                    None => {
                        self.done = true;
                        return Some(Err(Error::Ingest {
                            line: line_no,
                            reason: "csv header does not name a saddr column".into(),
                        }));
                    }
                },
            };
            match parse_address_line(text, layout) {
                Some(addr) => {
                    self.stats.addresses_emitted += 1;
                    return Some(Ok(addr));
                }
                None => {
                    let reason = format!("not an IPv4 address: {:?}", truncate(text, 64));
                    if let Some(err) = self.reject(line_no, reason) {
                        return Some(Err(err));
                    }
                }
            }
        }
        None
    }
}

impl<R> ScanReader<R> {
    fn reject(&mut self, line: u64, reason: impl Into<String>) -> Option<Error> {
        self.stats.invalid_lines += 1;
        match self.policy {
            ErrorPolicy::Lenient => None,
            ErrorPolicy::Strict => {
                self.done = true;
                Some(Error::Ingest {
                    line,
                    reason: reason.into(),
                })
            }
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}
