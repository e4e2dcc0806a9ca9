//! Routing snapshots with longest-prefix match, used for origin-AS enrichment.
//!
//! Snapshots are plain text, one `prefix/length,asn` per line with `#`
//! comments. Lookups use one hash map per prefix length, probed from /32
//! down to /0 over the lengths actually present.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed;
use crate::ingest::{ErrorPolicy, Service};
use crate::prefix::{PrefixStat, Slash24};

/// A normalized IPv4 CIDR block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoutePrefix {
    network: u32,
    length: u8,
}

fn mask(length: u8) -> u32 {
    match length {
        0 => 0,
        l => u32::MAX << (32 - u32::from(l)),
    }
}

impl RoutePrefix {
    /// Fails if `length > 32` or host bits below the mask are set.
    pub fn new(network: Ipv4Addr, length: u8) -> Result<Self> {
        let (prefix, normalized) = Self::normalized(network, length)?;
        if normalized {
            return Err(Error::usage(format!(
                "{network}/{length} has host bits set"
            )));
        }
        Ok(prefix)
    }

    /// Clears host bits; the flag reports whether any were set.
    pub fn normalized(network: Ipv4Addr, length: u8) -> Result<(Self, bool)> {
        if length > 32 {
            return Err(Error::usage(format!("prefix length {length} exceeds 32")));
        }
        let raw = u32::from(network);
        let net = raw & mask(length);
        Ok((
            RoutePrefix {
                network: net,
                length,
            },
            net != raw,
        ))
    }

    pub fn network(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.network)
    }

    pub fn length(&self) -> u8 {
        self.length
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        u32::from(addr) & mask(self.length) == self.network
    }
}

impl fmt::Display for RoutePrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network(), self.length)
    }
}

fn split_cidr(s: &str) -> Result<(Ipv4Addr, u8)> {
    let (addr, len) = s
        .trim()
        .split_once('/')
        .ok_or_else(|| Error::usage(format!("{s:?} is not in prefix/length form")))?;
    let addr = addr
        .parse()
        .map_err(|_| Error::usage(format!("invalid network address {addr:?}")))?;
    let len = len
        .parse()
        .map_err(|_| Error::usage(format!("invalid prefix length {len:?}")))?;
    Ok((addr, len))
}

impl FromStr for RoutePrefix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (addr, len) = split_cidr(s)?;
        RoutePrefix::new(addr, len)
    }
}

impl Serialize for RoutePrefix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RoutePrefix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RouteEntry {
    pub prefix: RoutePrefix,
    pub origin_asn: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    /// Same prefix and origin already present.
    Duplicate,
    /// Prefix already present with a different origin; the existing entry is kept.
    Conflict {
        existing_asn: u32,
    },
}

/// Immutable-after-load longest-prefix-match table.
#[derive(Clone, Debug)]
pub struct RoutingTable {
    by_length: Vec<HashMap<u32, u32>>,
    lengths_present: u64,
    /// /24 networks that have more-specific entries inside them.
    split_24s: HashSet<u32>,
    len: usize,
}

impl Default for RoutingTable {
    fn default() -> Self {
        RoutingTable {
            by_length: vec![HashMap::new(); 33],
            lengths_present: 0,
            split_24s: HashSet::new(),
            len: 0,
        }
    }
}

impl RoutingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: RouteEntry) -> InsertOutcome {
        let RouteEntry { prefix, origin_asn } = entry;
        let bucket = &mut self.by_length[usize::from(prefix.length)];
        if let Some(&existing_asn) = bucket.get(&prefix.network) {
            return if existing_asn == origin_asn {
                InsertOutcome::Duplicate
            } else {
                InsertOutcome::Conflict { existing_asn }
            };
        }
        bucket.insert(prefix.network, origin_asn);
        self.lengths_present |= 1 << prefix.length;
        if prefix.length > 24 {
            self.split_24s.insert(prefix.network >> 8);
        }
        self.len += 1;
        InsertOutcome::Inserted
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Covering entry with the longest prefix length.
    pub fn lookup(&self, addr: Ipv4Addr) -> Option<RouteEntry> {
        let raw = u32::from(addr);
        let mut lengths = self.lengths_present;
        while lengths != 0 {
            let length = 63 - lengths.leading_zeros() as u8;
            lengths &= !(1 << length);
            let network = raw & mask(length);
            if let Some(&origin_asn) = self.by_length[usize::from(length)].get(&network) {
                return Some(RouteEntry {
                    prefix: RoutePrefix { network, length },
                    origin_asn,
                });
            }
        }
        None
    }

    /// Whether entries longer than /24 split `prefix`.
    pub fn is_split(&self, prefix: Slash24) -> bool {
        self.split_24s.contains(&prefix.index())
    }

    /// All entries in (length, network) order.
    pub fn entries(&self) -> Vec<RouteEntry> {
        let mut out: Vec<_> = self
            .by_length
            .iter()
            .enumerate()
            .flat_map(|(length, bucket)| {
                bucket
                    .iter()
                    .map(move |(&network, &origin_asn)| RouteEntry {
                        prefix: RoutePrefix {
                            network,
                            length: length as u8,
                        },
                        origin_asn,
                    })
            })
            .collect();
        out.sort_by_key(|e| (e.prefix.length, e.prefix.network));
        out
    }
}

impl FromIterator<RouteEntry> for RoutingTable {
    fn from_iter<I: IntoIterator<Item = RouteEntry>>(iter: I) -> Self {
        let mut table = RoutingTable::new();
        for entry in iter {
            table.insert(entry);
        }
        table
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RouteLoadStats {
    pub lines_read: u64,
    pub entries: u64,
    pub comment_lines: u64,
    pub invalid_lines: u64,
    /// Entries whose host bits were cleared (lenient only).
    pub normalized: u64,
    pub duplicates: u64,
    /// Conflicting origins for one prefix; the first origin is kept (lenient only).
    pub conflicts: u64,
}

fn parse_route_line(line: &str) -> Result<(Ipv4Addr, u8, u32)> {
    let (cidr, asn) = line
        .split_once(',')
        .ok_or_else(|| Error::usage("expected prefix/length,asn"))?;
    let (addr, len) = split_cidr(cidr)?;
    let asn = asn.trim();
    let asn = asn
        .parse()
        .map_err(|_| Error::usage(format!("ASN {asn:?} is not numeric")))?;
    Ok((addr, len, asn))
}

/// Reads a `prefix/length,asn` snapshot.
///
/// Strict mode rejects malformed lines, host bits below the mask and
/// conflicting origins. Lenient mode skips malformed lines, normalizes host
/// bits and keeps the first origin of a conflicting prefix, counting each.
pub fn load_route_table<R: BufRead>(
    source: R,
    policy: ErrorPolicy,
) -> Result<(RoutingTable, RouteLoadStats)> {
    let mut table = RoutingTable::new();
    let mut stats = RouteLoadStats::default();
    let strict = policy == ErrorPolicy::Strict;

    for line in source.lines() {
        let line = line?;
        stats.lines_read += 1;
        let line_no = stats.lines_read;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            stats.comment_lines += 1;
            continue;
        }
        let parsed = parse_route_line(text).and_then(|(addr, len, asn)| {
            RoutePrefix::normalized(addr, len).map(|(prefix, fixed)| (prefix, fixed, asn))
        });
        let (prefix, had_host_bits, origin_asn) = match parsed {
            Ok(p) => p,
            Err(e) if strict => return Err(Error::format(line_no, e.to_string())),
            Err(_) => {
                stats.invalid_lines += 1;
                continue;
            }
        };
        if had_host_bits {
            if strict {
                return Err(Error::format(
                    line_no,
                    format!("{text:?} has host bits set"),
                ));
            }
            stats.normalized += 1;
        }
        match table.insert(RouteEntry { prefix, origin_asn }) {
            InsertOutcome::Inserted => stats.entries += 1,
            InsertOutcome::Duplicate => stats.duplicates += 1,
            InsertOutcome::Conflict { existing_asn } => {
                if strict {
                    return Err(Error::format(
                        line_no,
                        format!("{prefix} announced by AS{existing_asn} and AS{origin_asn}"),
                    ));
                }
                stats.conflicts += 1;
            }
        }
    }
    Ok((table, stats))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Enriched {
    pub stats: Vec<PrefixStat>,
    pub matched: u64,
    pub unmatched: u64,
    /// Prefixes split by more-specific routes; the network address decided.
    pub ambiguous: u64,
}

/// Attaches origin AS and covering route to each stat, keyed by the /24's
/// network address.
pub fn enrich(stats: &[PrefixStat], table: &RoutingTable) -> Enriched {
    let mut out = Enriched {
        stats: Vec::with_capacity(stats.len()),
        ..Default::default()
    };
    for stat in stats {
        let mut stat = stat.clone();
        match table.lookup(stat.prefix.network()) {
            Some(entry) => {
                stat.origin_asn = Some(entry.origin_asn);
                stat.covering_route = Some(entry.prefix);
                out.matched += 1;
            }
            None => {
                stat.origin_asn = None;
                stat.covering_route = None;
                out.unmatched += 1;
            }
        }
        if table.is_split(stat.prefix) {
            out.ambiguous += 1;
        }
        out.stats.push(stat);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsSummary {
    pub asn: u32,
    pub visible_24s: u64,
    pub hrp_count: u64,
    #[serde(serialize_with = "fixed::ratio")]
    pub hrp_share: f64,
    pub ports_visible: u64,
    pub ports_with_hrps: u64,
}

/// Per-origin summary over enriched stats of any number of services.
///
/// A /24 counts once per AS no matter how many services it appears on; it
/// counts as an HRP if it is one on at least one service. Sorted by HRP count
/// descending, then ASN.
pub fn as_summary(stats: &[PrefixStat]) -> Vec<AsSummary> {
    #[derive(Default)]
    struct Acc {
        visible: BTreeSet<Slash24>,
        hrps: BTreeSet<Slash24>,
        services: BTreeSet<Service>,
        hrp_services: BTreeSet<Service>,
    }

    let mut per_as: BTreeMap<u32, Acc> = BTreeMap::new();
    for stat in stats.iter().filter(|s| s.responsive_count > 0) {
        let Some(asn) = stat.origin_asn else { continue };
        let acc = per_as.entry(asn).or_default();
        acc.visible.insert(stat.prefix);
        acc.services.insert(stat.service);
        if stat.is_hrp {
            acc.hrps.insert(stat.prefix);
            acc.hrp_services.insert(stat.service);
        }
    }

    let mut out: Vec<AsSummary> = per_as
        .into_iter()
        .map(|(asn, acc)| {
            let visible = acc.visible.len() as u64;
            let hrps = acc.hrps.len() as u64;
            AsSummary {
                asn,
                visible_24s: visible,
                hrp_count: hrps,
                hrp_share: if visible == 0 {
                    0.0
                } else {
                    hrps as f64 / visible as f64
                },
                ports_visible: acc.services.len() as u64,
                ports_with_hrps: acc.hrp_services.len() as u64,
            }
        })
        .collect();
    out.sort_by(|a, b| b.hrp_count.cmp(&a.hrp_count).then(a.asn.cmp(&b.asn)));
    out
}
