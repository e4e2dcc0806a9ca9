//! Aggregation of responsive addresses into /24 occupancy bitmaps and
//! classification of highly responsive prefixes (HRPs).
//!
//! A /24 is an HRP for one (protocol, port) when at least
//! `ceil(fraction * 256)` of its 256 addresses responded. The denominator is
//! always 256; network and broadcast addresses are counted like any other.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bgp::RoutePrefix;
use crate::error::{Error, Result};
use crate::fixed;
use crate::ingest::{ScanMeta, Service};

/// Number of addresses in a /24.
pub const PREFIX_SIZE: u16 = 256;

/// A /24 network, stored as the upper 24 bits of its member addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slash24(u32);

impl Slash24 {
    pub fn of(addr: Ipv4Addr) -> Self {
        Slash24(u32::from(addr) >> 8)
    }

    /// Builds a prefix from its 24-bit network number. Higher bits are dropped.
    pub fn from_index(index: u32) -> Self {
        Slash24(index & 0x00ff_ffff)
    }

    /// The 24-bit network number.
    pub fn index(self) -> u32 {
        self.0
    }

    pub fn network(self) -> Ipv4Addr {
        Ipv4Addr::from(self.0 << 8)
    }

    pub fn address(self, host: u8) -> Ipv4Addr {
        Ipv4Addr::from((self.0 << 8) | u32::from(host))
    }

    pub fn contains(self, addr: Ipv4Addr) -> bool {
        Slash24::of(addr) == self
    }
}

pub fn slash24_of(addr: Ipv4Addr) -> Slash24 {
    Slash24::of(addr)
}

impl fmt::Display for Slash24 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/24", self.network())
    }
}

impl FromStr for Slash24 {
    type Err = Error;

    /// Accepts `a.b.c.0/24` or a bare `a.b.c.0`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let addr = match s.split_once('/') {
            Some((addr, "24")) => addr,
            Some((_, len)) => return Err(Error::usage(format!("expected a /24, got /{len}"))),
            None => s,
        };
        let addr: Ipv4Addr = addr
            .parse()
            .map_err(|_| Error::usage(format!("invalid prefix {s:?}")))?;
        if u32::from(addr) & 0xff != 0 {
            return Err(Error::usage(format!("prefix {s:?} has host bits set")));
        }
        Ok(Slash24::of(addr))
    }
}

impl Serialize for Slash24 {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Slash24 {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// 256-bit bitmap of responsive host bytes within one /24.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Occupancy([u64; 4]);

impl Occupancy {
    pub const FULL: Occupancy = Occupancy([u64::MAX; 4]);

    pub fn insert(&mut self, host: u8) -> bool {
        let (word, bit) = (usize::from(host >> 6), host & 63);
        let was_set = self.0[word] & (1 << bit) != 0;
        self.0[word] |= 1 << bit;
        !was_set
    }

    pub fn contains(&self, host: u8) -> bool {
        self.0[usize::from(host >> 6)] & (1 << (host & 63)) != 0
    }

    pub fn count(&self) -> u16 {
        self.0.iter().map(|w| w.count_ones() as u16).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    pub fn union(&self, other: &Occupancy) -> Occupancy {
        let mut out = *self;
        out.union_with(other);
        out
    }

    pub fn union_with(&mut self, other: &Occupancy) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a |= b;
        }
    }

    /// Set host bytes in ascending order.
    pub fn hosts(&self) -> impl Iterator<Item = u8> + '_ {
        (0..=255u8).filter(move |&h| self.contains(h))
    }
}

impl FromIterator<u8> for Occupancy {
    fn from_iter<I: IntoIterator<Item = u8>>(iter: I) -> Self {
        let mut occ = Occupancy::default();
        for host in iter {
            occ.insert(host);
        }
        occ
    }
}

/// Responsive /24s of one scan. Iteration is in ascending prefix order and
/// empty prefixes are never stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefixTable {
    meta: ScanMeta,
    entries: BTreeMap<Slash24, Occupancy>,
}

impl PrefixTable {
    pub fn new(meta: ScanMeta) -> Self {
        PrefixTable {
            meta,
            entries: BTreeMap::new(),
        }
    }

    pub fn meta(&self) -> &ScanMeta {
        &self.meta
    }

    pub fn service(&self) -> Service {
        self.meta.service
    }

    pub fn insert(&mut self, addr: Ipv4Addr) {
        let host = u32::from(addr) as u8;
        self.entries
            .entry(Slash24::of(addr))
            .or_default()
            .insert(host);
    }

    pub fn get(&self, prefix: Slash24) -> Option<&Occupancy> {
        self.entries.get(&prefix)
    }

    /// Whether `addr` responded in this scan.
    pub fn is_responsive(&self, addr: Ipv4Addr) -> bool {
        self.get(Slash24::of(addr))
            .is_some_and(|occ| occ.contains(u32::from(addr) as u8))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Slash24, &Occupancy)> + '_ {
        self.entries.iter().map(|(p, o)| (*p, o))
    }

    /// Responsive addresses of one prefix, ascending.
    pub fn addresses(&self, prefix: Slash24) -> Vec<Ipv4Addr> {
        self.get(prefix)
            .map(|occ| occ.hosts().map(|h| prefix.address(h)).collect())
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of distinct responsive addresses.
    pub fn total_addresses(&self) -> u64 {
        self.entries.values().map(|o| u64::from(o.count())).sum()
    }

    /// ORs `other` into `self`. Both tables must carry the same scan metadata.
    pub fn merge_from(&mut self, other: &PrefixTable) -> Result<()> {
        if self.meta != other.meta {
            return Err(Error::usage(format!(
                "cannot merge tables of different scans ({} {} vs {} {})",
                self.meta.scan_id, self.meta.service, other.meta.scan_id, other.meta.service
            )));
        }
        for (prefix, occ) in &other.entries {
            self.entries.entry(*prefix).or_default().union_with(occ);
        }
        Ok(())
    }
}

impl Extend<Ipv4Addr> for PrefixTable {
    fn extend<I: IntoIterator<Item = Ipv4Addr>>(&mut self, iter: I) {
        for addr in iter {
            self.insert(addr);
        }
    }
}

/// Builds the occupancy table of one scan in a single pass.
pub fn aggregate<I: IntoIterator<Item = Ipv4Addr>>(addrs: I, meta: ScanMeta) -> PrefixTable {
    let mut table = PrefixTable::new(meta);
    table.extend(addrs);
    table
}

/// Per-prefix bitwise OR of two shards of the same scan.
pub fn merge(mut a: PrefixTable, b: &PrefixTable) -> Result<PrefixTable> {
    a.merge_from(b)?;
    Ok(a)
}

/// Responsiveness threshold for HRP classification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HrpThreshold {
    #[serde(serialize_with = "fixed::ratio")]
    fraction: f64,
    min_count: u16,
}

impl HrpThreshold {
    pub const DEFAULT_FRACTION: f64 = 0.90;
    pub const STRICT_FRACTION: f64 = 0.95;

    pub fn new(fraction: f64) -> Result<Self> {
        if !(fraction.is_finite() && fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::usage(format!(
                "threshold fraction must lie in (0, 1], got {fraction}"
            )));
        }
        let min_count = (fraction * f64::from(PREFIX_SIZE)).ceil() as u16;
        Ok(HrpThreshold {
            fraction,
            min_count: min_count.clamp(1, PREFIX_SIZE),
        })
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    /// Smallest responsive count that qualifies as an HRP.
    pub fn min_count(&self) -> u16 {
        self.min_count
    }

    pub fn is_hrp(&self, responsive_count: u16) -> bool {
        responsive_count >= self.min_count
    }
}

impl Default for HrpThreshold {
    fn default() -> Self {
        HrpThreshold::new(Self::DEFAULT_FRACTION).expect("default threshold is valid")
    }
}

/// Classification record of one /24 for one service.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrefixStat {
    pub prefix: Slash24,
    pub service: Service,
    pub responsive_count: u16,
    pub is_hrp: bool,
    pub threshold: HrpThreshold,
    pub origin_asn: Option<u32>,
    pub covering_route: Option<RoutePrefix>,
}

impl PrefixStat {
    pub fn new(
        prefix: Slash24,
        service: Service,
        responsive_count: u16,
        threshold: HrpThreshold,
    ) -> Self {
        PrefixStat {
            prefix,
            service,
            responsive_count,
            is_hrp: threshold.is_hrp(responsive_count),
            threshold,
            origin_asn: None,
            covering_route: None,
        }
    }

    pub fn reclassify(&self, threshold: HrpThreshold) -> PrefixStat {
        PrefixStat {
            is_hrp: threshold.is_hrp(self.responsive_count),
            threshold,
            ..self.clone()
        }
    }
}

pub fn classify(table: &PrefixTable, threshold: HrpThreshold) -> Vec<PrefixStat> {
    table
        .iter()
        .map(|(prefix, occ)| PrefixStat::new(prefix, table.service(), occ.count(), threshold))
        .collect()
}

/// HRP prefixes among `stats`.
pub fn hrp_set(stats: &[PrefixStat]) -> BTreeSet<Slash24> {
    stats
        .iter()
        .filter(|s| s.is_hrp)
        .map(|s| s.prefix)
        .collect()
}

/// Share of responsive addresses that sit inside HRPs; 0 when nothing responded.
pub fn hrp_address_share(stats: &[PrefixStat]) -> f64 {
    let (hrp, total) = stats.iter().fold((0u64, 0u64), |(hrp, total), s| {
        let c = u64::from(s.responsive_count);
        (if s.is_hrp { hrp + c } else { hrp }, total + c)
    });
    if total == 0 {
        0.0
    } else {
        hrp as f64 / total as f64
    }
}

/// Classified prefixes of one scan together with the scan's identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifiedScan {
    pub meta: ScanMeta,
    pub stats: Vec<PrefixStat>,
}

impl ClassifiedScan {
    /// Fails if any stat belongs to a different service than `meta`.
    pub fn new(meta: ScanMeta, stats: Vec<PrefixStat>) -> Result<Self> {
        for stat in &stats {
            meta.service.ensure_same(&stat.service)?;
        }
        Ok(ClassifiedScan { meta, stats })
    }

    pub fn from_table(table: &PrefixTable, threshold: HrpThreshold) -> Self {
        ClassifiedScan {
            meta: table.meta().clone(),
            stats: classify(table, threshold),
        }
    }

    pub fn service(&self) -> Service {
        self.meta.service
    }

    pub fn hrps(&self) -> BTreeSet<Slash24> {
        hrp_set(&self.stats)
    }
}

/// Distribution of responsive addresses per /24.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResponsivenessHistogram {
    total_prefixes: u64,
    total_addresses: u64,
    /// Indexed by responsive count 0..=256; index 0 is always 0.
    prefix_count: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HistogramBucket {
    pub count: u16,
    pub prefixes: u64,
    pub addresses: u64,
    #[serde(serialize_with = "fixed::ratio")]
    pub cumulative_prefix_share: f64,
    #[serde(serialize_with = "fixed::ratio")]
    pub cumulative_address_share: f64,
}

impl ResponsivenessHistogram {
    pub fn total_prefixes(&self) -> u64 {
        self.total_prefixes
    }

    pub fn total_addresses(&self) -> u64 {
        self.total_addresses
    }

    pub fn prefix_count(&self, count: u16) -> u64 {
        self.prefix_count
            .get(usize::from(count))
            .copied()
            .unwrap_or(0)
    }

    pub fn address_count(&self, count: u16) -> u64 {
        self.prefix_count(count) * u64::from(count)
    }

    /// Buckets 1..=256 with cumulative shares; shares are 0 for empty input.
    pub fn buckets(&self) -> Vec<HistogramBucket> {
        let mut cum_prefixes = 0u64;
        let mut cum_addresses = 0u64;
        (1..=PREFIX_SIZE)
            .map(|count| {
                let prefixes = self.prefix_count(count);
                let addresses = self.address_count(count);
                cum_prefixes += prefixes;
                cum_addresses += addresses;
                HistogramBucket {
                    count,
                    prefixes,
                    addresses,
                    cumulative_prefix_share: ratio(cum_prefixes, self.total_prefixes),
                    cumulative_address_share: ratio(cum_addresses, self.total_addresses),
                }
            })
            .collect()
    }

    /// (prefixes, addresses) in buckets with count >= `min_count`.
    pub fn mass_at_or_above(&self, min_count: u16) -> (u64, u64) {
        (min_count.max(1)..=PREFIX_SIZE).fold((0, 0), |(p, a), c| {
            (p + self.prefix_count(c), a + self.address_count(c))
        })
    }

    pub fn address_share_at_or_above(&self, min_count: u16) -> f64 {
        ratio(self.mass_at_or_above(min_count).1, self.total_addresses)
    }

    pub fn prefix_share_at_or_above(&self, min_count: u16) -> f64 {
        ratio(self.mass_at_or_above(min_count).0, self.total_prefixes)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn responsiveness_histogram(stats: &[PrefixStat]) -> ResponsivenessHistogram {
    let mut prefix_count = vec![0u64; usize::from(PREFIX_SIZE) + 1];
    let mut total_prefixes = 0;
    let mut total_addresses = 0;
    for stat in stats.iter().filter(|s| s.responsive_count > 0) {
        let count = stat.responsive_count.min(PREFIX_SIZE);
        prefix_count[usize::from(count)] += 1;
        total_prefixes += 1;
        total_addresses += u64::from(count);
    }
    ResponsivenessHistogram {
        total_prefixes,
        total_addresses,
        prefix_count,
    }
}
