//! Analyses that compare several classified scans with each other.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixed;
use crate::ingest::Service;
use crate::prefix::{hrp_address_share, ClassifiedScan, HrpThreshold, Slash24};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PortProfile {
    pub prefix: Slash24,
    pub ports_responsive: u32,
    pub ports_hrp: u32,
}

/// Per-prefix service counts plus histograms over them.
///
/// `responsive_histogram[j]` is the number of prefixes responsive on exactly
/// `j` of the supplied services; `hrp_histogram[j]` likewise for HRP status.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PortProfileReport {
    pub services: Vec<Service>,
    pub profiles: Vec<PortProfile>,
    pub responsive_histogram: Vec<u64>,
    pub hrp_histogram: Vec<u64>,
}

impl PortProfileReport {
    /// Prefixes that are an HRP on at least one service.
    pub fn distinct_hrps(&self) -> u64 {
        self.hrp_histogram.iter().skip(1).sum()
    }

    /// Share of distinct HRPs that are HRPs on exactly `ports` services.
    pub fn hrp_bucket_share(&self, ports: usize) -> f64 {
        let total = self.distinct_hrps();
        match (ports, self.hrp_histogram.get(ports)) {
            (1.., Some(&n)) if total > 0 => n as f64 / total as f64,
            _ => 0.0,
        }
    }
}

/// Builds the service matrix. The supplied services form the universe, so
/// "all ports" means all of `scans`.
pub fn port_profile(scans: &[ClassifiedScan]) -> Result<PortProfileReport> {
    if scans.is_empty() {
        return Err(Error::usage(
            "port profile needs at least one classified scan",
        ));
    }
    let mut services = Vec::with_capacity(scans.len());
    for scan in scans {
        if services.contains(&scan.service()) {
            return Err(Error::usage(format!(
                "service {} supplied twice",
                scan.service()
            )));
        }
        services.push(scan.service());
    }

    let mut per_prefix: BTreeMap<Slash24, (u32, u32)> = BTreeMap::new();
    for scan in scans {
        for stat in scan.stats.iter().filter(|s| s.responsive_count > 0) {
            let entry = per_prefix.entry(stat.prefix).or_default();
            entry.0 += 1;
            entry.1 += u32::from(stat.is_hrp);
        }
    }

    let mut responsive_histogram = vec![0; services.len() + 1];
    let mut hrp_histogram = vec![0; services.len() + 1];
    let profiles = per_prefix
        .into_iter()
        .map(|(prefix, (responsive, hrp))| {
            responsive_histogram[responsive as usize] += 1;
            hrp_histogram[hrp as usize] += 1;
            PortProfile {
                prefix,
                ports_responsive: responsive,
                ports_hrp: hrp,
            }
        })
        .collect();

    Ok(PortProfileReport {
        services,
        profiles,
        responsive_histogram,
        hrp_histogram,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityPoint {
    pub scan_id: String,
    pub timestamp: DateTime<Utc>,
    #[serde(serialize_with = "fixed::ratio")]
    pub hrp_address_share_90: f64,
    #[serde(serialize_with = "fixed::ratio")]
    pub hrp_address_share_95: f64,
    /// HRPs at the 90% threshold.
    pub hrp_count: u64,
    /// HRPs at the 95% threshold.
    pub hrp_count_95: u64,
}

fn ensure_single_service(scans: &[ClassifiedScan]) -> Result<()> {
    if let Some(first) = scans.first() {
        for scan in &scans[1..] {
            first.service().ensure_same(&scan.service())?;
        }
    }
    Ok(())
}

/// HRP address share per scan, recomputed from the raw counts at the 90% and
/// 95% thresholds. Scans must share one service and be in non-decreasing
/// timestamp order.
pub fn stability_series(scans: &[ClassifiedScan]) -> Result<Vec<StabilityPoint>> {
    ensure_single_service(scans)?;
    if let Some(w) = scans
        .windows(2)
        .find(|w| w[1].meta.timestamp < w[0].meta.timestamp)
    {
        return Err(Error::usage(format!(
            "scans out of order: {} ({}) precedes {} ({})",
            w[0].meta.scan_id, w[0].meta.timestamp, w[1].meta.scan_id, w[1].meta.timestamp
        )));
    }

    let t90 = HrpThreshold::new(HrpThreshold::DEFAULT_FRACTION)?;
    let t95 = HrpThreshold::new(HrpThreshold::STRICT_FRACTION)?;
    Ok(scans
        .iter()
        .map(|scan| {
            let at90: Vec<_> = scan.stats.iter().map(|s| s.reclassify(t90)).collect();
            let at95: Vec<_> = scan.stats.iter().map(|s| s.reclassify(t95)).collect();
            StabilityPoint {
                scan_id: scan.meta.scan_id.clone(),
                timestamp: scan.meta.timestamp,
                hrp_address_share_90: hrp_address_share(&at90),
                hrp_address_share_95: hrp_address_share(&at95),
                hrp_count: at90.iter().filter(|s| s.is_hrp).count() as u64,
                hrp_count_95: at95.iter().filter(|s| s.is_hrp).count() as u64,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PrefixPersistence {
    pub prefix: Slash24,
    /// Scans in which the prefix was classified as an HRP.
    pub scans_classified: u32,
    /// Scans in which the prefix had at least one responsive address.
    pub scans_visible: u32,
}

/// How long prefixes keep their HRP classification across a scan series.
///
/// Whether "consistently visible" means every scan or some fraction of them
/// is left open: both `half_period_count` (classification only) and
/// `half_period_visible_all_count` (additionally visible in every scan) are
/// reported.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PersistenceSummary {
    pub total_scans: u32,
    /// `ceil(total_scans / 2)`.
    pub half_period_scans: u32,
    pub missing_n: u32,
    pub distinct_hrps: u64,
    pub half_period_count: u64,
    pub half_period_visible_all_count: u64,
    pub full_period_count: u64,
    pub missing_at_most_n_count: u64,
    #[serde(serialize_with = "fixed::ratio")]
    pub missing_at_most_n_share: f64,
    pub prefixes: Vec<PrefixPersistence>,
}

pub const DEFAULT_MISSING_N: u32 = 5;

/// Persistence of HRP membership; each scan's own `is_hrp` flags decide
/// membership. Result does not depend on the order of `scans`.
pub fn persistence(scans: &[ClassifiedScan], missing_n: u32) -> Result<PersistenceSummary> {
    if scans.len() < 2 {
        return Err(Error::usage("persistence needs at least two scans"));
    }
    ensure_single_service(scans)?;
    let total_scans = scans.len() as u32;

    let mut counts: BTreeMap<Slash24, (u32, u32)> = BTreeMap::new();
    for scan in scans {
        // a prefix listed twice in one scan still counts once
        let mut seen: BTreeMap<Slash24, bool> = BTreeMap::new();
        for stat in scan.stats.iter().filter(|s| s.responsive_count > 0) {
            *seen.entry(stat.prefix).or_default() |= stat.is_hrp;
        }
        for (prefix, hrp) in seen {
            let entry = counts.entry(prefix).or_default();
            entry.0 += u32::from(hrp);
            entry.1 += 1;
        }
    }

    let half = total_scans.div_ceil(2);
    let prefixes: Vec<_> = counts
        .into_iter()
        .filter(|(_, (classified, _))| *classified > 0)
        .map(
            |(prefix, (scans_classified, scans_visible))| PrefixPersistence {
                prefix,
                scans_classified,
                scans_visible,
            },
        )
        .collect();

    let distinct = prefixes.len() as u64;
    let count = |pred: &dyn Fn(&PrefixPersistence) -> bool| {
        prefixes.iter().filter(|p| pred(p)).count() as u64
    };
    let half_period_count = count(&|p| p.scans_classified >= half);
    let half_period_visible_all_count =
        count(&|p| p.scans_classified >= half && p.scans_visible == total_scans);
    let full_period_count = count(&|p| p.scans_classified == total_scans);
    let missing_at_most_n_count = count(&|p| total_scans - p.scans_classified <= missing_n);

    Ok(PersistenceSummary {
        total_scans,
        half_period_scans: half,
        missing_n,
        distinct_hrps: distinct,
        half_period_count,
        half_period_visible_all_count,
        full_period_count,
        missing_at_most_n_count,
        missing_at_most_n_share: if distinct == 0 {
            0.0
        } else {
            missing_at_most_n_count as f64 / distinct as f64
        },
        prefixes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VantageDiff {
    pub only_a: BTreeSet<Slash24>,
    pub only_b: BTreeSet<Slash24>,
    pub both: BTreeSet<Slash24>,
    /// `|only_a ∪ only_b| / |a ∪ b|`; 0 when both sets are empty.
    #[serde(serialize_with = "fixed::ratio")]
    pub divergence: f64,
}

pub fn vantage_diff(a: &BTreeSet<Slash24>, b: &BTreeSet<Slash24>) -> VantageDiff {
    let only_a: BTreeSet<_> = a.difference(b).copied().collect();
    let only_b: BTreeSet<_> = b.difference(a).copied().collect();
    let both: BTreeSet<_> = a.intersection(b).copied().collect();
    let union = only_a.len() + only_b.len() + both.len();
    let divergence = if union == 0 {
        0.0
    } else {
        (only_a.len() + only_b.len()) as f64 / union as f64
    };
    VantageDiff {
        only_a,
        only_b,
        both,
        divergence,
    }
}

/// [`vantage_diff`] over the HRP sets of two scans of the same service.
pub fn vantage_diff_scans(a: &ClassifiedScan, b: &ClassifiedScan) -> Result<VantageDiff> {
    a.service().ensure_same(&b.service())?;
    Ok(vantage_diff(&a.hrps(), &b.hrps()))
}
