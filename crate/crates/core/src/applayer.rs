//! Joins application-layer scan outcomes with HRP classifications.
//!
//! Denominators come from the preceding port scan: an HRP with 240
//! responsive addresses has a denominator of 240, not 256. Results whose
//! target did not respond in that port scan are counted as anomalies and
//! left out of every rate.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed;
use crate::ingest::Service;
use crate::prefix::{PrefixTable, Slash24, PREFIX_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppStatus {
    Success,
    /// The service answered but the handshake failed (e.g. a TLS alert).
    AppError,
    Unreachable,
}

impl fmt::Display for AppStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AppStatus::Success => "success",
            AppStatus::AppError => "app_error",
            AppStatus::Unreachable => "unreachable",
        })
    }
}

impl FromStr for AppStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "success" => Ok(AppStatus::Success),
            "app_error" => Ok(AppStatus::AppError),
            "unreachable" => Ok(AppStatus::Unreachable),
            other => Err(Error::usage(format!("unknown status {other:?}"))),
        }
    }
}

/// Outcome of one application-layer handshake. The identifier is the
/// deduplication key (certificate hash for TLS, body hash for HTTP).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AppResult {
    pub target: Ipv4Addr,
    pub service: Service,
    pub status: AppStatus,
    pub identifier: Option<String>,
}

impl AppResult {
    pub fn new(
        target: Ipv4Addr,
        service: Service,
        status: AppStatus,
        identifier: Option<String>,
    ) -> Result<Self> {
        let identifier = identifier.filter(|id| !id.is_empty());
        if identifier.is_some() && status != AppStatus::Success {
            return Err(Error::usage(format!(
                "{target}: identifier present on a {status} result"
            )));
        }
        Ok(AppResult {
            target,
            service,
            status,
            identifier,
        })
    }

    pub fn success(target: Ipv4Addr, service: Service, identifier: Option<&str>) -> Self {
        AppResult {
            target,
            service,
            status: AppStatus::Success,
            identifier: identifier.filter(|id| !id.is_empty()).map(str::to_owned),
        }
    }

    pub fn failure(target: Ipv4Addr, service: Service, status: AppStatus) -> Self {
        debug_assert_ne!(status, AppStatus::Success);
        AppResult {
            target,
            service,
            status,
            identifier: None,
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == AppStatus::Success
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AppReportOptions {
    /// Drop `app_error` targets from denominators instead of counting them
    /// as failures.
    pub exclude_app_errors: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HrpAppReport {
    pub prefix: Slash24,
    /// Previously responsive addresses (minus excluded app errors).
    pub denominator: u32,
    pub success_count: u32,
    #[serde(serialize_with = "fixed::ratio")]
    pub success_fraction: f64,
    pub any_success: bool,
    /// More than 90% of the denominator succeeded (exact rational test).
    pub gt90_success: bool,
    /// Every success carries one shared identifier; false without successes.
    pub same_identifier: bool,
    /// Successes carrying the most frequent identifier, over all successes.
    #[serde(serialize_with = "fixed::ratio")]
    pub dominant_identifier_share: f64,
    pub distinct_identifiers: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HrpAppReportSet {
    pub service: Service,
    pub reports: Vec<HrpAppReport>,
    /// Results for addresses that did not respond in the port scan.
    pub anomalies: u64,
    /// Repeated results for one target; the first one is used.
    pub duplicate_results: u64,
}

impl HrpAppReportSet {
    pub fn any_success_count(&self) -> usize {
        self.reports.iter().filter(|r| r.any_success).count()
    }

    pub fn gt90_count(&self) -> usize {
        self.reports.iter().filter(|r| r.gt90_success).count()
    }

    pub fn same_identifier_count(&self) -> usize {
        self.reports.iter().filter(|r| r.same_identifier).count()
    }
}

/// `success / denominator > 9 / 10`, by cross-multiplication.
pub fn exceeds_ninety_percent(success: u32, denominator: u32) -> bool {
    u64::from(success) * 10 > u64::from(denominator) * 9
}

struct Join<'a> {
    by_target: BTreeMap<Ipv4Addr, &'a AppResult>,
    anomalies: u64,
    duplicates: u64,
}

fn join<'a>(results: &'a [AppResult], occupancy: &PrefixTable) -> Result<Join<'a>> {
    let service = occupancy.service();
    let mut by_target = BTreeMap::new();
    let mut anomalies = 0;
    let mut duplicates = 0;
    for result in results {
        service.ensure_same(&result.service)?;
        if !occupancy.is_responsive(result.target) {
            anomalies += 1;
            continue;
        }
        match by_target.entry(result.target) {
            Entry::Vacant(slot) => {
                slot.insert(result);
            }
            Entry::Occupied(_) => duplicates += 1,
        }
    }
    Ok(Join {
        by_target,
        anomalies,
        duplicates,
    })
}

fn summarize(
    prefix: Slash24,
    responsive: u32,
    results: &[&AppResult],
    options: AppReportOptions,
) -> HrpAppReport {
    let excluded = if options.exclude_app_errors {
        results
            .iter()
            .filter(|r| r.status == AppStatus::AppError)
            .count() as u32
    } else {
        0
    };
    let denominator = responsive - excluded;
    let successes: Vec<_> = results.iter().filter(|r| r.is_success()).collect();
    let success_count = successes.len() as u32;

    let mut id_counts: HashMap<&str, u32> = HashMap::new();
    for r in &successes {
        if let Some(id) = r.identifier.as_deref() {
            *id_counts.entry(id).or_default() += 1;
        }
    }
    let all_have_id = successes.iter().all(|r| r.identifier.is_some());
    let dominant = id_counts.values().copied().max().unwrap_or(0);

    HrpAppReport {
        prefix,
        denominator,
        success_count,
        success_fraction: if denominator == 0 {
            0.0
        } else {
            f64::from(success_count) / f64::from(denominator)
        },
        any_success: success_count > 0,
        gt90_success: exceeds_ninety_percent(success_count, denominator),
        same_identifier: success_count > 0 && all_have_id && id_counts.len() == 1,
        dominant_identifier_share: if success_count == 0 {
            0.0
        } else {
            f64::from(dominant) / f64::from(success_count)
        },
        distinct_identifiers: id_counts.len() as u32,
    }
}

fn group_by_prefix<'a>(join: &Join<'a>) -> BTreeMap<Slash24, Vec<&'a AppResult>> {
    let mut groups: BTreeMap<Slash24, Vec<&AppResult>> = BTreeMap::new();
    for (target, result) in &join.by_target {
        groups.entry(Slash24::of(*target)).or_default().push(result);
    }
    groups
}

/// Per-HRP application-layer report, one entry per HRP present in
/// `occupancy`, in ascending prefix order.
pub fn hrp_app_report(
    results: &[AppResult],
    hrps: &BTreeSet<Slash24>,
    occupancy: &PrefixTable,
    options: AppReportOptions,
) -> Result<HrpAppReportSet> {
    let join = join(results, occupancy)?;
    let groups = group_by_prefix(&join);
    let reports = hrps
        .iter()
        .filter_map(|&prefix| {
            let occ = occupancy.get(prefix)?;
            let group = groups.get(&prefix).map(Vec::as_slice).unwrap_or_default();
            Some(summarize(prefix, u32::from(occ.count()), group, options))
        })
        .collect();
    Ok(HrpAppReportSet {
        service: occupancy.service(),
        reports,
        anomalies: join.anomalies,
        duplicate_results: join.duplicates,
    })
}

/// Address-level comparison of HRP and non-HRP targets for one service.
/// Rates over an empty partition are `None`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AddressComparison {
    pub service: Service,
    pub non_hrp_targets: u64,
    pub non_hrp_successes: u64,
    #[serde(serialize_with = "fixed::opt_ratio")]
    pub non_hrp_success_rate: Option<f64>,
    pub hrp_targets: u64,
    pub hrp_successes: u64,
    #[serde(serialize_with = "fixed::opt_ratio")]
    pub hrp_success_rate: Option<f64>,
    /// HRP successes inside prefixes with more than 90% success.
    pub gt90_successes: u64,
    #[serde(serialize_with = "fixed::opt_ratio")]
    pub gt90_subset_share: Option<f64>,
    /// Of `gt90_successes`, those in prefixes serving a single identifier.
    pub gt90_same_identifier_successes: u64,
    #[serde(serialize_with = "fixed::opt_ratio")]
    pub gt90_same_identifier_share: Option<f64>,
    pub anomalies: u64,
}

fn rate(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn address_comparison(
    results: &[AppResult],
    hrps: &BTreeSet<Slash24>,
    occupancy: &PrefixTable,
    options: AppReportOptions,
) -> Result<AddressComparison> {
    let reports = hrp_app_report(results, hrps, occupancy, options)?;
    let per_prefix: BTreeMap<Slash24, &HrpAppReport> =
        reports.reports.iter().map(|r| (r.prefix, r)).collect();
    let join = join(results, occupancy)?;

    let mut cmp = AddressComparison {
        service: occupancy.service(),
        non_hrp_targets: 0,
        non_hrp_successes: 0,
        non_hrp_success_rate: None,
        hrp_targets: 0,
        hrp_successes: 0,
        hrp_success_rate: None,
        gt90_successes: 0,
        gt90_subset_share: None,
        gt90_same_identifier_successes: 0,
        gt90_same_identifier_share: None,
        anomalies: join.anomalies,
    };
    for (target, result) in &join.by_target {
        if options.exclude_app_errors && result.status == AppStatus::AppError {
            continue;
        }
        let success = u64::from(result.is_success());
        match per_prefix.get(&Slash24::of(*target)) {
            Some(report) => {
                cmp.hrp_targets += 1;
                cmp.hrp_successes += success;
                if report.gt90_success {
                    cmp.gt90_successes += success;
                    if report.same_identifier {
                        cmp.gt90_same_identifier_successes += success;
                    }
                }
            }
            None => {
                cmp.non_hrp_targets += 1;
                cmp.non_hrp_successes += success;
            }
        }
    }
    cmp.non_hrp_success_rate = rate(cmp.non_hrp_successes, cmp.non_hrp_targets);
    cmp.hrp_success_rate = rate(cmp.hrp_successes, cmp.hrp_targets);
    cmp.gt90_subset_share = rate(cmp.gt90_successes, cmp.hrp_successes);
    cmp.gt90_same_identifier_share = rate(cmp.gt90_same_identifier_successes, cmp.gt90_successes);
    Ok(cmp)
}

/// Empirical CDF of per-HRP success counts over 0..=256.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuccessCdf {
    pub reports: u64,
    /// `values[c]` = share of reports with `success_count <= c`.
    #[serde(serialize_with = "fixed::ratios")]
    pub values: Vec<f64>,
}

impl SuccessCdf {
    pub fn at(&self, success_count: u16) -> f64 {
        let idx = usize::from(success_count.min(PREFIX_SIZE));
        self.values[idx]
    }
}

/// All-zero when `reports` is empty.
pub fn success_cdf(reports: &[HrpAppReport]) -> SuccessCdf {
    let size = usize::from(PREFIX_SIZE) + 1;
    let mut counts = vec![0u64; size];
    for r in reports {
        counts[(r.success_count as usize).min(size - 1)] += 1;
    }
    let total = reports.len() as u64;
    let mut cum = 0;
    let values = counts
        .into_iter()
        .map(|n| {
            cum += n;
            if total == 0 {
                0.0
            } else {
                cum as f64 / total as f64
            }
        })
        .collect();
    SuccessCdf {
        reports: total,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ScanMeta;
    use crate::prefix::aggregate;
    use chrono::DateTime;

    const SVC: Service = Service {
        protocol: crate::ingest::Protocol::Tcp,
        port: 443,
    };

    fn table(prefix: Slash24, responsive: u16) -> PrefixTable {
        let meta = ScanMeta::new(SVC, "port-scan", DateTime::UNIX_EPOCH).unwrap();
        aggregate((0..responsive).map(|h| prefix.address(h as u8)), meta)
    }

    fn only(prefix: Slash24) -> BTreeSet<Slash24> {
        [prefix].into()
    }

    #[test]
    fn single_identifier_hrp() {
        let p = Slash24::from_index(7);
        let results: Vec<_> = (0..250u8)
            .map(|h| AppResult::success(p.address(h), SVC, Some("h1")))
            .collect();
        let set = hrp_app_report(&results, &only(p), &table(p, 256), Default::default()).unwrap();
        let r = &set.reports[0];
        assert_eq!((r.denominator, r.success_count), (256, 250));
        assert!((r.success_fraction - 250.0 / 256.0).abs() < 1e-12);
        assert!(r.gt90_success && r.same_identifier);
        assert_eq!(r.dominant_identifier_share, 1.0);
    }

    #[test]
    fn no_successes() {
        let p = Slash24::from_index(7);
        let results: Vec<_> = (0..240u8)
            .map(|h| AppResult::failure(p.address(h), SVC, AppStatus::Unreachable))
            .collect();
        let r = &hrp_app_report(&results, &only(p), &table(p, 240), Default::default())
            .unwrap()
            .reports[0];
        assert_eq!(r.denominator, 240);
        assert!(!r.any_success && !r.gt90_success && !r.same_identifier);
    }

    #[test]
    fn two_identifiers_at_boundary() {
        let p = Slash24::from_index(7);
        let results: Vec<_> = (0..231u8)
            .map(|h| {
                AppResult::success(p.address(h), SVC, Some(if h % 2 == 0 { "a" } else { "b" }))
            })
            .collect();
        let r = &hrp_app_report(&results, &only(p), &table(p, 256), Default::default())
            .unwrap()
            .reports[0];
        assert!(r.gt90_success);
        assert!(!r.same_identifier);
        assert_eq!(r.distinct_identifiers, 2);
        assert!((r.dominant_identifier_share - 116.0 / 231.0).abs() < 1e-12);
    }

    #[test]
    fn exact_ninety_percent_boundary() {
        // 9/10 is not "more than" 90%
        assert!(!exceeds_ninety_percent(9, 10));
        assert!(exceeds_ninety_percent(231, 256));
        assert!(!exceeds_ninety_percent(230, 256));
        assert!(!exceeds_ninety_percent(0, 0));
    }

    #[test]
    fn missing_identifier_breaks_same_identifier() {
        let p = Slash24::from_index(7);
        let mut results: Vec<_> = (0..10u8)
            .map(|h| AppResult::success(p.address(h), SVC, Some("a")))
            .collect();
        results.push(AppResult::success(p.address(10), SVC, None));
        let r = &hrp_app_report(&results, &only(p), &table(p, 11), Default::default())
            .unwrap()
            .reports[0];
        assert!(!r.same_identifier);
    }

    #[test]
    fn anomalies_and_duplicates() {
        let p = Slash24::from_index(7);
        let results = vec![
            AppResult::success(p.address(0), SVC, Some("a")),
            AppResult::failure(p.address(0), SVC, AppStatus::Unreachable),
            AppResult::success(p.address(200), SVC, Some("a")),
        ];
        let set = hrp_app_report(&results, &only(p), &table(p, 10), Default::default()).unwrap();
        assert_eq!(set.anomalies, 1);
        assert_eq!(set.duplicate_results, 1);
        assert_eq!(set.reports[0].success_count, 1);
    }

    #[test]
    fn mismatched_service() {
        let p = Slash24::from_index(7);
        let results = vec![AppResult::success(p.address(0), Service::tcp(80), None)];
        let err =
            hrp_app_report(&results, &only(p), &table(p, 10), Default::default()).unwrap_err();
        assert!(matches!(err, Error::ServiceMismatch { .. }));
    }

    #[test]
    fn identifier_requires_success() {
        let ip = Ipv4Addr::new(192, 0, 2, 1);
        assert!(AppResult::new(ip, SVC, AppStatus::AppError, Some("x".into())).is_err());
        assert!(AppResult::new(ip, SVC, AppStatus::AppError, Some(String::new())).is_ok());
    }

    #[test]
    fn excluding_app_errors_shrinks_denominator() {
        let p = Slash24::from_index(7);
        let mut results: Vec<_> = (0..200u8)
            .map(|h| AppResult::success(p.address(h), SVC, Some("a")))
            .collect();
        results.extend(
            (200..=255u8).map(|h| AppResult::failure(p.address(h), SVC, AppStatus::AppError)),
        );
        let occ = table(p, 256);
        let r = &hrp_app_report(&results, &only(p), &occ, Default::default())
            .unwrap()
            .reports[0];
        assert!(!r.gt90_success);
        let opts = AppReportOptions {
            exclude_app_errors: true,
        };
        let r = &hrp_app_report(&results, &only(p), &occ, opts)
            .unwrap()
            .reports[0];
        assert_eq!(r.denominator, 200);
        assert!(r.gt90_success);
    }

    #[test]
    fn comparison_rates() {
        let hrp = Slash24::from_index(1);
        let other = Slash24::from_index(2);
        let meta = ScanMeta::new(SVC, "port-scan", DateTime::UNIX_EPOCH).unwrap();
        let occ = aggregate(
            (0..=255u8)
                .map(|h| hrp.address(h))
                .chain((0..100u8).map(|h| other.address(h))),
            meta,
        );
        let mut results: Vec<_> = (0..100u8)
            .map(|h| {
                if h < 89 {
                    AppResult::success(other.address(h), SVC, Some("x"))
                } else {
                    AppResult::failure(other.address(h), SVC, AppStatus::Unreachable)
                }
            })
            .collect();
        results.extend((0..=255u8).map(|h| AppResult::success(hrp.address(h), SVC, Some("c"))));
        let cmp = address_comparison(&results, &only(hrp), &occ, Default::default()).unwrap();
        assert_eq!(cmp.non_hrp_success_rate, Some(0.89));
        assert_eq!(cmp.hrp_success_rate, Some(1.0));
        assert_eq!(cmp.gt90_subset_share, Some(1.0));
        assert_eq!(cmp.gt90_same_identifier_share, Some(1.0));
    }

    #[test]
    fn comparison_empty_partition_is_undefined() {
        let hrp = Slash24::from_index(1);
        let occ = table(hrp, 256);
        let cmp = address_comparison(&[], &only(hrp), &occ, Default::default()).unwrap();
        assert_eq!(cmp.non_hrp_success_rate, None);
        assert_eq!(cmp.hrp_success_rate, None);
        assert_eq!(cmp.gt90_subset_share, None);
    }

    fn report_with(success_count: u32) -> HrpAppReport {
        summarize(Slash24::from_index(0), 256, &[], Default::default()).with_success(success_count)
    }

    impl HrpAppReport {
        fn with_success(mut self, n: u32) -> Self {
            self.success_count = n;
            self
        }
    }

    #[test]
    fn cdf_examples() {
        let cdf = success_cdf(&[report_with(0), report_with(0)]);
        assert_eq!(cdf.at(0), 1.0);

        let cdf = success_cdf(&[report_with(0), report_with(128), report_with(256)]);
        assert!((cdf.at(0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((cdf.at(127) - 1.0 / 3.0).abs() < 1e-12);
        assert!((cdf.at(128) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(cdf.at(256), 1.0);
        assert!(cdf.values.windows(2).all(|w| w[0] <= w[1]));

        let empty = success_cdf(&[]);
        assert_eq!(empty.at(256), 0.0);
    }
}
