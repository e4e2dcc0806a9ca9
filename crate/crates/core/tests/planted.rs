//! Constructed corpora with known answers. Expected values are computed by
//! brute force over the construction, independent of the library code.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use chrono::{DateTime, Duration};
use hrpkit::analytics::{port_profile, stability_series};
use hrpkit::applayer::{address_comparison, hrp_app_report, success_cdf, AppResult, AppStatus};
use hrpkit::bgp::{as_summary, enrich, RouteEntry, RoutePrefix, RoutingTable};
use hrpkit::planner::{
    build_plan, classify_plan, escalate, evaluate_plan, SamplePolicy, ScenarioClass,
};
use hrpkit::prefix::{aggregate, classify, hrp_address_share, hrp_set, responsiveness_histogram};
use hrpkit::{ClassifiedScan, HrpThreshold, PrefixTable, ScanMeta, Service, Slash24};

fn meta(service: Service, id: &str, week: i64) -> ScanMeta {
    ScanMeta::new(service, id, DateTime::UNIX_EPOCH + Duration::weeks(week)).unwrap()
}

/// Table where prefix `first + i` has exactly `counts[i]` responsive hosts 0..count.
fn table_from_counts(service: Service, first: u32, counts: &[u16], week: i64) -> PrefixTable {
    let addrs = counts.iter().enumerate().flat_map(|(i, &c)| {
        (0..c).map(move |h| Slash24::from_index(first + i as u32).address(h as u8))
    });
    aggregate(addrs, meta(service, &format!("w{week}"), week))
}

#[test]
fn histogram_planted_share() {
    let counts: Vec<u16> = std::iter::repeat_n(8, 978)
        .chain(std::iter::repeat_n(256, 22))
        .collect();
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    let hrp: u64 = counts
        .iter()
        .filter(|&&c| c >= 231)
        .map(|&c| u64::from(c))
        .sum();
    assert_eq!((hrp, total), (5632, 13456));

    let stats = classify(
        &table_from_counts(Service::tcp(443), 0, &counts, 0),
        HrpThreshold::default(),
    );
    let h = responsiveness_histogram(&stats);
    assert_eq!(h.mass_at_or_above(231), (22, 5632));
    assert_eq!(h.address_share_at_or_above(231), 5632.0 / 13456.0);
    assert_eq!(hrp_address_share(&stats), 5632.0 / 13456.0);
    assert!((hrp_address_share(&stats) - 0.418549).abs() < 1e-6);
}

#[test]
fn as_summary_reproduces_planted_ratios() {
    // AS 64500: 3100 /24s, 3047 of them HRPs on tcp/443, all visible on tcp/80 with few hosts.
    // AS 64501: 40 /24s, 2 HRPs on tcp/80 only.
    let mut counts_443 = vec![240u16; 3047];
    counts_443.extend(std::iter::repeat_n(12u16, 53));
    let counts_80_a = vec![3u16; 3100];
    let mut counts_80_b = vec![256u16; 2];
    counts_80_b.extend(std::iter::repeat_n(20u16, 38));

    let mut stats = classify(
        &table_from_counts(Service::tcp(443), 0, &counts_443, 0),
        HrpThreshold::default(),
    );
    stats.extend(classify(
        &table_from_counts(Service::tcp(80), 0, &counts_80_a, 0),
        HrpThreshold::default(),
    ));
    stats.extend(classify(
        &table_from_counts(Service::tcp(80), 0x1000, &counts_80_b, 0),
        HrpThreshold::default(),
    ));

    let routes: RoutingTable = [
        RouteEntry {
            prefix: RoutePrefix::new(Ipv4Addr::new(0, 0, 0, 0), 12).unwrap(),
            origin_asn: 64500,
        },
        RouteEntry {
            prefix: RoutePrefix::new(Ipv4Addr::new(0, 16, 0, 0), 16).unwrap(),
            origin_asn: 64501,
        },
    ]
    .into_iter()
    .collect();
    let summary = as_summary(&enrich(&stats, &routes).stats);

    let a = summary.iter().find(|s| s.asn == 64500).unwrap();
    assert_eq!((a.visible_24s, a.hrp_count), (3100, 3047));
    assert_eq!(a.hrp_share, 3047.0 / 3100.0);
    assert!((a.hrp_share - 0.983).abs() < 5e-4);
    assert_eq!((a.ports_visible, a.ports_with_hrps), (2, 1));

    let b = summary.iter().find(|s| s.asn == 64501).unwrap();
    assert_eq!(
        (
            b.visible_24s,
            b.hrp_count,
            b.ports_visible,
            b.ports_with_hrps
        ),
        (40, 2, 1, 1)
    );
    assert_eq!(b.hrp_share, 2.0 / 40.0);
    // ranked by HRP count
    assert_eq!(summary[0].asn, 64500);
    let visible: u64 = summary.iter().map(|s| s.visible_24s).sum();
    assert!(visible >= 3140);
}

#[test]
fn port_profile_half_single_port() {
    // 40 HRP prefixes; 20 are HRPs on one port only, 20 on three ports.
    let services = [Service::tcp(80), Service::tcp(443), Service::tcp(8080)];
    let scans: Vec<ClassifiedScan> = services
        .iter()
        .enumerate()
        .map(|(i, &svc)| {
            let counts: Vec<u16> = (0..40)
                .map(|p| if p < 20 && i > 0 { 5 } else { 250 })
                .collect();
            ClassifiedScan::from_table(
                &table_from_counts(svc, 0, &counts, 0),
                HrpThreshold::default(),
            )
        })
        .collect();
    let report = port_profile(&scans).unwrap();
    let single = report.profiles.iter().filter(|p| p.ports_hrp == 1).count();
    assert_eq!(single, 20);
    assert_eq!(report.distinct_hrps(), 40);
    assert_eq!(report.hrp_bucket_share(1), 0.5);
    assert_eq!(report.hrp_bucket_share(3), 0.5);
    assert_eq!(report.responsive_histogram, vec![0, 0, 0, 40]);
}

#[test]
fn stability_flat_thirty_percent() {
    // 3 x 256 HRP addresses + 8 x 224 non-HRP addresses = 768 / 2560 = 0.30
    let mut counts = vec![256u16; 3];
    counts.extend(std::iter::repeat_n(224u16, 8));
    assert_eq!(768.0 / 2560.0, 0.30);
    let scans: Vec<_> = (0..10)
        .map(|w| {
            ClassifiedScan::from_table(
                &table_from_counts(Service::tcp(443), 100 + w as u32, &counts, w),
                HrpThreshold::default(),
            )
        })
        .collect();
    let series = stability_series(&scans).unwrap();
    assert_eq!(series.len(), 10);
    for point in series {
        assert_eq!(point.hrp_address_share_90, 0.30);
        assert_eq!(point.hrp_address_share_95, 0.30);
        assert_eq!(point.hrp_count, 3);
    }
}

fn svc() -> Service {
    Service::tcp(25)
}

#[test]
fn gt90_same_identifier_share() {
    // 25 full HRPs with 250 successes each: 23 serve one certificate, 2 serve two.
    let table = table_from_counts(svc(), 0, &[256; 25], 0);
    let mut results = Vec::new();
    for p in 0..25u32 {
        let prefix = Slash24::from_index(p);
        for h in 0..=255u8 {
            let addr = prefix.address(h);
            results.push(if h < 250 {
                let id = if p < 23 {
                    format!("cert-{p}")
                } else {
                    format!("cert-{p}-{}", h % 2)
                };
                AppResult::success(addr, svc(), Some(&id))
            } else {
                AppResult::failure(addr, svc(), AppStatus::Unreachable)
            });
        }
    }
    // non-HRP addresses in a sparse prefix
    let sparse = Slash24::from_index(99);
    let mut all_addrs: Vec<Ipv4Addr> = table.iter().flat_map(|(p, _)| table.addresses(p)).collect();
    all_addrs.extend((0..100u8).map(|h| sparse.address(h)));
    let table = aggregate(all_addrs, table.meta().clone());
    for h in 0..100u8 {
        results.push(if h < 89 {
            AppResult::success(sparse.address(h), svc(), Some("mx"))
        } else {
            AppResult::failure(sparse.address(h), svc(), AppStatus::AppError)
        });
    }

    let hrps = hrp_set(&classify(&table, HrpThreshold::default()));
    assert_eq!(hrps.len(), 25);
    let cmp = address_comparison(&results, &hrps, &table, Default::default()).unwrap();
    // oracle: 23 * 250 same-identifier successes out of 25 * 250
    assert_eq!(cmp.gt90_successes, 25 * 250);
    assert_eq!(cmp.gt90_same_identifier_successes, 23 * 250);
    assert_eq!(cmp.gt90_same_identifier_share, Some(0.92));
    assert_eq!(cmp.gt90_subset_share, Some(1.0));
    assert_eq!(cmp.non_hrp_success_rate, Some(0.89));

    let reports = hrp_app_report(&results, &hrps, &table, Default::default()).unwrap();
    assert_eq!(reports.same_identifier_count(), 23);
    assert_eq!(reports.gt90_count(), 25);
}

#[test]
fn cdf_twenty_percent_unsuccessful() {
    let table = table_from_counts(svc(), 0, &[256; 10], 0);
    let hrps: BTreeSet<_> = (0..10).map(Slash24::from_index).collect();
    let results: Vec<_> = (2..10u32)
        .flat_map(|p| {
            (0..(p * 20) as u8)
                .map(move |h| AppResult::success(Slash24::from_index(p).address(h), svc(), None))
        })
        .collect();
    let reports = hrp_app_report(&results, &hrps, &table, Default::default()).unwrap();
    let cdf = success_cdf(&reports.reports);
    assert_eq!(cdf.at(0), 0.20);
    assert_eq!(cdf.at(40), 0.30);
    assert_eq!(cdf.at(256), 1.0);
}

#[test]
fn evaluation_with_escalated_diverse_prefixes() {
    let service = Service::tcp(443);
    let table = table_from_counts(service, 0, &[256; 100], 0);
    let hrps = hrp_set(&classify(&table, HrpThreshold::default()));
    let diverse: BTreeSet<u32> = [3, 21, 42, 77, 90].into();
    let truth: Vec<AppResult> = table
        .iter()
        .flat_map(|(p, _)| {
            let is_diverse = diverse.contains(&p.index());
            table.addresses(p).into_iter().map(move |a| {
                let id = if is_diverse {
                    format!("{p}-{}", u32::from(a) % 3)
                } else {
                    p.to_string()
                };
                AppResult::success(a, service, Some(&id))
            })
        })
        .collect();

    let policy = SamplePolicy {
        rng_seed: 2024,
        ..Default::default()
    };
    let plan = build_plan(&table, &hrps, &[], &policy).unwrap();
    let classes = classify_plan(&plan, &truth, &policy).unwrap();
    for (p, class) in &classes {
        let expected = if diverse.contains(&p.index()) {
            ScenarioClass::Diverse
        } else {
            ScenarioClass::CdnLike
        };
        assert_eq!(*class, expected, "{p}");
    }
    let final_plan = escalate(&plan, &classes, &table).unwrap();
    let metrics = evaluate_plan(&final_plan, &truth).unwrap();

    // oracle: 95 sampled prefixes x 10 + 5 full prefixes x 256
    let planned = 95 * 10 + 5 * 256;
    assert_eq!(metrics.handshakes_planned, planned);
    assert_eq!(metrics.handshakes_full_baseline, 25600);
    assert_eq!(metrics.reduction, 1.0 - planned as f64 / 25600.0);
    assert_eq!(metrics.identifiers_total, 95 + 5 * 3);
    assert_eq!(metrics.identifier_coverage, 1.0);
}
