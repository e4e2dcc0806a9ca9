//! Subcommand adapters. Each one parses its inputs, calls the library
//! operation and writes the result; no analysis happens here.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;

use chrono::{DateTime, Utc};
use hrpkit::analytics::{
    persistence, port_profile, stability_series, vantage_diff_scans, PersistenceSummary,
    StabilityPoint,
};
use hrpkit::applayer::{
    address_comparison, hrp_app_report, success_cdf, AddressComparison, AppReportOptions,
    HrpAppReport,
};
use hrpkit::bgp::{as_summary, enrich as enrich_stats, load_route_table, RouteLoadStats};
use hrpkit::formats;
use hrpkit::ingest::open_scan_source;
use hrpkit::planner::{
    build_plan, classify_plan, escalate, evaluate_plan, PlanSummary, SamplePolicy, ScenarioClass,
};
use hrpkit::prefix::{classify, hrp_address_share, hrp_set, responsiveness_histogram};
use hrpkit::{
    ClassifiedScan, Error, HrpThreshold, IngestStats, PrefixStat, PrefixTable, Protocol, ScanMeta,
    Service,
};
use serde::Serialize;

use crate::{
    ApplayerArgs, DetectArgs, EnrichArgs, EvaluateArgs, PlanArgs, PortmatrixArgs, ScanInput,
    ServiceFilter, StabilityArgs, VantageArgs,
};

pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub type Outcome<T = ()> = Result<T, Failure>;

/// 2: usage or inconsistent inputs, 3: malformed input, 4: I/O.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Usage(_) | Error::ServiceMismatch { .. } | Error::Evaluation(_) => 2,
        Error::Ingest { .. } | Error::Format { .. } => 3,
        Error::Io(_) => 4,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure {
            code: exit_code(&err),
            message: err.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

/// Prefixes the message with the offending file.
fn at(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
    move |err| Failure {
        code: exit_code(&err),
        message: format!("{}: {err}", path.display()),
    }
}

fn open(path: &Path) -> Outcome<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| at(path)(e.into()))
}

fn create(path: Option<&Path>) -> Outcome<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| at(p)(e.into()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn finish(mut out: Box<dyn Write>) -> Outcome {
    out.flush().map_err(|e| Error::from(e).into())
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Outcome {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(Error::from)?;
    out.write_all(b"\n").map_err(Error::from)?;
    finish(out)
}

/// Counters go to `path` as pretty json, or to standard error as one line.
fn write_summary<T: Serialize>(path: Option<&Path>, value: &T) -> Outcome {
    match path {
        Some(_) => write_json(path, value),
        None => {
            let line = serde_json::to_string(value).map_err(Error::from)?;
            eprintln!("{line}");
            Ok(())
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "scan".to_owned())
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl" | "json")
    )
}

fn read_stats(path: &Path) -> Outcome<Vec<PrefixStat>> {
    let input = open(path)?;
    let stats = if is_jsonl(path) {
        formats::read_stats_jsonl(input)
    } else {
        formats::read_stats_csv(input)
    };
    stats.map_err(at(path))
}

fn write_stats(path: Option<&Path>, stats: &[PrefixStat], jsonl: bool) -> Outcome {
    let mut out = create(path)?;
    if jsonl {
        formats::write_stats_jsonl(&mut out, stats)?;
    } else {
        formats::write_stats_csv(&mut out, stats)?;
    }
    finish(out)
}

impl ServiceFilter {
    fn expected(&self) -> Outcome<Option<Service>> {
        match (self.port, self.proto) {
            (Some(port), proto) => Ok(Some(Service::new(proto.unwrap_or(Protocol::Tcp), port))),
            (None, Some(_)) => Err(usage("--proto needs --port")),
            (None, None) => Ok(None),
        }
    }
}

/// Loads a stats file as one scan. The service comes from `expected`, else
/// from the first row; `expected` is then pinned so later files must agree.
fn load_scan(
    path: &Path,
    expected: &mut Option<Service>,
    timestamp: DateTime<Utc>,
) -> Outcome<ClassifiedScan> {
    let stats = read_stats(path)?;
    let service = match (*expected, stats.first()) {
        (Some(s), _) => s,
        (None, Some(first)) => first.service,
        (None, None) => {
            return Err(usage(format!(
                "{}: no rows to infer the service from; pass --port",
                path.display()
            )))
        }
    };
    *expected = Some(service);
    let meta = ScanMeta::new(service, stem(path), timestamp)?;
    ClassifiedScan::new(meta, stats).map_err(at(path))
}

fn ingest_file(path: &Path, table: &mut PrefixTable, input: &ScanInput) -> Outcome<IngestStats> {
    let mut reader = open_scan_source(open(path)?, input.format, input.policy);
    for addr in reader.by_ref() {
        table.insert(addr.map_err(at(path))?);
    }
    Ok(reader.stats())
}

/// Ingests `paths` on up to `available_parallelism` threads and merges the
/// shards. Errors are reported for the earliest failing file.
fn ingest_all(
    paths: &[PathBuf],
    meta: &ScanMeta,
    input: &ScanInput,
) -> Outcome<(PrefixTable, IngestStats)> {
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(paths.len())
        .max(1);
    let chunk = paths.len().div_ceil(workers).max(1);
    let shards: Vec<Outcome<(PrefixTable, IngestStats)>> = thread::scope(|s| {
        let handles: Vec<_> = paths
            .chunks(chunk)
            .map(|files| {
                s.spawn(move || {
                    let mut table = PrefixTable::new(meta.clone());
                    let mut stats = IngestStats::default();
                    for path in files {
                        stats.merge(&ingest_file(path, &mut table, input)?);
                    }
                    Ok((table, stats))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ingest worker panicked"))
            .collect()
    });

    let mut table = PrefixTable::new(meta.clone());
    let mut stats = IngestStats::default();
    for shard in shards {
        let (part, part_stats) = shard?;
        table.merge_from(&part)?;
        stats.merge(&part_stats);
    }
    Ok((table, stats))
}

#[derive(Serialize)]
struct DetectSummary {
    service: Service,
    scan_id: String,
    files: usize,
    ingest: IngestStats,
    prefixes: usize,
    addresses: u64,
    hrps: usize,
    min_count: u16,
    #[serde(serialize_with = "hrpkit::fixed::ratio")]
    hrp_address_share: f64,
}

pub fn detect(a: DetectArgs) -> Outcome {
    let threshold = HrpThreshold::new(a.threshold)?;
    let service = Service::new(a.proto, a.port);
    let scan_id = a.scan_id.clone().unwrap_or_else(|| stem(&a.scans[0]));
    let mut meta = ScanMeta::new(
        service,
        scan_id,
        a.timestamp.unwrap_or(DateTime::UNIX_EPOCH),
    )?;
    if let Some(v) = &a.vantage {
        meta = meta.with_vantage(v.clone());
    }

    let (table, ingest) = ingest_all(&a.scans, &meta, &a.input)?;
    let stats = classify(&table, threshold);
    write_stats(a.out.output.as_deref(), &stats, a.jsonl)?;
    if let Some(path) = &a.histogram {
        let mut out = create(Some(path))?;
        formats::write_histogram_csv(&mut out, &responsiveness_histogram(&stats))?;
        finish(out)?;
    }
    write_summary(
        a.out.summary.as_deref(),
        &DetectSummary {
            service,
            scan_id: meta.scan_id.clone(),
            files: a.scans.len(),
            ingest,
            prefixes: table.len(),
            addresses: table.total_addresses(),
            hrps: stats.iter().filter(|s| s.is_hrp).count(),
            min_count: threshold.min_count(),
            hrp_address_share: hrp_address_share(&stats),
        },
    )
}

#[derive(Serialize)]
struct EnrichSummary {
    routes: RouteLoadStats,
    matched: u64,
    unmatched: u64,
    ambiguous: u64,
}

pub fn enrich(a: EnrichArgs) -> Outcome {
    let (routes, route_stats) =
        load_route_table(open(&a.routes)?, a.policy).map_err(at(&a.routes))?;
    let mut stats = Vec::new();
    for path in &a.stats {
        stats.extend(read_stats(path)?);
    }
    let enriched = enrich_stats(&stats, &routes);
    write_stats(a.out.output.as_deref(), &enriched.stats, a.jsonl)?;
    if let Some(path) = &a.as_summary {
        write_json(Some(path), &as_summary(&enriched.stats))?;
    }
    write_summary(
        a.out.summary.as_deref(),
        &EnrichSummary {
            routes: route_stats,
            matched: enriched.matched,
            unmatched: enriched.unmatched,
            ambiguous: enriched.ambiguous,
        },
    )
}

pub fn portmatrix(a: PortmatrixArgs) -> Outcome {
    let scans = a
        .stats
        .iter()
        .map(|p| load_scan(p, &mut None, DateTime::UNIX_EPOCH))
        .collect::<Outcome<Vec<_>>>()?;
    write_json(a.output.as_deref(), &port_profile(&scans)?)
}

#[derive(Serialize)]
struct StabilityReport {
    service: Service,
    series: Vec<StabilityPoint>,
    /// Absent for a single scan.
    persistence: Option<PersistenceSummary>,
}

pub fn stability(a: StabilityArgs) -> Outcome {
    if !a.timestamps.is_empty() && a.timestamps.len() != a.stats.len() {
        return Err(usage(format!(
            "{} timestamps given for {} inputs",
            a.timestamps.len(),
            a.stats.len()
        )));
    }
    let mut service = a.service.expected()?;
    let scans = a
        .stats
        .iter()
        .enumerate()
        .map(|(i, p)| {
            load_scan(
                p,
                &mut service,
                a.timestamps.get(i).copied().unwrap_or(DateTime::UNIX_EPOCH),
            )
        })
        .collect::<Outcome<Vec<_>>>()?;
    let series = stability_series(&scans)?;
    if let Some(path) = &a.series_csv {
        let mut out = create(Some(path))?;
        formats::write_stability_csv(&mut out, &series)?;
        finish(out)?;
    }
    let persistence = if scans.len() >= 2 {
        Some(persistence(&scans, a.persistence_n)?)
    } else {
        None
    };
    write_json(
        a.output.as_deref(),
        &StabilityReport {
            service: scans[0].service(),
            series,
            persistence,
        },
    )
}

pub fn vantage(a: VantageArgs) -> Outcome {
    let mut service = a.service.expected()?;
    let first = load_scan(&a.a, &mut service, DateTime::UNIX_EPOCH)?;
    let second = load_scan(&a.b, &mut service, DateTime::UNIX_EPOCH)?;
    write_json(a.output.as_deref(), &vantage_diff_scans(&first, &second)?)
}

/// Rebuilds the bitmaps behind a stats file from its raw scan and checks the
/// two agree prefix by prefix.
fn occupancy_for(
    stats_path: &Path,
    filter: &ServiceFilter,
    scan: &Path,
    input: &ScanInput,
) -> Outcome<(Vec<PrefixStat>, PrefixTable)> {
    let mut service = filter.expected()?;
    let classified = load_scan(stats_path, &mut service, DateTime::UNIX_EPOCH)?;
    let (table, _) = ingest_all(&[scan.to_path_buf()], &classified.meta, input)?;
    let counts: BTreeMap<_, _> = table.iter().map(|(p, occ)| (p, occ.count())).collect();
    let consistent = counts.len() == classified.stats.len()
        && classified
            .stats
            .iter()
            .all(|s| counts.get(&s.prefix) == Some(&s.responsive_count));
    if !consistent {
        return Err(usage(format!(
            "{} does not match the counts in {}",
            scan.display(),
            stats_path.display()
        )));
    }
    Ok((classified.stats, table))
}

fn read_results(path: &Path) -> Outcome<Vec<hrpkit::applayer::AppResult>> {
    formats::read_app_results_csv(open(path)?).map_err(at(path))
}

#[derive(Serialize)]
struct ApplayerReport {
    service: Service,
    hrps: usize,
    any_success: usize,
    gt90_success: usize,
    same_identifier: usize,
    anomalies: u64,
    duplicate_results: u64,
    comparison: AddressComparison,
    #[serde(skip_serializing_if = "Option::is_none")]
    reports: Option<Vec<HrpAppReport>>,
}

pub fn applayer(a: ApplayerArgs) -> Outcome {
    let options = AppReportOptions {
        exclude_app_errors: a.exclude_app_errors,
    };
    let (stats, table) = occupancy_for(&a.stats, &a.service, &a.scan, &a.input)?;
    let results = read_results(&a.results)?;
    let hrps = hrp_set(&stats);
    let set = hrp_app_report(&results, &hrps, &table, options).map_err(at(&a.results))?;
    let comparison =
        address_comparison(&results, &hrps, &table, options).map_err(at(&a.results))?;
    if let Some(path) = &a.cdf {
        let mut out = create(Some(path))?;
        formats::write_cdf_csv(&mut out, &success_cdf(&set.reports))?;
        finish(out)?;
    }
    write_json(
        a.output.as_deref(),
        &ApplayerReport {
            service: set.service,
            hrps: set.reports.len(),
            any_success: set.any_success_count(),
            gt90_success: set.gt90_count(),
            same_identifier: set.same_identifier_count(),
            anomalies: set.anomalies,
            duplicate_results: set.duplicate_results,
            comparison,
            reports: a.per_prefix.then_some(set.reports),
        },
    )
}

#[derive(Serialize)]
struct PlanReport {
    policy: SamplePolicy,
    #[serde(flatten)]
    summary: PlanSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    classes: Option<BTreeMap<ScenarioClass, usize>>,
}

pub fn plan(a: PlanArgs) -> Outcome {
    let policy = SamplePolicy {
        k: a.k,
        rng_seed: a.rng_seed,
        proxy_max_success: a.proxy_max_success,
        cdn_min_success: a.cdn_min_success,
        include_unresponsive_seeds: !a.responsive_seeds_only,
    };
    policy.validate()?;

    let seeds = formats::read_seeds_csv(open(&a.seeds)?).map_err(at(&a.seeds))?;
    let (stats, table) = occupancy_for(&a.stats, &a.service, &a.scan, &a.input)?;
    let mut plan = build_plan(&table, &hrp_set(&stats), &seeds, &policy)?;

    let mut class_counts = None;
    if let Some(path) = &a.sample_results {
        let classes = classify_plan(&plan, &read_results(path)?, &policy).map_err(at(path))?;
        plan = escalate(&plan, &classes, &table)?;
        let mut counts = BTreeMap::new();
        for class in classes.values() {
            *counts.entry(*class).or_insert(0) += 1;
        }
        class_counts = Some(counts);
    }

    let mut out = create(a.out.output.as_deref())?;
    formats::write_plan_csv(&mut out, &plan)?;
    finish(out)?;
    if let Some(path) = &a.ip_list {
        let mut out = create(Some(path))?;
        formats::write_plan_ip_list(&mut out, &plan)?;
        finish(out)?;
    }
    write_summary(
        a.out.summary.as_deref(),
        &PlanReport {
            policy,
            summary: plan.summary(),
            classes: class_counts,
        },
    )
}

pub fn evaluate(a: EvaluateArgs) -> Outcome {
    let plan = formats::read_plan_csv(open(&a.plan)?).map_err(at(&a.plan))?;
    let truth = read_results(&a.truth)?;
    write_json(a.output.as_deref(), &evaluate_plan(&plan, &truth)?)
}
