//! Reading and writing the csv / json-lines interchange files.
//!
//! | file          | columns                                                                     |
//! |---------------|-----------------------------------------------------------------------------|
//! | prefix stats  | `prefix,port,proto,count,is_hrp,threshold_fraction,origin_asn,covering_prefix` |
//! | app results   | `ip,port,proto,status,identifier`                                           |
//! | dns seeds     | `ip,name_count`                                                             |
//! | target plan   | `ip,prefix,strategy,provenance`                                             |
//!
//! Unset optionals are empty csv fields (or `null` in json-lines). Ratios are
//! written with six fractional digits.

use std::io::{BufRead, Read, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::analytics::StabilityPoint;
use crate::applayer::{AppResult, AppStatus, SuccessCdf};
use crate::bgp::RoutePrefix;
use crate::error::{Error, Result};
use crate::fixed::{self, Ratio};
use crate::ingest::{Protocol, Service};
use crate::planner::{DnsSeed, PlannedTarget, TargetPlan};
use crate::prefix::{HrpThreshold, PrefixStat, ResponsivenessHistogram, Slash24};

#[derive(Debug, Serialize, Deserialize)]
struct StatRecord {
    prefix: Slash24,
    port: u16,
    proto: Protocol,
    count: u16,
    is_hrp: bool,
    threshold_fraction: Ratio,
    origin_asn: Option<u32>,
    covering_prefix: Option<RoutePrefix>,
}

impl From<&PrefixStat> for StatRecord {
    fn from(s: &PrefixStat) -> Self {
        StatRecord {
            prefix: s.prefix,
            port: s.service.port,
            proto: s.service.protocol,
            count: s.responsive_count,
            is_hrp: s.is_hrp,
            threshold_fraction: Ratio(s.threshold.fraction()),
            origin_asn: s.origin_asn,
            covering_prefix: s.covering_route,
        }
    }
}

impl StatRecord {
    fn into_stat(self, line: u64) -> Result<PrefixStat> {
        let threshold = HrpThreshold::new(self.threshold_fraction.0)
            .map_err(|e| Error::format(line, e.to_string()))?;
        if self.count == 0 || self.count > 256 {
            return Err(Error::format(
                line,
                format!("count {} outside 1..=256", self.count),
            ));
        }
        let mut stat = PrefixStat::new(
            self.prefix,
            Service::new(self.proto, self.port),
            self.count,
            threshold,
        );
        if stat.is_hrp != self.is_hrp {
            return Err(Error::format(
                line,
                format!(
                    "is_hrp={} contradicts count {} at threshold {}",
                    self.is_hrp,
                    self.count,
                    fixed::format_ratio(threshold.fraction())
                ),
            ));
        }
        stat.origin_asn = self.origin_asn;
        stat.covering_route = self.covering_prefix;
        Ok(stat)
    }
}

// Headers are written by hand: csv cannot derive them through `Ratio`.
fn csv_with_header<W: Write>(out: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

pub fn write_stats_csv<W: Write>(out: W, stats: &[PrefixStat]) -> Result<()> {
    let mut w = csv_with_header(out, &STATS_HEADER)?;
    for stat in stats {
        w.serialize(StatRecord::from(stat))?;
    }
    w.flush()?;
    Ok(())
}

const STATS_HEADER: [&str; 8] = [
    "prefix",
    "port",
    "proto",
    "count",
    "is_hrp",
    "threshold_fraction",
    "origin_asn",
    "covering_prefix",
];

pub fn write_stats_jsonl<W: Write>(mut out: W, stats: &[PrefixStat]) -> Result<()> {
    for stat in stats {
        serde_json::to_writer(&mut out, &StatRecord::from(stat))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_stats_csv<R: Read>(input: R) -> Result<Vec<PrefixStat>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    for record in rdr.deserialize::<StatRecord>() {
        let record = record?;
        out.push(record.into_stat(out.len() as u64 + 2)?);
    }
    Ok(out)
}

pub fn read_stats_jsonl<R: BufRead>(input: R) -> Result<Vec<PrefixStat>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx as u64 + 1;
        let record: StatRecord =
            serde_json::from_str(&line).map_err(|e| Error::format(line_no, e.to_string()))?;
        out.push(record.into_stat(line_no)?);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct AppRecord {
    ip: Ipv4Addr,
    port: u16,
    proto: Protocol,
    status: AppStatus,
    identifier: Option<String>,
}

pub fn read_app_results_csv<R: Read>(input: R) -> Result<Vec<AppResult>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    for record in rdr.deserialize::<AppRecord>() {
        let r = record?;
        let line = out.len() as u64 + 2;
        let result = AppResult::new(r.ip, Service::new(r.proto, r.port), r.status, r.identifier)
            .map_err(|e| Error::format(line, e.to_string()))?;
        out.push(result);
    }
    Ok(out)
}

pub fn write_app_results_csv<W: Write>(out: W, results: &[AppResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(AppRecord {
            ip: r.target,
            port: r.service.port,
            proto: r.service.protocol,
            status: r.status,
            identifier: r.identifier.clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `ip,name_count` rows; a leading `ip,name_count` header is optional.
pub fn read_seeds_csv<R: Read>(input: R) -> Result<Vec<DnsSeed>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(idx as u64 + 1);
        if idx == 0 && record.get(0) == Some("ip") {
            continue;
        }
        let (Some(ip), Some(count)) = (record.get(0), record.get(1)) else {
            return Err(Error::format(line, "expected ip,name_count"));
        };
        let address = ip
            .parse()
            .map_err(|_| Error::format(line, format!("invalid address {ip:?}")))?;
        let name_count: u32 = count
            .parse()
            .map_err(|_| Error::format(line, format!("invalid name count {count:?}")))?;
        if name_count == 0 {
            return Err(Error::format(line, "name count must be at least 1"));
        }
        out.push(DnsSeed {
            address,
            name_count,
        });
    }
    Ok(out)
}

pub fn write_plan_csv<W: Write>(out: W, plan: &TargetPlan) -> Result<()> {
    let mut w = csv_with_header(out, &["ip", "prefix", "strategy", "provenance"])?;
    for row in plan.targets() {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plan_csv<R: Read>(input: R) -> Result<TargetPlan> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let rows = rdr
        .deserialize::<PlannedTarget>()
        .collect::<Result<Vec<_>, _>>()?;
    TargetPlan::from_targets(rows).map_err(|e| Error::format(0, e.to_string()))
}

/// One address per line, for feeding an external scanner.
pub fn write_plan_ip_list<W: Write>(mut out: W, plan: &TargetPlan) -> Result<()> {
    for row in plan.targets() {
        writeln!(out, "{}", row.ip)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_histogram_csv<W: Write>(out: W, histogram: &ResponsivenessHistogram) -> Result<()> {
    let mut w = csv_with_header(
        out,
        &[
            "count",
            "prefixes",
            "addresses",
            "cumulative_prefix_share",
            "cumulative_address_share",
        ],
    )?;
    for bucket in histogram.buckets() {
        w.serialize(bucket)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stability_csv<W: Write>(out: W, points: &[StabilityPoint]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        scan_id: &'a str,
        timestamp: String,
        hrp_address_share_90: Ratio,
        hrp_address_share_95: Ratio,
        hrp_count: u64,
        hrp_count_95: u64,
    }
    let mut w = csv_with_header(
        out,
        &[
            "scan_id",
            "timestamp",
            "hrp_address_share_90",
            "hrp_address_share_95",
            "hrp_count",
            "hrp_count_95",
        ],
    )?;
    for p in points {
        w.serialize(Row {
            scan_id: &p.scan_id,
            timestamp: p
                .timestamp
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            hrp_address_share_90: Ratio(p.hrp_address_share_90),
            hrp_address_share_95: Ratio(p.hrp_address_share_95),
            hrp_count: p.hrp_count,
            hrp_count_95: p.hrp_count_95,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cdf_csv<W: Write>(out: W, cdf: &SuccessCdf) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["success_count", "cdf"])?;
    for (count, value) in cdf.values.iter().enumerate() {
        w.write_record([count.to_string(), fixed::format_ratio(*value)])?;
    }
    w.flush()?;
    Ok(())
}
