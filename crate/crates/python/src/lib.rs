//! Python bindings for hrpkit.
//!
//! Prefixes and addresses cross the boundary as strings ("192.0.2.0/24",
//! "192.0.2.7"). Library errors surface as `ValueError`, I/O errors as `OSError`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::net::Ipv4Addr;

use chrono::DateTime;
use hrpkit::analytics;
use hrpkit::bgp::{self, RouteEntry, RoutePrefix};
use hrpkit::ingest::{open_scan_source, parse_address_line, LineLayout};
use hrpkit::planner::{self, DnsSeed, SamplePolicy};
use hrpkit::prefix;
use hrpkit::{AddressFormat, Error, ErrorPolicy, ScanMeta, Service, Slash24};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr>(value: &str, what: &str) -> PyResult<T> {
    value
        .parse()
        .map_err(|_| PyValueError::new_err(format!("invalid {what}: {value:?}")))
}

fn service(port: u16, proto: &str) -> PyResult<Service> {
    Ok(Service::new(proto.parse().map_err(py_err)?, port))
}

/// Address on one scan line; None when the line carries no address.
#[pyfunction]
#[pyo3(signature = (line, saddr_column=None))]
fn parse_address(line: &str, saddr_column: Option<usize>) -> Option<String> {
    let layout = saddr_column.map_or(LineLayout::Plain, LineLayout::Column);
    parse_address_line(line, layout).map(|a| a.to_string())
}

#[pyclass(name = "HrpThreshold", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyHrpThreshold(prefix::HrpThreshold);

#[pymethods]
impl PyHrpThreshold {
    #[new]
    #[pyo3(signature = (fraction=0.90))]
    fn new(fraction: f64) -> PyResult<Self> {
        prefix::HrpThreshold::new(fraction)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn fraction(&self) -> f64 {
        self.0.fraction()
    }

    #[getter]
    fn min_count(&self) -> u16 {
        self.0.min_count()
    }

    fn is_hrp(&self, responsive_count: u16) -> bool {
        self.0.is_hrp(responsive_count)
    }

    fn __repr__(&self) -> String {
        format!(
            "HrpThreshold({:.6}, min_count={})",
            self.0.fraction(),
            self.0.min_count()
        )
    }
}

#[pyclass(name = "PrefixStat", frozen, from_py_object)]
#[derive(Clone)]
struct PyPrefixStat(prefix::PrefixStat);

#[pymethods]
impl PyPrefixStat {
    #[getter]
    fn prefix(&self) -> String {
        self.0.prefix.to_string()
    }

    #[getter]
    fn port(&self) -> u16 {
        self.0.service.port
    }

    #[getter]
    fn proto(&self) -> String {
        self.0.service.protocol.to_string()
    }

    #[getter]
    fn responsive_count(&self) -> u16 {
        self.0.responsive_count
    }

    #[getter]
    fn is_hrp(&self) -> bool {
        self.0.is_hrp
    }

    #[getter]
    fn origin_asn(&self) -> Option<u32> {
        self.0.origin_asn
    }

    #[getter]
    fn covering_route(&self) -> Option<String> {
        self.0.covering_route.map(|r| r.to_string())
    }

    fn __repr__(&self) -> String {
        format!(
            "PrefixStat({}, {}, count={}, is_hrp={})",
            self.0.prefix, self.0.service, self.0.responsive_count, self.0.is_hrp
        )
    }
}

/// Per-/24 occupancy of one scan of one service.
#[pyclass(name = "PrefixTable")]
struct PyPrefixTable(prefix::PrefixTable);

#[pymethods]
impl PyPrefixTable {
    #[new]
    #[pyo3(signature = (port, proto="tcp", scan_id="scan"))]
    fn new(port: u16, proto: &str, scan_id: &str) -> PyResult<Self> {
        let meta =
            ScanMeta::new(service(port, proto)?, scan_id, DateTime::UNIX_EPOCH).map_err(py_err)?;
        Ok(Self(prefix::PrefixTable::new(meta)))
    }

    /// Streams a scan file into a new table; returns (table, ingest counters).
    #[staticmethod]
    #[pyo3(signature = (path, port, proto="tcp", format="plain", policy="lenient"))]
    fn from_file<'py>(
        py: Python<'py>,
        path: &str,
        port: u16,
        proto: &str,
        format: &str,
        policy: &str,
    ) -> PyResult<(Self, Bound<'py, PyDict>)> {
        let format: AddressFormat = format.parse().map_err(py_err)?;
        let policy: ErrorPolicy = policy.parse().map_err(py_err)?;
        let meta =
            ScanMeta::new(service(port, proto)?, path, DateTime::UNIX_EPOCH).map_err(py_err)?;
        let file = File::open(path).map_err(|e| py_err(e.into()))?;
        let mut reader = open_scan_source(BufReader::new(file), format, policy);
        let mut table = prefix::PrefixTable::new(meta);
        for addr in reader.by_ref() {
            table.insert(addr.map_err(py_err)?);
        }
        let s = reader.stats();
        let stats = PyDict::new(py);
        stats.set_item("lines_read", s.lines_read)?;
        stats.set_item("addresses_emitted", s.addresses_emitted)?;
        stats.set_item("invalid_lines", s.invalid_lines)?;
        stats.set_item("comment_lines", s.comment_lines)?;
        Ok((Self(table), stats))
    }

    fn insert(&mut self, address: &str) -> PyResult<()> {
        self.0.insert(parse::<Ipv4Addr>(address, "address")?);
        Ok(())
    }

    fn extend(&mut self, addresses: Vec<String>) -> PyResult<()> {
        let parsed = addresses
            .iter()
            .map(|a| parse::<Ipv4Addr>(a, "address"))
            .collect::<PyResult<Vec<_>>>()?;
        self.0.extend(parsed);
        Ok(())
    }

    /// Union with a table of the same scan.
    fn merge(&mut self, other: PyRef<'_, PyPrefixTable>) -> PyResult<()> {
        self.0.merge_from(&other.0).map_err(py_err)
    }

    fn count(&self, prefix: &str) -> PyResult<u16> {
        let prefix: Slash24 = parse(prefix, "/24 prefix")?;
        Ok(self.0.get(prefix).map_or(0, |occ| occ.count()))
    }

    fn prefixes(&self) -> Vec<String> {
        self.0.iter().map(|(p, _)| p.to_string()).collect()
    }

    fn addresses(&self, prefix: &str) -> PyResult<Vec<String>> {
        let prefix: Slash24 = parse(prefix, "/24 prefix")?;
        Ok(self
            .0
            .addresses(prefix)
            .into_iter()
            .map(|a| a.to_string())
            .collect())
    }

    fn total_addresses(&self) -> u64 {
        self.0.total_addresses()
    }

    #[pyo3(signature = (threshold=None))]
    fn classify(&self, threshold: Option<PyHrpThreshold>) -> Vec<PyPrefixStat> {
        let threshold = threshold.map_or_else(prefix::HrpThreshold::default, |t| t.0);
        prefix::classify(&self.0, threshold)
            .into_iter()
            .map(PyPrefixStat)
            .collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// HRP share of all responsive addresses in `stats`.
#[pyfunction]
fn hrp_address_share(stats: Vec<PyPrefixStat>) -> f64 {
    let stats: Vec<_> = stats.into_iter().map(|s| s.0).collect();
    prefix::hrp_address_share(&stats)
}

#[pyclass(name = "RoutingTable")]
struct PyRoutingTable(bgp::RoutingTable);

#[pymethods]
impl PyRoutingTable {
    #[new]
    fn new() -> Self {
        Self(bgp::RoutingTable::new())
    }

    /// Reads `prefix/len,asn` lines.
    #[staticmethod]
    #[pyo3(signature = (path, policy="lenient"))]
    fn load(path: &str, policy: &str) -> PyResult<Self> {
        let policy: ErrorPolicy = policy.parse().map_err(py_err)?;
        let file = File::open(path).map_err(|e| py_err(e.into()))?;
        let (table, _) = bgp::load_route_table(BufReader::new(file), policy).map_err(py_err)?;
        Ok(Self(table))
    }

    /// False when the prefix was already announced; the first origin stays.
    fn insert(&mut self, prefix: &str, origin_asn: u32) -> PyResult<bool> {
        let prefix: RoutePrefix = parse(prefix, "route prefix")?;
        Ok(matches!(
            self.0.insert(RouteEntry { prefix, origin_asn }),
            bgp::InsertOutcome::Inserted
        ))
    }

    /// Most specific covering route as (prefix, origin_asn).
    fn lookup(&self, address: &str) -> PyResult<Option<(String, u32)>> {
        let addr: Ipv4Addr = parse(address, "address")?;
        Ok(self
            .0
            .lookup(addr)
            .map(|e| (e.prefix.to_string(), e.origin_asn)))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

fn prefix_set(prefixes: &[String]) -> PyResult<BTreeSet<Slash24>> {
    prefixes.iter().map(|p| parse(p, "/24 prefix")).collect()
}

/// Targets as (ip, prefix, strategy, provenance) rows in address order.
#[pyfunction]
#[pyo3(signature = (table, hrps, seeds=Vec::new(), k=10, rng_seed=0))]
fn build_plan(
    table: PyRef<'_, PyPrefixTable>,
    hrps: Vec<String>,
    seeds: Vec<(String, u32)>,
    k: u16,
    rng_seed: u64,
) -> PyResult<Vec<(String, String, String, String)>> {
    let hrps = prefix_set(&hrps)?;
    let seeds = seeds
        .iter()
        .map(|(ip, name_count)| {
            Ok(DnsSeed {
                address: parse(ip, "address")?,
                name_count: *name_count,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let policy = SamplePolicy {
        k,
        rng_seed,
        ..Default::default()
    };
    let plan = planner::build_plan(&table.0, &hrps, &seeds, &policy).map_err(py_err)?;
    Ok(plan
        .targets()
        .map(|t| {
            (
                t.ip.to_string(),
                t.prefix.to_string(),
                t.strategy.to_string(),
                t.provenance.to_string(),
            )
        })
        .collect())
}

/// Prefixes seen as HRPs from only one of two vantage points.
#[pyfunction]
fn vantage_diff<'py>(
    py: Python<'py>,
    a: Vec<String>,
    b: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let diff = analytics::vantage_diff(&prefix_set(&a)?, &prefix_set(&b)?);
    let strings = |set: &BTreeSet<Slash24>| set.iter().map(|p| p.to_string()).collect::<Vec<_>>();
    let out = PyDict::new(py);
    out.set_item("only_a", strings(&diff.only_a))?;
    out.set_item("only_b", strings(&diff.only_b))?;
    out.set_item("both", strings(&diff.both))?;
    out.set_item("divergence", diff.divergence)?;
    Ok(out)
}

#[pymodule]
fn hrpkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHrpThreshold>()?;
    m.add_class::<PyPrefixStat>()?;
    m.add_class::<PyPrefixTable>()?;
    m.add_class::<PyRoutingTable>()?;
    m.add_function(wrap_pyfunction!(parse_address, m)?)?;
    m.add_function(wrap_pyfunction!(hrp_address_share, m)?)?;
    m.add_function(wrap_pyfunction!(build_plan, m)?)?;
    m.add_function(wrap_pyfunction!(vantage_diff, m)?)?;
    Ok(())
}
