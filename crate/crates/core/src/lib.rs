//! Detection and analysis of highly responsive prefixes (HRPs) in IPv4
//! port-scan output, and HRP-aware planning of application-layer scans.
//!
//! The pipeline mirrors the `hrpkit` command line:
//!
//! * [`ingest`] streams addresses out of scan dumps,
//! * [`prefix`] aggregates them into /24 bitmaps and classifies HRPs,
//! * [`bgp`] attaches origin AS information,
//! * [`analytics`] compares HRP sets between scans,
//! * [`applayer`] joins application-layer outcomes with the classification,
//! * [`planner`] builds and evaluates sampled target lists,
//! * [`formats`] reads and writes the csv / json-lines interchange files.

pub mod analytics;
pub mod applayer;
pub mod bgp;
pub mod error;
pub mod fixed;
pub mod formats;
pub mod ingest;
pub mod planner;
pub mod prefix;

pub use error::{Error, Result};
pub use ingest::{AddressFormat, ErrorPolicy, IngestStats, Protocol, ScanMeta, Service};
pub use prefix::{ClassifiedScan, HrpThreshold, Occupancy, PrefixStat, PrefixTable, Slash24};
