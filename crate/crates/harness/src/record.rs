//! CSV persistence of run records.
//!
//! Files are UTF-8 with LF line endings and a mandatory header row.
//! Floats are written in shortest round-trip form, so reading a file and
//! writing it back reproduces it byte for byte.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, Terminator, WriterBuilder};
use serde::{Deserialize, Serialize};
use thinned_mfld::lv::Dataset;

use crate::error::{io_err, HarnessError, Result};

pub const HEADER: [&str; 12] = [
    "run_id",
    "experiment",
    "method",
    "g",
    "N",
    "T",
    "seed",
    "iteration",
    "cumulative_cost",
    "wallclock_s",
    "metric_name",
    "metric_value",
];

/// Metric name of the row appended when a run fails part-way.
pub const FAILURE_METRIC: &str = "failed";

/// One metric value at one checkpoint of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub experiment: String,
    pub method: String,
    pub g: u32,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: u64,
    pub seed: u64,
    pub iteration: u64,
    pub cumulative_cost: f64,
    pub wallclock_s: f64,
    pub metric_name: String,
    pub metric_value: f64,
}

impl RunRecord {
    pub fn is_failure(&self) -> bool {
        self.metric_name == FAILURE_METRIC
    }
}

/// Streaming writer that emits the header immediately.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl RecordWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = File::create(path).map_err(io_err(path))?;
        Self::new(BufWriter::new(file))
    }
}

impl<W: Write> RecordWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut inner = WriterBuilder::new()
            .has_headers(false)
            .terminator(Terminator::Any(b'\n'))
            .from_writer(w);
        inner.write_record(HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, r: &RunRecord) -> Result<()> {
        self.inner.serialize(r)?;
        Ok(())
    }

    pub fn write_all<'a>(&mut self, rows: impl IntoIterator<Item = &'a RunRecord>) -> Result<()> {
        rows.into_iter().try_for_each(|r| self.write(r))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(io_err("<csv output>"))
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| HarnessError::Config(format!("could not finish CSV output: {e}")))
    }
}

/// Serializes `rows` (with header) to a string.
pub fn to_csv_string(rows: &[RunRecord]) -> Result<String> {
    let mut w = RecordWriter::new(Vec::new())?;
    w.write_all(rows)?;
    let bytes = w.into_inner()?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Config(format!("CSV output is not UTF-8: {e}")))
}

/// Reads records, rejecting any header other than the run-record schema.
pub fn read_records_from<R: Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut reader = ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = reader.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(HarnessError::Config(format!(
            "CSV header {:?} does not match the run-record schema {:?}",
            header.iter().collect::<Vec<_>>(),
            HEADER
        )));
    }
    reader
        .deserialize()
        .map(|row| row.map_err(HarnessError::from))
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = File::open(path).map_err(io_err(path))?;
    read_records_from(file)
}

/// Writes observations as `tau,y1,y2`.
pub fn write_dataset<W: Write>(w: W, data: &Dataset<f64>) -> Result<()> {
    let mut out = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(w);
    out.write_record(["tau", "y1", "y2"])?;
    for (tau, y) in data.tau.iter().zip(&data.y) {
        out.serialize((tau, y[0], y[1]))?;
    }
    out.flush().map_err(io_err("<dataset output>"))
}
