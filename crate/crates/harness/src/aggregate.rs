//! Seed-level summaries at matched cost checkpoints.

use std::collections::BTreeMap;

use std::io::Write;

use csv::{Terminator, WriterBuilder};

use crate::error::{io_err, Result};
use crate::record::RunRecord;

/// Rows sharing a key differ only by seed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub experiment: String,
    pub method: String,
    pub n: usize,
    pub g: u32,
    pub metric_name: String,
    /// The checkpoint, as the exact bit pattern of the cumulative cost.
    pub cost_bits: u64,
}

impl GroupKey {
    pub fn of(r: &RunRecord) -> Self {
        Self {
            experiment: r.experiment.clone(),
            method: r.method.clone(),
            n: r.n,
            g: r.g,
            metric_name: r.metric_name.clone(),
            cost_bits: r.cumulative_cost.to_bits(),
        }
    }

    pub fn cumulative_cost(&self) -> f64 {
        f64::from_bits(self.cost_bits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub key: GroupKey,
    pub cumulative_cost: f64,
    pub seeds: usize,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(seeds)`.
    pub stderr: f64,
    pub median: f64,
}

/// Partitions rows by [`GroupKey`].
pub fn group(rows: &[RunRecord]) -> BTreeMap<GroupKey, Vec<f64>> {
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry(GroupKey::of(r)).or_default().push(r.metric_value);
    }
    groups
}

/// Mean computed about the first value, so a constant sample returns that
/// value exactly.
pub fn mean(xs: &[f64]) -> f64 {
    let x0 = xs[0];
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

pub fn stderr(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Median with the two middle values averaged for even counts.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Summaries of every group holding at least two seeds. Smaller groups
/// are returned separately so callers can warn about them.
pub fn aggregate(rows: &[RunRecord]) -> (Vec<Summary>, Vec<GroupKey>) {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (key, values) in group(rows) {
        if values.len() < 2 {
            skipped.push(key);
            continue;
        }
        out.push(Summary {
            cumulative_cost: key.cumulative_cost(),
            seeds: values.len(),
            mean: mean(&values),
            stderr: stderr(&values),
            median: median(&values),
            key,
        });
    }
    (out, skipped)
}

/// Writes summaries as CSV with header
/// `experiment,method,N,g,metric_name,cumulative_cost,seeds,mean,stderr,median`.
pub fn write_summaries<W: Write>(w: W, rows: &[Summary]) -> Result<()> {
    let mut out = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(w);
    out.write_record([
        "experiment",
        "method",
        "N",
        "g",
        "metric_name",
        "cumulative_cost",
        "seeds",
        "mean",
        "stderr",
        "median",
    ])?;
    for s in rows {
        let k = &s.key;
        out.serialize((
            &k.experiment,
            &k.method,
            k.n,
            k.g,
            &k.metric_name,
            s.cumulative_cost,
            s.seeds,
            s.mean,
            s.stderr,
            s.median,
        ))?;
    }
    out.flush().map_err(io_err("<summary output>"))
}
