//! Multi-seed experiment orchestration, CSV emission and bootstrap aggregation.

mod config;
mod run;

pub use config::{online_semdice_defaults, ExperimentConfig, FROZEN_COLLECTOR_ALPHA, Extraction, MdpSpec, Method, PgSettings, QSettings};
pub use run::{
    ablation_label, reference_entropies, run_ablation, run_arms, run_experiment, run_random_data_experiment,
    write_outputs, Arm, Collector, Learner, Reference, RunFailure, RunSummary, ABLATION_ALPHAS,
};

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stats::MetricRecord;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const BOOTSTRAP_SEED: u64 = 0;

/// Worker pool capped by `SEMLAB_THREADS` when set.
pub fn pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SEMLAB_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("SEMLAB_THREADS='{v}' is not a count")))?;
        if n == 0 {
            return Err(Error::Config("SEMLAB_THREADS must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(e.to_string()))
}

pub fn write_records(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MetricRecord::HEADER)?;
    for r in records {
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            r.iteration.to_string(),
            r.episodes.to_string(),
            r.policy_entropy.to_string(),
            r.normalized_policy_entropy.to_string(),
            r.data_entropy.to_string(),
            r.normalized_data_entropy.to_string(),
            r.objective.map(|o| o.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a raw CSV, rejecting any header other than [`MetricRecord::HEADER`].
pub fn read_records(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != MetricRecord::HEADER {
        let mut offending: Vec<String> = header.iter().filter(|h| !MetricRecord::HEADER.contains(&h.as_str())).cloned().collect();
        offending.extend(MetricRecord::HEADER.iter().filter(|h| !header.iter().any(|x| x == *h)).map(|h| format!("missing:{h}")));
        if offending.is_empty() {
            offending.push("column order".into());
        }
        return Err(Error::Schema(offending));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|_| Error::Schema(vec![format!("{}='{}'", MetricRecord::HEADER[i], &row[i])]))
        };
        let int = |i: usize| -> Result<u64> {
            row[i].parse().map_err(|_| Error::Schema(vec![format!("{}='{}'", MetricRecord::HEADER[i], &row[i])]))
        };
        out.push(MetricRecord {
            method: row[0].to_string(),
            seed: int(1)?,
            iteration: int(2)? as usize,
            episodes: int(3)? as usize,
            policy_entropy: num(4)?,
            normalized_policy_entropy: num(5)?,
            data_entropy: num(6)?,
            normalized_data_entropy: num(7)?,
            objective: if row[8].is_empty() { None } else { Some(num(8)?) },
        });
    }
    Ok(out)
}

/// Mean and percentile-bootstrap 95% interval of the mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let pos = q * (resamples - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        means[lo] + (means[hi] - means[lo]) * (pos - lo as f64)
    };
    // Resampled means of identical values can differ from `mean` in the last ulp.
    (mean, quantile(0.025).min(mean), quantile(0.975).max(mean))
}

pub const AGGREGATE_METRICS: [&str; 5] =
    ["policy_entropy", "normalized_policy_entropy", "data_entropy", "normalized_data_entropy", "objective"];

/// Per (method, iteration): seed count, then mean / CI bounds of each metric.
pub fn aggregate(inputs: &[&Path], output: &Path, seed: u64) -> Result<()> {
    let mut groups: BTreeMap<(usize, usize), (String, usize, Vec<MetricRecord>)> = BTreeMap::new();
    let mut method_order: Vec<String> = Vec::new();
    for path in inputs {
        for rec in read_records(path)? {
            let m = match method_order.iter().position(|m| *m == rec.method) {
                Some(i) => i,
                None => {
                    method_order.push(rec.method.clone());
                    method_order.len() - 1
                }
            };
            groups.entry((m, rec.iteration)).or_insert_with(|| (rec.method.clone(), rec.episodes, Vec::new())).2.push(rec);
        }
    }
    let mut w = csv::Writer::from_path(output)?;
    let mut header = vec!["method".to_string(), "iteration".into(), "episodes".into(), "num_seeds".into()];
    for m in AGGREGATE_METRICS {
        header.extend([format!("{m}_mean"), format!("{m}_ci_low"), format!("{m}_ci_high")]);
    }
    w.write_record(&header)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ((_, iteration), (method, episodes, recs)) in &groups {
        let mut row = vec![method.clone(), iteration.to_string(), episodes.to_string(), recs.len().to_string()];
        let columns: [Vec<f64>; 5] = [
            recs.iter().map(|r| r.policy_entropy).collect(),
            recs.iter().map(|r| r.normalized_policy_entropy).collect(),
            recs.iter().map(|r| r.data_entropy).collect(),
            recs.iter().map(|r| r.normalized_data_entropy).collect(),
            recs.iter().filter_map(|r| r.objective).collect(),
        ];
        for values in &columns {
            if values.is_empty() {
                row.extend([String::new(), String::new(), String::new()]);
            } else {
                let (mean, lo, hi) = bootstrap_ci(values, BOOTSTRAP_RESAMPLES, &mut rng);
                row.extend([mean.to_string(), lo.to_string(), hi.to_string()]);
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
