use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::error::{Error, Result};

use super::{Mode, PostTrainConfig, RunResult};

/// One accuracy measurement. Column order is the CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: Mode,
    #[serde(rename = "l_S")]
    pub start: usize,
    #[serde(rename = "l_R")]
    pub end: usize,
    pub params: usize,
    pub seed: u64,
    pub epoch: usize,
    pub accuracy: f64,
    /// Embedding name, or `-` for BP rows.
    pub embed: String,
}

/// Mean and sample standard deviation over seeds for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub mode: Mode,
    pub start: usize,
    pub end: usize,
    pub embed: String,
    pub params: usize,
    /// `(epoch, mean, std)`; std is 0 for a single seed.
    pub epochs: Vec<(usize, f64, f64)>,
    pub seeds: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl SweepReport {
    pub fn extend_run(&mut self, cfg: &PostTrainConfig, params: usize, run: &RunResult) {
        let embed = match cfg.mode {
            Mode::Backprop => "-".to_string(),
            Mode::Reconstruction => cfg.embedding.map_or("-", |e| e.name()).to_string(),
        };
        for &(epoch, accuracy) in &run.accuracies {
            self.rows.push(SweepRow {
                mode: cfg.mode,
                start: cfg.start,
                end: cfg.end,
                params,
                seed: run.seed,
                epoch,
                accuracy,
                embed: embed.clone(),
            });
        }
    }

    pub fn merge(&mut self, other: SweepReport) {
        self.rows.extend(other.rows);
    }

    /// Groups rows by configuration in first-appearance order.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut keys: Vec<(Mode, usize, usize, &str, usize)> = Vec::new();
        for r in &self.rows {
            let key = (r.mode, r.start, r.end, r.embed.as_str(), r.params);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(mode, start, end, embed, params)| {
                let rows: Vec<&SweepRow> = self
                    .rows
                    .iter()
                    .filter(|r| (r.mode, r.start, r.end, r.embed.as_str(), r.params) == (mode, start, end, embed, params))
                    .collect();
                let epochs: BTreeSet<usize> = rows.iter().map(|r| r.epoch).collect();
                let seeds: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
                AggregateRow {
                    mode,
                    start,
                    end,
                    embed: embed.to_string(),
                    params,
                    epochs: epochs
                        .into_iter()
                        .map(|e| {
                            let accs: Vec<f64> = rows.iter().filter(|r| r.epoch == e).map(|r| r.accuracy).collect();
                            let (m, s) = mean_std(&accs);
                            (e, m, s)
                        })
                        .collect(),
                    seeds: seeds.len(),
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(csv_error)?;
        }
        finish(w)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<std::result::Result<Vec<SweepRow>, _>>().map_err(csv_error)?;
        Ok(Self { rows })
    }

    /// Columns `mode,l_S,l_R,embed,params,seeds` then `epoch{e}_mean,epoch{e}_std`
    /// for the union of recorded epochs; missing cells are empty.
    pub fn aggregate_csv(&self) -> Result<String> {
        let agg = self.aggregate();
        let epochs: BTreeSet<usize> = agg.iter().flat_map(|a| a.epochs.iter().map(|e| e.0)).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head: Vec<String> = ["mode", "l_S", "l_R", "embed", "params", "seeds"].map(String::from).to_vec();
        for e in &epochs {
            head.push(format!("epoch{e}_mean"));
            head.push(format!("epoch{e}_std"));
        }
        w.write_record(&head).map_err(csv_error)?;
        for a in &agg {
            let mut rec = vec![
                a.mode.name().to_string(),
                a.start.to_string(),
                a.end.to_string(),
                a.embed.clone(),
                a.params.to_string(),
                a.seeds.to_string(),
            ];
            for e in &epochs {
                match a.epochs.iter().find(|x| x.0 == *e) {
                    Some(&(_, m, s)) => {
                        rec.push(format!("{m:.6}"));
                        rec.push(format!("{s:.6}"));
                    }
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&rec).map_err(csv_error)?;
        }
        finish(w)
    }

    /// Writes `<stem>.csv` and `<stem>_agg.csv` next to each other.
    pub fn write(&self, raw: &Path, aggregated: &Path) -> Result<()> {
        write_atomic(raw, self.to_csv()?.as_bytes())?;
        write_atomic(aggregated, self.aggregate_csv()?.as_bytes())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}
