use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{BenchError, MetricRow, Result, Variant};

/// Seed-aggregated metrics of one entity on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub entity: String,
    pub dataset: String,
    pub mae: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub entities: Vec<String>,
    /// `(dataset, metric)` labels, datasets sorted, `mae` before `mse`.
    pub columns: Vec<(String, String)>,
    /// `ranks[e][c]`, 1 = best, ties averaged.
    pub ranks: Vec<Vec<f64>>,
    pub average: Vec<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Entity label: the model name, with `+phy` for the physics variant.
pub fn entity_label(model: &str, variant: Variant) -> String {
    match variant {
        Variant::Baseline => model.to_string(),
        Variant::Phynn => format!("{model}+phy"),
    }
}

/// Median MAE and MSE over seeds for every (entity, dataset).
pub fn aggregate_seeds(rows: &[MetricRow]) -> Vec<RankEntry> {
    let mut groups: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let g = groups
            .entry((entity_label(&r.model, r.variant), r.dataset.clone()))
            .or_default();
        g.0.push(r.mae);
        g.1.push(r.mse);
    }
    groups
        .into_iter()
        .map(|((entity, dataset), (mut mae, mut mse))| RankEntry {
            entity,
            dataset,
            mae: median(&mut mae),
            mse: median(&mut mse),
        })
        .collect()
}

/// Ascending ranks with ties sharing the mean of their positions.
fn rank_column(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let shared = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = shared;
        }
        start = end;
    }
    ranks
}

/// Ranks every entity within each (dataset, metric) column and averages
/// across columns. Every entity needs a value on every dataset.
pub fn average_rank(entries: &[RankEntry]) -> Result<RankTable> {
    let entities: Vec<String> = entries
        .iter()
        .map(|e| e.entity.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let datasets: BTreeSet<String> = entries.iter().map(|e| e.dataset.clone()).collect();
    if entities.is_empty() {
        return Err(BenchError::Invalid("no metric rows to rank".into()));
    }
    let mut cells: BTreeMap<(&str, &str), &RankEntry> = BTreeMap::new();
    for e in entries {
        if cells.insert((&e.entity, &e.dataset), e).is_some() {
            return Err(BenchError::Invalid(format!(
                "duplicate cell {} on {}",
                e.entity, e.dataset
            )));
        }
    }

    let mut columns = Vec::new();
    let mut ranks = vec![Vec::new(); entities.len()];
    for dataset in &datasets {
        for metric in ["mae", "mse"] {
            let values = entities
                .iter()
                .map(|entity| {
                    let cell = cells.get(&(entity.as_str(), dataset.as_str())).ok_or_else(|| {
                        BenchError::MissingCell(format!("{entity} on {dataset} ({metric})"))
                    })?;
                    Ok(if metric == "mae" { cell.mae } else { cell.mse })
                })
                .collect::<Result<Vec<f64>>>()?;
            for (e, r) in rank_column(&values).into_iter().enumerate() {
                ranks[e].push(r);
            }
            columns.push((dataset.clone(), metric.to_string()));
        }
    }
    let average = ranks
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();
    Ok(RankTable {
        entities,
        columns,
        ranks,
        average,
    })
}

impl RankTable {
    pub fn average_of(&self, entity: &str) -> Option<f64> {
        self.entities
            .iter()
            .position(|e| e == entity)
            .map(|i| self.average[i])
    }

    /// Entity indices sorted by average rank, then name.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.entities.len()).collect();
        idx.sort_by(|&a, &b| {
            self.average[a]
                .total_cmp(&self.average[b])
                .then_with(|| self.entities[a].cmp(&self.entities[b]))
        });
        idx
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("entity");
        for (d, m) in &self.columns {
            let _ = write!(out, ",{d}:{m}");
        }
        out.push_str(",average_rank\n");
        for i in self.order() {
            out.push_str(&self.entities[i]);
            for r in &self.ranks[i] {
                let _ = write!(out, ",{r}");
            }
            let _ = writeln!(out, ",{}", self.average[i]);
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| entity |");
        for (d, m) in &self.columns {
            let _ = write!(out, " {d} {m} |");
        }
        out.push_str(" average rank |\n|---|");
        for _ in &self.columns {
            out.push_str("---|");
        }
        out.push_str("---|\n");
        for i in self.order() {
            let _ = write!(out, "| {} |", self.entities[i]);
            for r in &self.ranks[i] {
                let _ = write!(out, " {r} |");
            }
            let _ = writeln!(out, " {:.3} |", self.average[i]);
        }
        out
    }
}
