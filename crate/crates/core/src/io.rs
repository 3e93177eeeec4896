//! CSV ingestion and analysis reports.
//!
//! Input is long format, one row per observation, with header
//! `pair_id,unit_id,treatment,outcome`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{to_rows, validate_dataset, Assignment, ExperimentData, RawRow};
use crate::error::{Error, Result};
use crate::estimators::{diff_in_means, fe_estimate, ModelKind};
use crate::inference::{t_test, Reference, TestResult};
use crate::variance::{fe_ratio_decomposition, Clustering, Estimator, VarianceSet};

pub const INPUT_HEADER: [&str; 4] = ["pair_id", "unit_id", "treatment", "outcome"];

pub fn read_csv(path: impl AsRef<Path>) -> Result<(ExperimentData, Assignment)> {
    parse_csv(File::open(path)?)
}

/// Parses CSV rows and validates them. Parse errors carry the 1-based line
/// number of the offending record.
pub fn parse_csv<R: Read>(reader: R) -> Result<(ExperimentData, Assignment)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_error(1, e))?.clone();
    let mut columns = [0usize; 4];
    for (slot, name) in columns.iter_mut().zip(INPUT_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column `{name}` in header"),
            })?;
    }

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(columns[i]).unwrap_or("");
        let treatment = field(2).parse::<i64>().map_err(|_| Error::Parse {
            line,
            message: format!("treatment `{}` is not an integer", field(2)),
        })?;
        let outcome = field(3).parse::<f64>().map_err(|_| Error::Parse {
            line,
            message: format!("outcome `{}` is not a number", field(3)),
        })?;
        rows.push(RawRow {
            pair_id: field(0).to_string(),
            unit_id: field(1).to_string(),
            treatment,
            outcome,
        });
    }
    validate_dataset(&rows)
}

fn parse_error(line: u64, e: csv::Error) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Writes data and assignment in the input format, rows in canonical order.
pub fn write_csv<W: Write>(
    data: &ExperimentData,
    assignment: &Assignment,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(INPUT_HEADER)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for row in to_rows(data, assignment) {
        w.write_record([
            row.pair_id,
            row.unit_id,
            row.treatment.to_string(),
            row.outcome.to_string(),
        ])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Which tests an analysis reports.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub clusterings: Vec<Clustering>,
    pub models: Vec<ModelKind>,
    pub level: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            clusterings: vec![Clustering::Block, Clustering::Unit],
            models: vec![ModelKind::NoFe, ModelKind::Fe],
            level: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_obs: usize,
    pub n_blocks: usize,
    pub n_units: usize,
    /// Number of blocks by units per block.
    pub units_per_block: BTreeMap<usize, usize>,
    pub min_obs_per_unit: usize,
    pub max_obs_per_unit: usize,
    /// Largest within-block ratio of unit sizes.
    pub max_size_ratio: f64,
    pub paired: bool,
    pub balanced_within_pairs: bool,
}

impl DatasetSummary {
    pub fn new(data: &ExperimentData, assignment: &Assignment) -> Self {
        let mut units_per_block = BTreeMap::new();
        let mut max_size_ratio: f64 = 1.0;
        for pair in data.pairs() {
            *units_per_block.entry(pair.units().len()).or_insert(0) += 1;
            let lo = pair.units().iter().map(|u| u.len()).min().unwrap_or(1);
            let hi = pair.units().iter().map(|u| u.len()).max().unwrap_or(1);
            max_size_ratio = max_size_ratio.max(hi as f64 / lo as f64);
        }
        let sizes = data
            .pairs()
            .iter()
            .flat_map(|p| p.units().iter().map(|u| u.len()));
        Self {
            n_obs: data.n_total(),
            n_blocks: data.n_pairs(),
            n_units: data.n_units(),
            units_per_block,
            min_obs_per_unit: sizes.clone().min().unwrap_or(0),
            max_obs_per_unit: sizes.max().unwrap_or(0),
            max_size_ratio,
            paired: assignment.check_paired(data).is_ok(),
            balanced_within_pairs: data.is_balanced_within_pairs(),
        }
    }
}

/// Unit- over pair-clustered variance ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub ucve_over_pcve_nofe: Option<f64>,
    pub ucve_over_pcve_fe: Option<f64>,
    /// Range of the within-pair share terms `m_p` (paired designs only).
    pub m_p_min: Option<f64>,
    pub m_p_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedTest {
    pub clustering: Clustering,
    pub model: ModelKind,
    pub estimate: f64,
    pub variance: f64,
    pub standard_error: f64,
    /// `None` when the variance is zero and no statistic exists.
    pub test: Option<TestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub dataset: DatasetSummary,
    pub tau_hat: f64,
    pub tau_hat_fe: f64,
    pub variances: VarianceSet,
    pub ratios: RatioSummary,
    pub tests: Vec<ReportedTest>,
    pub level: f64,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

impl AnalysisReport {
    pub fn build(
        data: &ExperimentData,
        assignment: &Assignment,
        options: &AnalysisOptions,
    ) -> Result<Self> {
        let nofe = diff_in_means(data, assignment)?;
        let fe = fe_estimate(data, assignment)?;
        let variances = VarianceSet::from_fits(data, assignment, &nofe, &fe)?;

        let decomposition = if assignment.check_paired(data).is_ok() {
            match fe_ratio_decomposition(data, assignment, &fe) {
                Ok(d) => Some(d),
                Err(Error::ZeroResiduals) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let ratios = RatioSummary {
            ucve_over_pcve_nofe: ratio(variances.ucve_nofe, variances.pcve_nofe),
            ucve_over_pcve_fe: ratio(variances.ucve_fe, variances.pcve_fe),
            m_p_min: decomposition
                .as_ref()
                .map(|d| d.m_p.iter().copied().fold(f64::INFINITY, f64::min)),
            m_p_max: decomposition
                .as_ref()
                .map(|d| d.m_p.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        };

        let mut tests = Vec::new();
        for &model in &options.models {
            for &clustering in &options.clusterings {
                let est = Estimator::new(clustering, model)?;
                let estimate = variances.estimate(est);
                let variance = variances.get(est);
                let test = match t_test(
                    estimate,
                    variance,
                    0.0,
                    options.level,
                    Reference::StandardNormal,
                ) {
                    Ok(r) => Some(r),
                    Err(Error::ZeroVariance) => None,
                    Err(e) => return Err(e),
                };
                tests.push(ReportedTest {
                    clustering,
                    model,
                    estimate,
                    variance,
                    standard_error: variance.sqrt(),
                    test,
                });
            }
        }

        Ok(Self {
            dataset: DatasetSummary::new(data, assignment),
            tau_hat: nofe.tau_hat,
            tau_hat_fe: fe.tau_hat,
            variances,
            ratios,
            tests,
            level: options.level,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let d = &self.dataset;
        let block = if d.paired { "pair" } else { "stratum" };
        let mut s = String::new();
        let _ = writeln!(s, "observations      {}", d.n_obs);
        let _ = writeln!(s, "{:<17} {}", format!("{block}s"), d.n_blocks);
        let _ = writeln!(s, "units             {}", d.n_units);
        let sizes: Vec<String> = d
            .units_per_block
            .iter()
            .map(|(g, count)| format!("{count}x{g}"))
            .collect();
        let _ = writeln!(s, "units per {block:<7} {}", sizes.join(" "));
        let _ = writeln!(
            s,
            "obs per unit      {}..{} (max within-{block} ratio {:.4})",
            d.min_obs_per_unit, d.max_obs_per_unit, d.max_size_ratio
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "tau_hat           {:.6}", self.tau_hat);
        let _ = writeln!(s, "tau_hat_fe        {:.6}", self.tau_hat_fe);
        let _ = writeln!(s);
        let _ = writeln!(s, "variance          raw           n/(n-K)       c/(c-1)");
        for e in Estimator::ALL {
            let f = self.variances.dof_factors[&e];
            let _ = writeln!(
                s,
                "{:<17} {:<13.6e} {:<13} {}",
                e.as_str(),
                self.variances.get(e),
                fmt_opt(f.n_over_n_minus_k, 6),
                fmt_opt(f.clusters_over_clusters_minus_one, 6),
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "ucve/pcve no FE   {}",
            fmt_opt(self.ratios.ucve_over_pcve_nofe, 6)
        );
        let _ = writeln!(
            s,
            "ucve/pcve FE      {}",
            fmt_opt(self.ratios.ucve_over_pcve_fe, 6)
        );
        if let (Some(lo), Some(hi)) = (self.ratios.m_p_min, self.ratios.m_p_max) {
            let _ = writeln!(s, "m_p range         [{lo:.6}, {hi:.6}]");
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "clustering  model  estimate     s.e.         t          p          reject@{}",
            self.level
        );
        for t in &self.tests {
            let clustering = match t.clustering {
                Clustering::Block => block,
                other => other.as_str(),
            };
            let (tstat, p, reject) = match &t.test {
                Some(r) => (
                    format!("{:.4}", r.t_stat),
                    format!("{:.4}", r.p_value),
                    if r.reject { "yes" } else { "no" },
                ),
                None => ("-".into(), "-".into(), "-"),
            };
            let _ = writeln!(
                s,
                "{:<11} {:<6} {:<12.6} {:<12.6} {:<10} {:<10} {}",
                clustering,
                t.model.as_str(),
                t.estimate,
                t.standard_error,
                tstat,
                p,
                reject
            );
        }
        s
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) => format!("{x:.digits$}"),
        None => "-".into(),
    }
}
