//! On-disk formats and data-handling utilities used by the CLI.
//!
//! * predictions: a comma-separated table `sample_id,<source...>[,<target>]`
//!   plus a JSON manifest describing the loss and score space;
//! * weights, resample plans, world dumps and synth specs: JSON.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so
//! save/load cycles are lossless. Writes go to a temporary sibling file that
//! is then renamed over the destination.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Binomial, Distribution};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{LossKind, PredictionMatrix};
use crate::simplex::{MixtureWeights, INGEST_TOL};
use crate::solver::SolverConfig;
use crate::synthworld::{rng_from_seed, WorldSpec};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSpace {
    /// Natural-log scores.
    #[default]
    Log,
    /// Probabilities or densities (CE), raw predictions (MSE).
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionsManifest {
    pub loss_kind: LossKind,
    #[serde(default)]
    pub score_space: ScoreSpace,
    pub sources: Vec<String>,
    /// Name of the target column; required for `mse`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_column: Option<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| format_err(path, "not a file path"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Reads and validates a predictions table against its manifest.
pub fn load_predictions(path: &Path, manifest_path: &Path) -> Result<PredictionMatrix> {
    let manifest: PredictionsManifest = read_json(manifest_path)?;
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_predictions(&text, &manifest, &path.display().to_string())
}

/// Parses the table text; `origin` labels error locations.
pub fn parse_predictions(text: &str, manifest: &PredictionsManifest, origin: &str) -> Result<PredictionMatrix> {
    let parse_err = |line: usize, column: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        column,
        message,
    };
    let kind = manifest.loss_kind;
    if kind == LossKind::Mse && manifest.score_space == ScoreSpace::Log {
        return Err(parse_err(0, 0, "mse predictions must use the linear score space".into()));
    }
    let target_col = match (kind, &manifest.target_column) {
        (LossKind::Mse, Some(t)) => Some(t.clone()),
        (LossKind::Mse, None) => Some("y".to_string()),
        (_, Some(_)) => return Err(parse_err(0, 0, "target column is only valid for mse".into())),
        (_, None) => None,
    };
    let p = manifest.sources.len();
    if p == 0 {
        return Err(Error::NoSources);
    }
    let width = 1 + p + usize::from(target_col.is_some());

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, 0, e.to_string()))?
        .clone();
    let mut expected: Vec<&str> = vec!["sample_id"];
    expected.extend(manifest.sources.iter().map(String::as_str));
    if let Some(t) = &target_col {
        expected.push(t);
    }
    if header.len() != width {
        return Err(parse_err(
            1,
            0,
            format!("header has {} columns, manifest implies {width}", header.len()),
        ));
    }
    for (col, (got, want)) in header.iter().zip(&expected).enumerate() {
        if got != *want {
            return Err(parse_err(1, col + 1, format!("header `{got}` does not match manifest `{want}`")));
        }
    }

    let mut scores = Vec::new();
    let mut targets = Vec::new();
    let mut sample_ids: Vec<String> = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, 0, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width {
            return Err(parse_err(line, 0, format!("expected {width} fields, found {}", record.len())));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(parse_err(line, 1, "empty sample_id".into()));
        }
        if let Some(prev) = seen.insert(id.clone(), line) {
            return Err(parse_err(line, 1, format!("duplicate sample_id `{id}` (first on line {prev})")));
        }
        for col in 1..width {
            let field = &record[col];
            let value: f64 = field
                .parse()
                .map_err(|_| parse_err(line, col + 1, format!("non-numeric field `{field}`")))?;
            if !value.is_finite() {
                return Err(parse_err(line, col + 1, format!("non-finite field `{field}`")));
            }
            if col <= p {
                let score = if kind.is_ce() && manifest.score_space == ScoreSpace::Linear {
                    if !(value > 0.0) {
                        return Err(parse_err(
                            line,
                            col + 1,
                            format!(
                                "linear CE score must be > 0, got {value} (sample `{id}`, source `{}`)",
                                manifest.sources[col - 1]
                            ),
                        ));
                    }
                    value.ln()
                } else {
                    value
                };
                scores.push(score);
            } else {
                targets.push(value);
            }
        }
        sample_ids.push(id);
    }
    if sample_ids.is_empty() {
        return Err(Error::NoSamples);
    }
    let targets = target_col.map(|_| targets);
    PredictionMatrix::new(kind, scores, targets, sample_ids, manifest.sources.clone())
}

/// Writes a matrix as table + manifest. CE scores are written in log space.
pub fn write_predictions(m: &PredictionMatrix, path: &Path, manifest_path: &Path) -> Result<()> {
    if m.row_weights().is_some() {
        return Err(format_err(path, "row-weighted matrices have no table representation"));
    }
    let manifest = PredictionsManifest {
        loss_kind: m.loss_kind(),
        score_space: if m.loss_kind().is_ce() {
            ScoreSpace::Log
        } else {
            ScoreSpace::Linear
        },
        sources: m.source_ids().to_vec(),
        target_column: m.targets().map(|_| "y".to_string()),
    };
    write_atomic(path, &predictions_table(m, &manifest))?;
    write_json(manifest_path, &manifest)
}

fn predictions_table(m: &PredictionMatrix, manifest: &PredictionsManifest) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sample_id".to_string()];
    header.extend(manifest.sources.iter().cloned());
    if let Some(t) = &manifest.target_column {
        header.push(t.clone());
    }
    w.write_record(&header).expect("in-memory write");
    for (i, row) in m.rows().enumerate() {
        let mut rec = vec![m.sample_ids()[i].clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        if let Some(y) = m.targets() {
            rec.push(y[i].to_string());
        }
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Default manifest location: `manifest.json` next to the predictions table.
pub fn default_manifest_path(predictions: &Path) -> PathBuf {
    predictions
        .parent()
        .map_or_else(|| PathBuf::from("manifest.json"), |d| d.join("manifest.json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverEcho {
    pub eta: f64,
    pub steps: usize,
    pub seed: u64,
}

impl From<&SolverConfig> for SolverEcho {
    fn from(c: &SolverConfig) -> Self {
        Self {
            eta: c.eta,
            steps: c.steps,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub tool_version: String,
    pub method: String,
    pub sources: Vec<String>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_kind: Option<LossKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverEcho>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Objective on the data the weights were selected with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout_objective: Option<f64>,
}

impl WeightsFile {
    pub fn new(method: &str, weights: &MixtureWeights) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            method: method.to_string(),
            sources: weights.source_ids().to_vec(),
            weights: weights.values().to_vec(),
            loss_kind: None,
            solver: None,
            seed: None,
            objective: None,
            heldout_objective: None,
        }
    }

    pub fn mixture(&self) -> Result<MixtureWeights> {
        MixtureWeights::new(&self.sources, self.weights.clone(), INGEST_TOL)
    }
}

pub fn save_weights(path: &Path, file: &WeightsFile) -> Result<()> {
    write_json(path, file)
}

/// Loads a weights file; the weights must be a simplex point (tolerance 1e-6).
pub fn load_weights(path: &Path) -> Result<(WeightsFile, MixtureWeights)> {
    let file: WeightsFile = read_json(path)?;
    let w = file.mixture().map_err(|e| format_err(path, e.to_string()))?;
    Ok((file, w))
}

/// Seeded shuffle, then the first `ceil(N * fraction)` rows train.
pub fn split_target(m: &PredictionMatrix, train_fraction: f64, seed: u64) -> Result<(PredictionMatrix, PredictionMatrix)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let n = m.n_samples();
    if n < 2 {
        return Err(Error::invalid("need at least 2 samples to split"));
    }
    // guard against 0.8 * 10 landing a hair above 8
    let n_train = (n as f64 * train_fraction - 1e-9).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::invalid(format!(
            "split of {n} samples at {train_fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    Ok((m.select_rows(&order[..n_train])?, m.select_rows(&order[n_train..])?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplePolicy {
    /// Largest-remainder apportionment.
    Deterministic,
    /// Seeded multinomial draw.
    Multinomial,
}

impl std::str::FromStr for ResamplePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "multinomial" => Ok(Self::Multinomial),
            other => Err(Error::invalid(format!("unknown policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub source: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub budget: u64,
    pub policy: ResamplePolicy,
    pub seed: u64,
    pub allocations: Vec<Allocation>,
}

impl ResamplePlan {
    pub fn counts(&self) -> Vec<u64> {
        self.allocations.iter().map(|a| a.count).collect()
    }
}

/// Turns weights into integer per-source counts that sum to `budget`.
pub fn resample_plan(weights: &MixtureWeights, budget: u64, policy: ResamplePolicy, seed: u64) -> Result<ResamplePlan> {
    if budget == 0 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    let counts = match policy {
        ResamplePolicy::Deterministic => largest_remainder(weights.values(), budget),
        ResamplePolicy::Multinomial => multinomial_counts(weights.values(), budget, seed)?,
    };
    Ok(ResamplePlan {
        budget,
        policy,
        seed,
        allocations: weights
            .source_ids()
            .iter()
            .zip(counts)
            .map(|(s, count)| Allocation {
                source: s.clone(),
                count,
            })
            .collect(),
    })
}

/// Hamilton apportionment: floor each quota, then hand the leftover units to
/// the largest fractional remainders (lower index first on ties).
pub fn largest_remainder(weights: &[f64], budget: u64) -> Vec<u64> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * budget as f64).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    if assigned > budget {
        // only reachable through rounding in the quotas; trim from the largest
        let mut excess = assigned - budget;
        while excess > 0 {
            let i = (0..counts.len()).max_by_key(|&i| counts[i]).expect("nonempty");
            counts[i] -= 1;
            excess -= 1;
        }
        return counts;
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let leftover = (budget - assigned) as usize;
    for &i in order.iter().cycle().take(leftover) {
        counts[i] += 1;
    }
    counts
}

fn multinomial_counts(weights: &[f64], budget: u64, seed: u64) -> Result<Vec<u64>> {
    let mut rng = rng_from_seed(seed);
    let mut remaining = budget;
    let mut mass_left = 1.0f64;
    let mut counts = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        if i + 1 == weights.len() {
            counts.push(remaining);
            break;
        }
        let p = if mass_left > 0.0 { (w / mass_left).clamp(0.0, 1.0) } else { 0.0 };
        let c = if remaining == 0 || p == 0.0 {
            0
        } else {
            Binomial::new(remaining, p)
                .map_err(|e| Error::invalid(format!("binomial draw failed: {e}")))?
                .sample(&mut rng)
        };
        counts.push(c);
        remaining -= c;
        mass_left -= w;
    }
    Ok(counts)
}

/// Proxy models used by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxySpec {
    /// The true source pmfs.
    Exact,
    /// Add-`alpha` smoothed empirical pmfs from `samples` draws per source.
    Trained { samples: usize, alpha: f64 },
}

/// Input of the `synth` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub world: WorldSpec,
    pub target_samples: usize,
    #[serde(default = "exact_proxies")]
    pub proxies: ProxySpec,
}

fn exact_proxies() -> ProxySpec {
    ProxySpec::Exact
}
