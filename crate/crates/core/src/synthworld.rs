//! Synthetic source/target distributions whose Bayes-optimal models are
//! known exactly.
//!
//! In a categorical world the Bayes-optimal unconditional model of a source
//! is its pmf, and the model trained on a `w`-mixture of sources (in the
//! unrestricted class) is the mixture pmf. The bi-level mixing objective
//! therefore has the closed form `H(target, sum_p w_p source_p)`, which
//! [`dm_oracle`] evaluates.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::MixtureWeights;

pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sources and target as pmfs over symbols `0..alphabet_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalWorld {
    pub source_ids: Vec<String>,
    pub sources: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl CategoricalWorld {
    pub fn new(source_ids: Vec<String>, sources: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::NoSources);
        }
        if source_ids.len() != sources.len() {
            return Err(Error::LengthMismatch {
                what: "source ids",
                expected: sources.len(),
                found: source_ids.len(),
            });
        }
        let v = target.len();
        if v < 2 {
            return Err(Error::invalid("alphabet size must be at least 2"));
        }
        check_pmf(&target, "target")?;
        for (id, s) in source_ids.iter().zip(&sources) {
            if s.len() != v {
                return Err(Error::LengthMismatch {
                    what: "source pmf",
                    expected: v,
                    found: s.len(),
                });
            }
            check_pmf(s, id)?;
        }
        // duplicate ids are caught here
        MixtureWeights::uniform(&source_ids)?;
        Ok(Self {
            source_ids,
            sources,
            target,
        })
    }

    /// Convenience constructor with ids `source_0..`.
    pub fn from_pmfs(sources: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self> {
        let ids = default_source_ids(sources.len());
        Self::new(ids, sources, target)
    }

    pub fn alphabet_size(&self) -> usize {
        self.target.len()
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    /// `sum_p w_p source_p`.
    pub fn mixture_pmf(&self, weights: &MixtureWeights) -> Result<Vec<f64>> {
        mix_pmfs(&self.sources, weights)
    }
}

pub(crate) fn default_source_ids(p: usize) -> Vec<String> {
    (0..p).map(|i| format!("source_{i}")).collect()
}

fn check_pmf(pmf: &[f64], name: &str) -> Result<()> {
    if pmf.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::invalid(format!("pmf `{name}` has a negative or non-finite entry")));
    }
    let sum: f64 = pmf.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("pmf `{name}` sums to {sum}, not 1")));
    }
    Ok(())
}

/// How the target of a generated world relates to its sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    /// Target is exactly `sum_p w_p source_p`.
    Mixture(Vec<f64>),
    /// Target is drawn from the same Dirichlet as the sources.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub alphabet_size: usize,
    pub num_sources: usize,
    pub concentration: f64,
    pub target: TargetSpec,
}

/// Draws source pmfs from a symmetric Dirichlet, deterministically per seed.
pub fn gen_world(spec: &WorldSpec, seed: u64) -> Result<CategoricalWorld> {
    if spec.alphabet_size < 2 {
        return Err(Error::invalid("alphabet size must be at least 2"));
    }
    if spec.num_sources < 1 {
        return Err(Error::NoSources);
    }
    if !(spec.concentration > 0.0) || !spec.concentration.is_finite() {
        return Err(Error::invalid("concentration must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let sources: Vec<Vec<f64>> = (0..spec.num_sources)
        .map(|_| dirichlet(spec.alphabet_size, spec.concentration, &mut rng))
        .collect();
    let target = match &spec.target {
        TargetSpec::Mixture(w) => {
            let weights = MixtureWeights::new(
                &default_source_ids(spec.num_sources),
                w.clone(),
                crate::simplex::INGEST_TOL,
            )?;
            mix_pmfs(&sources, &weights)?
        }
        TargetSpec::Independent => dirichlet(spec.alphabet_size, spec.concentration, &mut rng),
    };
    CategoricalWorld::from_pmfs(sources, target)
}

/// Symmetric Dirichlet draw, via normalized Gamma variates.
pub fn dirichlet<R: Rng + ?Sized>(dim: usize, concentration: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    loop {
        let draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return normalize(draws, total);
        }
    }
}

fn normalize(v: Vec<f64>, total: f64) -> Vec<f64> {
    let out: Vec<f64> = v.into_iter().map(|x| x / total).collect();
    // second pass brings the sum to within an ulp or two of 1
    let s: f64 = out.iter().sum();
    out.into_iter().map(|x| x / s).collect()
}

fn mix_pmfs(pmfs: &[Vec<f64>], weights: &MixtureWeights) -> Result<Vec<f64>> {
    if pmfs.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "mixture weights",
            expected: pmfs.len(),
            found: weights.len(),
        });
    }
    let v = pmfs[0].len();
    let mut out = vec![0.0; v];
    for (pmf, &w) in pmfs.iter().zip(weights.values()) {
        for (o, &x) in out.iter_mut().zip(pmf) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// `n` i.i.d. symbols from `pmf`.
pub fn sample_pmf<R: Rng + ?Sized>(pmf: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(pmf).map_err(|e| Error::invalid(format!("cannot sample pmf: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Target sample `D_t`.
pub fn sample_target(world: &CategoricalWorld, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    sample_pmf(&world.target, n, &mut rng_from_seed(seed))
}

/// Training sample `D_p` from one source.
pub fn sample_source(world: &CategoricalWorld, source: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    let pmf = world
        .sources
        .get(source)
        .ok_or_else(|| Error::invalid(format!("source index {source} out of range")))?;
    sample_pmf(pmf, n, &mut rng_from_seed(seed))
}

/// Add-`alpha` smoothed empirical pmf, `(count_v + alpha) / (n + alpha V)`.
pub fn train_empirical_proxy(samples: &[usize], alphabet_size: usize, alpha: f64) -> Result<Vec<f64>> {
    if alphabet_size < 2 {
        return Err(Error::invalid("alphabet size must be at least 2"));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid("smoothing must be finite and >= 0"));
    }
    let mut counts = vec![0usize; alphabet_size];
    for &s in samples {
        *counts
            .get_mut(s)
            .ok_or_else(|| Error::invalid(format!("symbol {s} outside alphabet of size {alphabet_size}")))? += 1;
    }
    let denom = samples.len() as f64 + alpha * alphabet_size as f64;
    if !(denom > 0.0) {
        return Err(Error::invalid("empty sample with zero smoothing has no pmf"));
    }
    Ok(counts.into_iter().map(|c| (c as f64 + alpha) / denom).collect())
}

pub fn entropy(pmf: &[f64]) -> f64 {
    -pmf.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// `H(p, q) = -sum_v p_v ln q_v` in nats; `+inf` if `q` misses `p`'s support.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pv, &qv) in p.iter().zip(q) {
        if pv > 0.0 {
            if qv <= 0.0 {
                return f64::INFINITY;
            }
            acc -= pv * qv.ln();
        }
    }
    acc
}

/// Exact target cross-entropy of the model trained on the `w`-mixture.
pub fn dm_oracle(world: &CategoricalWorld, weights: &MixtureWeights) -> Result<f64> {
    let mix = world.mixture_pmf(weights)?;
    let h = cross_entropy(&world.target, &mix);
    if h.is_infinite() {
        return Err(Error::ZeroProbability {
            sample_id: "target-supported symbol".into(),
        });
    }
    Ok(h)
}

/// Model retrained on `n` draws from the `w`-mixture: the empirical pmf,
/// add-`alpha` smoothed.
pub fn retrain_on_mixture(
    world: &CategoricalWorld,
    weights: &MixtureWeights,
    n: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let mix = world.mixture_pmf(weights)?;
    let samples = sample_pmf(&mix, n, &mut rng_from_seed(seed))?;
    train_empirical_proxy(&samples, world.alphabet_size(), alpha)
}

/// Binary-label sources over a finite input set, each with its own input
/// marginal `p(x)` and conditional `f_p(x) = P(y = 1 | x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftedConditionalWorld {
    pub marginals: Vec<Vec<f64>>,
    pub conditionals: Vec<Vec<f64>>,
}

impl ShiftedConditionalWorld {
    pub fn new(marginals: Vec<Vec<f64>>, conditionals: Vec<Vec<f64>>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::NoSources);
        }
        if conditionals.len() != marginals.len() {
            return Err(Error::LengthMismatch {
                what: "conditionals",
                expected: marginals.len(),
                found: conditionals.len(),
            });
        }
        let nx = marginals[0].len();
        for (p, (m, c)) in marginals.iter().zip(&conditionals).enumerate() {
            if m.len() != nx || c.len() != nx {
                return Err(Error::invalid(format!("source {p} has inconsistent input set size")));
            }
            check_pmf(m, "marginal")?;
            if c.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
                return Err(Error::invalid(format!("source {p} has a conditional outside [0, 1]")));
            }
        }
        Ok(Self {
            marginals,
            conditionals,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.marginals[0].len()
    }
}

/// Bayes-optimal conditional of the `w`-mixture at input `x`:
/// `sum_p w_p f_p(x) p_p(x) / sum_p w_p p_p(x)`.
///
/// Collapses to the linear ensemble `sum_p w_p f_p(x)` when all marginals
/// agree.
pub fn bayes_mixture_with_shift(world: &ShiftedConditionalWorld, weights: &MixtureWeights, x: usize) -> Result<f64> {
    if weights.len() != world.marginals.len() {
        return Err(Error::LengthMismatch {
            what: "mixture weights",
            expected: world.marginals.len(),
            found: weights.len(),
        });
    }
    if x >= world.n_inputs() {
        return Err(Error::invalid(format!("input {x} out of range")));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&w, m), c) in weights.values().iter().zip(&world.marginals).zip(&world.conditionals) {
        num += w * c[x] * m[x];
        den += w * m[x];
    }
    if !(den > 0.0) {
        return Err(Error::invalid(format!(
            "mixture places no mass on input {x}; conditional is undefined"
        )));
    }
    Ok(num / den)
}

/// Seeded sup-norm perturbation of proxy pmfs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub epsilon: f64,
    pub seed: u64,
}

/// Moves each pmf by a zero-sum noise vector of sup-norm exactly `epsilon`
/// (the mass stays 1, so the result is within `epsilon` of the input).
///
/// Fails if some entry is not strictly above `epsilon`, since the perturbed
/// value could then reach zero.
pub fn perturb_proxies(proxies: &[Vec<f64>], spec: PerturbationSpec) -> Result<Vec<Vec<f64>>> {
    let eps = spec.epsilon;
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("epsilon must be finite and >= 0, got {eps}")));
    }
    if eps == 0.0 {
        return Ok(proxies.to_vec());
    }
    let mut rng = rng_from_seed(spec.seed);
    let mut out = Vec::with_capacity(proxies.len());
    for (p, pmf) in proxies.iter().enumerate() {
        check_pmf(pmf, "proxy")?;
        if let Some(&min) = pmf.iter().min_by(|a, b| a.total_cmp(b)) {
            if min <= eps {
                return Err(Error::invalid(format!(
                    "epsilon {eps} too large for proxy {p}: smallest entry is {min}"
                )));
            }
        }
        let raw: Vec<f64> = (0..pmf.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let centered: Vec<f64> = raw.iter().map(|r| r - mean).collect();
        let peak = centered.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let scale = if peak > 0.0 { eps / peak } else { 0.0 };
        let moved: Vec<f64> = pmf.iter().zip(&centered).map(|(x, c)| x + scale * c).collect();
        let total: f64 = moved.iter().sum();
        out.push(normalize(moved, total));
    }
    Ok(out)
}
