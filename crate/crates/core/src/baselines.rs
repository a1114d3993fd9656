//! Comparison mixture-selection methods: random simplex search, exhaustive
//! grid search, a linear regression surrogate, and static mixtures.
//!
//! Ties are always broken toward the lowest candidate index (random search,
//! surrogate selection) or the lexicographically smallest composition (grid).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::objectives::{objective, PredictionMatrix};
use crate::simplex::MixtureWeights;
use crate::synthworld::rng_from_seed;

/// Default cap on the number of grid points enumerated.
pub const DEFAULT_GRID_CAP: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEvaluation {
    pub weights: MixtureWeights,
    pub objective: f64,
}

/// Uniform draw from the simplex: normalized unit-rate exponentials.
pub fn sample_uniform_simplex<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..p).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return draws.into_iter().map(|x: f64| x / total).collect();
        }
    }
}

fn sample_candidates(source_ids: &[String], k: usize, seed: u64) -> Result<Vec<MixtureWeights>> {
    let mut rng = rng_from_seed(seed);
    (0..k)
        .map(|_| {
            let v = sample_uniform_simplex(source_ids.len(), &mut rng);
            MixtureWeights::new(source_ids, v, crate::simplex::INTERNAL_TOL)
        })
        .collect()
}

/// Best of `k` uniform simplex samples under the matrix objective.
pub fn random_search(
    m: &PredictionMatrix,
    k: usize,
    seed: u64,
) -> Result<(MixtureWeights, Vec<CandidateEvaluation>)> {
    if k == 0 {
        return Err(Error::invalid("random search needs at least one candidate"));
    }
    let evals = sample_candidates(m.source_ids(), k, seed)?
        .into_iter()
        .map(|weights| {
            let objective = objective(m, &weights)?;
            Ok(CandidateEvaluation { weights, objective })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = argmin(&evals, |e| e.objective);
    Ok((evals[best].weights.clone(), evals))
}

fn argmin<T>(items: &[T], key: impl Fn(&T) -> f64) -> usize {
    let mut best = 0;
    for (i, item) in items.iter().enumerate().skip(1) {
        if key(item) < key(&items[best]) {
            best = i;
        }
    }
    best
}

/// Number of compositions of `m` into `p` nonnegative parts,
/// `C(m + p - 1, p - 1)`, saturating at `u128::MAX`.
pub fn composition_count(m: u64, p: usize) -> u128 {
    let mut r: u128 = 1;
    for k in 1..p as u128 {
        match r.checked_mul(m as u128 + k) {
            Some(x) => r = x / k,
            None => return u128::MAX,
        }
    }
    r
}

/// Compositions of `m` into `p` parts, in ascending lexicographic order.
pub struct Compositions {
    current: Option<Vec<u64>>,
}

impl Compositions {
    pub fn new(m: u64, p: usize) -> Self {
        let current = (p > 0).then(|| {
            let mut c = vec![0; p];
            c[p - 1] = m;
            c
        });
        Self { current }
    }
}

impl Iterator for Compositions {
    type Item = Vec<u64>;

    fn next(&mut self) -> Option<Vec<u64>> {
        let out = self.current.take()?;
        let p = out.len();
        // rightmost position (other than the last) with mass to its right
        let mut tail = out[p - 1];
        let mut next = None;
        for i in (0..p.saturating_sub(1)).rev() {
            if tail > 0 {
                let mut c = out.clone();
                c[i] += 1;
                for x in &mut c[i + 1..] {
                    *x = 0;
                }
                c[p - 1] = tail - 1;
                next = Some(c);
                break;
            }
            tail += out[i];
        }
        self.current = next;
        Some(out)
    }
}

/// Exhaustive minimization of `eval` over the grid of weights that are
/// multiples of `1/m`. Points where `eval` reports zero probability count as
/// `+inf`.
pub fn grid_argmin<F>(source_ids: &[String], m: u64, cap: u128, mut eval: F) -> Result<CandidateEvaluation>
where
    F: FnMut(&MixtureWeights) -> Result<f64>,
{
    if m == 0 {
        return Err(Error::invalid("grid resolution denominator must be at least 1"));
    }
    if source_ids.is_empty() {
        return Err(Error::NoSources);
    }
    let count = composition_count(m, source_ids.len());
    if count > cap {
        return Err(Error::GridTooLarge { count, cap });
    }
    let denom = m as f64;
    let mut best: Option<CandidateEvaluation> = None;
    for comp in Compositions::new(m, source_ids.len()) {
        let values = comp.iter().map(|&c| c as f64 / denom).collect();
        let weights = MixtureWeights::new(source_ids, values, 1e-9)?;
        let value = match eval(&weights) {
            Ok(v) => v,
            Err(Error::ZeroProbability { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| value < b.objective) {
            best = Some(CandidateEvaluation {
                weights,
                objective: value,
            });
        }
    }
    let best = best.expect("at least one composition");
    if !best.objective.is_finite() {
        return Err(Error::ZeroProbability {
            sample_id: "every grid point".into(),
        });
    }
    Ok(best)
}

/// Grid search of the matrix objective at resolution `1/m`.
pub fn grid_search(m_matrix: &PredictionMatrix, m: u64) -> Result<(MixtureWeights, f64)> {
    grid_search_with_cap(m_matrix, m, DEFAULT_GRID_CAP)
}

pub fn grid_search_with_cap(mat: &PredictionMatrix, m: u64, cap: u128) -> Result<(MixtureWeights, f64)> {
    let best = grid_argmin(mat.source_ids(), m, cap, |w| objective(mat, w))?;
    Ok((best.weights, best.objective))
}

/// Converts a resolution like `0.01` to its denominator `m = 100`.
pub fn resolution_to_denominator(resolution: f64) -> Result<u64> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::invalid(format!("resolution must be in (0, 1], got {resolution}")));
    }
    let m = (1.0 / resolution).round();
    if ((1.0 / m) - resolution).abs() > 1e-9 {
        return Err(Error::invalid(format!("resolution {resolution} is not of the form 1/m")));
    }
    Ok(m as u64)
}

/// Linear model of loss as a function of mixture weights.
///
/// The intercept is not identifiable on the simplex (it trades off against a
/// constant shift of all coefficients); fits fix it at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSurrogate {
    pub source_ids: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl RegressionSurrogate {
    pub fn predict(&self, weights: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(weights)
                .map(|(b, w)| b * w)
                .sum::<f64>()
    }
}

/// Least-squares fit of `loss ~ beta . w` on observed `(weights, loss)` pairs.
pub fn regmix_lite_fit(observations: &[(MixtureWeights, f64)]) -> Result<RegressionSurrogate> {
    let first = observations.first().ok_or(Error::Underdetermined { needed: 2, found: 0 })?;
    let p = first.0.len();
    if observations.len() < p + 1 {
        return Err(Error::Underdetermined {
            needed: p + 1,
            found: observations.len(),
        });
    }
    for (i, (w, loss)) in observations.iter().enumerate() {
        if w.source_ids() != first.0.source_ids() {
            return Err(Error::invalid(format!("observation {i} has different sources")));
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "observed loss",
                index: i,
            });
        }
    }
    let design = DMatrix::from_fn(observations.len(), p, |i, j| observations[i].0.values()[j]);
    let losses = DVector::from_iterator(observations.len(), observations.iter().map(|o| o.1));
    let svd = design.svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * 1e-10;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < p {
        return Err(Error::RankDeficient { rank, needed: p });
    }
    let beta = svd
        .solve(&losses, tol)
        .map_err(|e| Error::invalid(format!("least squares failed: {e}")))?;
    Ok(RegressionSurrogate {
        source_ids: first.0.source_ids().to_vec(),
        coefficients: beta.iter().copied().collect(),
        intercept: 0.0,
    })
}

/// Lowest predicted loss among `candidates` uniform simplex samples.
pub fn regmix_lite_select(surrogate: &RegressionSurrogate, candidates: usize, seed: u64) -> Result<MixtureWeights> {
    if candidates == 0 {
        return Err(Error::invalid("need at least one candidate"));
    }
    let pool = sample_candidates(&surrogate.source_ids, candidates, seed)?;
    let best = argmin(&pool, |w| surrogate.predict(w.values()));
    Ok(pool[best].clone())
}

/// Natural (size-proportional) and balanced (uniform) mixtures.
pub fn static_mixtures(source_ids: &[String], sizes: &[f64]) -> Result<(MixtureWeights, MixtureWeights)> {
    if sizes.len() != source_ids.len() {
        return Err(Error::LengthMismatch {
            what: "source sizes",
            expected: source_ids.len(),
            found: sizes.len(),
        });
    }
    if let Some(i) = sizes.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid(format!(
            "source size must be positive, got {} for `{}`",
            sizes[i], source_ids[i]
        )));
    }
    let total: f64 = sizes.iter().sum();
    let natural = MixtureWeights::new(source_ids, sizes.iter().map(|s| s / total).collect(), 1e-9)?;
    let balanced = MixtureWeights::uniform(source_ids)?;
    Ok((natural, balanced))
}
