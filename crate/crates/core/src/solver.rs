//! Entropic descent on the ensemble-risk objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{objective_and_gradient, LossKind, PredictionMatrix};
use crate::simplex::{entropic_step, uniform_weights, MixtureWeights};
use crate::synthworld::CategoricalWorld;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eta: f64,
    pub steps: usize,
    /// Reserved for minibatch sampling; the full-batch solver ignores it.
    pub seed: u64,
    #[serde(skip)]
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            steps: 100,
            seed: 0,
            record_trace: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub objective: f64,
    pub weights: Vec<f64>,
    pub grad_max_norm: f64,
}

/// One entry per iterate, the uniform start included.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub steps: Vec<TraceStep>,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub weights: MixtureWeights,
    /// Objective at the returned weights.
    pub objective: f64,
    /// Empty unless `record_trace` was set.
    pub trace: SolverTrace,
}

/// Starts at uniform weights and takes `config.steps` entropic steps of size
/// `config.eta` along the exact full-batch gradient.
pub fn mixmin_fit(m: &PredictionMatrix, config: &SolverConfig) -> Result<FitResult> {
    config.validate()?;
    let mut weights = uniform_weights(m.source_ids())?;
    let mut trace = SolverTrace::default();
    let (mut value, mut grad) = objective_and_gradient(m, &weights).map_err(|e| e.at_step(0))?;
    for step in 1..=config.steps {
        if config.record_trace {
            trace.steps.push(TraceStep {
                objective: value,
                weights: weights.values().to_vec(),
                grad_max_norm: grad.max_norm(),
            });
        }
        weights = entropic_step(&weights, &grad, config.eta).map_err(|e| e.at_step(step))?;
        (value, grad) = objective_and_gradient(m, &weights).map_err(|e| e.at_step(step))?;
    }
    if config.record_trace {
        trace.steps.push(TraceStep {
            objective: value,
            weights: weights.values().to_vec(),
            grad_max_norm: grad.max_norm(),
        });
    }
    Ok(FitResult {
        weights,
        objective: value,
        trace,
    })
}

/// Matrix whose cross-entropy objective is the exact expectation under the
/// world's target: one row per target-supported symbol, weighted by its
/// target probability, holding `ln proxy_p(symbol)`.
pub fn exact_expectation_matrix(world: &CategoricalWorld, proxies: &[Vec<f64>]) -> Result<PredictionMatrix> {
    if proxies.is_empty() {
        return Err(Error::NoSources);
    }
    let v = world.alphabet_size();
    let mut scores = Vec::new();
    let mut sample_ids = Vec::new();
    let mut row_weights = Vec::new();
    for (symbol, &t) in world.target.iter().enumerate() {
        if t <= 0.0 {
            continue;
        }
        for (p, proxy) in proxies.iter().enumerate() {
            if proxy.len() != v {
                return Err(Error::LengthMismatch {
                    what: "proxy pmf",
                    expected: v,
                    found: proxy.len(),
                });
            }
            let q = proxy[symbol];
            if !(q > 0.0) {
                return Err(Error::invalid(format!(
                    "proxy {p} has zero mass on symbol {symbol}, which the target supports"
                )));
            }
            scores.push(q.ln());
        }
        sample_ids.push(format!("symbol_{symbol}"));
        row_weights.push(t);
    }
    let source_ids = if proxies.len() == world.n_sources() {
        world.source_ids.clone()
    } else {
        crate::synthworld::default_source_ids(proxies.len())
    };
    PredictionMatrix::new(LossKind::CeUnconditional, scores, None, sample_ids, source_ids)?
        .with_row_weights(row_weights)
}

/// Matrix of per-sample log-scores of `proxies` on sampled target symbols.
pub fn sampled_matrix(samples: &[usize], proxies: &[Vec<f64>], source_ids: &[String]) -> Result<PredictionMatrix> {
    let mut scores = Vec::with_capacity(samples.len() * proxies.len());
    for &s in samples {
        for (p, proxy) in proxies.iter().enumerate() {
            let q = *proxy
                .get(s)
                .ok_or_else(|| Error::invalid(format!("symbol {s} outside proxy {p}'s alphabet")))?;
            if !(q > 0.0) {
                return Err(Error::invalid(format!("proxy {p} has zero mass on sampled symbol {s}")));
            }
            scores.push(q.ln());
        }
    }
    let sample_ids = (0..samples.len()).map(|i| format!("t{i}")).collect();
    PredictionMatrix::new(LossKind::CeUnconditional, scores, None, sample_ids, source_ids.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{ce_objective, objective};
    use crate::simplex::validate_simplex;
    use crate::synthworld::{entropy, gen_world, TargetSpec, WorldSpec};
    use approx::assert_abs_diff_eq;

    fn world(sources: &[&[f64]], target: &[f64]) -> CategoricalWorld {
        CategoricalWorld::from_pmfs(sources.iter().map(|s| s.to_vec()).collect(), target.to_vec()).unwrap()
    }

    fn exact(world: &CategoricalWorld) -> PredictionMatrix {
        exact_expectation_matrix(world, &world.sources).unwrap()
    }

    #[test]
    fn single_source_stays_put() {
        let w = world(&[&[0.3, 0.7]], &[0.5, 0.5]);
        let fit = mixmin_fit(&exact(&w), &SolverConfig::default()).unwrap();
        assert_eq!(fit.weights.values(), &[1.0]);
    }

    #[test]
    fn symmetric_world_lands_on_midpoint() {
        let w = world(&[&[0.9, 0.1], &[0.1, 0.9]], &[0.5, 0.5]);
        let fit = mixmin_fit(&exact(&w), &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(fit.weights.values()[0], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn recovers_two_thirds() {
        let w = world(&[&[0.8, 0.2], &[0.2, 0.8]], &[0.6, 0.4]);
        let fit = mixmin_fit(&exact(&w), &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(fit.weights.values()[0], 2.0 / 3.0, epsilon = 1e-3);
        assert_abs_diff_eq!(fit.objective, entropy(&w.target), epsilon = 1e-6);
    }

    #[test]
    fn trace_shape_and_validity() {
        let w = world(&[&[0.8, 0.2], &[0.2, 0.8], &[0.5, 0.5]], &[0.6, 0.4]);
        let cfg = SolverConfig { steps: 17, ..Default::default() };
        let fit = mixmin_fit(&exact(&w), &cfg).unwrap();
        assert_eq!(fit.trace.len(), 18);
        assert_eq!(fit.trace.steps[0].weights, vec![1.0 / 3.0; 3]);
        for s in &fit.trace.steps {
            assert!(s.objective.is_finite());
            assert!((s.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(s.weights.iter().all(|&x| x >= 0.0));
        }
        assert_eq!(fit.trace.steps.last().unwrap().objective, fit.objective);

        let quiet = mixmin_fit(&exact(&w), &SolverConfig { record_trace: false, ..cfg }).unwrap();
        assert!(quiet.trace.is_empty());
        assert_eq!(quiet.weights, fit.weights);
    }

    #[test]
    fn fit_is_deterministic_and_descends() {
        for seed in 0..5 {
            let spec = WorldSpec {
                alphabet_size: 6,
                num_sources: 4,
                concentration: 1.0,
                target: TargetSpec::Independent,
            };
            let w = gen_world(&spec, seed).unwrap();
            let m = exact(&w);
            let a = mixmin_fit(&m, &SolverConfig::default()).unwrap();
            let b = mixmin_fit(&m, &SolverConfig::default()).unwrap();
            assert_eq!(a, b);
            assert!(a.objective <= a.trace.steps[0].objective);
        }
    }

    #[test]
    fn config_validation() {
        let w = world(&[&[0.8, 0.2]], &[0.6, 0.4]);
        let m = exact(&w);
        assert!(mixmin_fit(&m, &SolverConfig { eta: 0.0, ..Default::default() }).is_err());
        assert!(mixmin_fit(&m, &SolverConfig { steps: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn exact_matrix_examples() {
        let w = world(&[&[1.0, 0.0]], &[1.0, 0.0]);
        assert_eq!(ce_objective(&exact(&w), &validate_simplex(&[1.0], 0.0).unwrap()).unwrap(), 0.0);

        let w = world(&[&[0.8, 0.2], &[0.2, 0.8]], &[0.6, 0.4]);
        let lam = validate_simplex(&[2.0 / 3.0, 1.0 / 3.0], 1e-12).unwrap();
        let v = objective(&exact(&w), &lam).unwrap();
        assert_abs_diff_eq!(v, -(0.6f64 * 0.6f64.ln() + 0.4 * 0.4f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.67301, epsilon = 1e-5);

        let w = world(&[&[0.5, 0.5]], &[0.5, 0.5]);
        let v = objective(&exact(&w), &validate_simplex(&[1.0], 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(v, 2f64.ln(), epsilon = 1e-15);

        let w = world(&[&[1.0, 0.0], &[0.5, 0.5]], &[0.5, 0.5]);
        assert!(exact_expectation_matrix(&w, &w.sources).is_err());
    }
}
