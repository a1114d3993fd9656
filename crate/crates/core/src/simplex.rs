//! Points on the probability simplex and the entropic (multiplicative-weights)
//! update used by the mixture solver.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Sum tolerance applied when ingesting weights from outside (files, users).
pub const INGEST_TOL: f64 = 1e-6;

/// Sum tolerance maintained by internal operations.
pub const INTERNAL_TOL: f64 = 1e-12;

/// Mixture proportions over a fixed, ordered list of named sources.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    values: Vec<f64>,
    source_ids: Vec<String>,
}

impl MixtureWeights {
    /// Equal weight `1/P` on every source.
    pub fn uniform<S: AsRef<str>>(source_ids: &[S]) -> Result<Self> {
        let ids = check_ids(source_ids)?;
        let w = 1.0 / ids.len() as f64;
        Ok(Self {
            values: vec![w; ids.len()],
            source_ids: ids,
        })
    }

    /// All mass on source `index`.
    pub fn vertex<S: AsRef<str>>(source_ids: &[S], index: usize) -> Result<Self> {
        let ids = check_ids(source_ids)?;
        if index >= ids.len() {
            return Err(Error::invalid(format!(
                "vertex index {index} out of range for {} sources",
                ids.len()
            )));
        }
        let mut values = vec![0.0; ids.len()];
        values[index] = 1.0;
        Ok(Self {
            values,
            source_ids: ids,
        })
    }

    /// Validates `values` as a simplex point (see [`validate_simplex`]) and
    /// attaches source names.
    pub fn new<S: AsRef<str>>(source_ids: &[S], values: Vec<f64>, tol: f64) -> Result<Self> {
        let ids = check_ids(source_ids)?;
        if ids.len() != values.len() {
            return Err(Error::LengthMismatch {
                what: "weights",
                expected: ids.len(),
                found: values.len(),
            });
        }
        let values = normalize_checked(values, tol)?;
        Ok(Self {
            values,
            source_ids: ids,
        })
    }

    /// Builds weights that are already known to be a simplex point.
    pub(crate) fn from_parts(source_ids: Vec<String>, values: Vec<f64>) -> Self {
        debug_assert_eq!(source_ids.len(), values.len());
        debug_assert!(values.iter().all(|&v| v >= 0.0));
        Self { values, source_ids }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same source names, new values (validated with the internal tolerance).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        MixtureWeights::new(&self.source_ids, values, INTERNAL_TOL)
    }

    /// `max_p |self_p - other_p|`.
    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-source derivative of an objective with respect to the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                index,
            });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn max_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, weights: &MixtureWeights) -> f64 {
        self.0
            .iter()
            .zip(weights.values())
            .map(|(g, w)| g * w)
            .sum()
    }
}

/// Uniform starting point of the solver.
pub fn uniform_weights<S: AsRef<str>>(source_ids: &[S]) -> Result<MixtureWeights> {
    MixtureWeights::uniform(source_ids)
}

/// Accepts `values` if nonnegative and within `tol` of summing to one.
///
/// Unnamed sources are labelled `source_0 .. source_{P-1}`.
pub fn validate_simplex(values: &[f64], tol: f64) -> Result<MixtureWeights> {
    let ids: Vec<String> = (0..values.len()).map(|i| format!("source_{i}")).collect();
    MixtureWeights::new(&ids, values.to_vec(), tol)
}

/// One multiplicative-weights step: `w_p * exp(-eta * g_p)`, renormalized.
///
/// Evaluated in log space with a max shift taken over the support of `w`, so
/// large gradients cannot overflow and zero entries stay exactly zero.
pub fn entropic_step(
    weights: &MixtureWeights,
    gradient: &GradientVector,
    eta: f64,
) -> Result<MixtureWeights> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid(format!("step size must be positive, got {eta}")));
    }
    let g = gradient.values();
    if g.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "gradient",
            expected: weights.len(),
            found: g.len(),
        });
    }
    let logits: Vec<f64> = weights
        .values()
        .iter()
        .zip(g)
        .map(|(&w, &gp)| {
            if w > 0.0 {
                w.ln() - eta * gp
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let shift = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logits.iter().map(|&l| (l - shift).exp()).collect();
    // the arg-max entry contributes exactly 1, so the total is >= 1
    let total: f64 = unnorm.iter().sum();
    let values = unnorm.into_iter().map(|u| u / total).collect();
    Ok(MixtureWeights::from_parts(weights.source_ids.clone(), values))
}

fn check_ids<S: AsRef<str>>(source_ids: &[S]) -> Result<Vec<String>> {
    if source_ids.is_empty() {
        return Err(Error::NoSources);
    }
    let mut seen = HashSet::with_capacity(source_ids.len());
    let mut out = Vec::with_capacity(source_ids.len());
    for id in source_ids {
        let id = id.as_ref();
        if !seen.insert(id) {
            return Err(Error::DuplicateSource(id.to_string()));
        }
        out.push(id.to_string());
    }
    Ok(out)
}

// Values already within INTERNAL_TOL of unit sum are kept bit-for-bit so that
// weights written to disk reload to the identical point.
fn normalize_checked(values: Vec<f64>, tol: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::NoSources);
    }
    if !(tol >= 0.0) {
        return Err(Error::invalid(format!("tolerance must be >= 0, got {tol}")));
    }
    for (index, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "weights",
                index,
            });
        }
        if v < 0.0 {
            return Err(Error::NegativeWeight { index, value: v });
        }
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::NotNormalized { sum, tol });
    }
    if (sum - 1.0).abs() <= INTERNAL_TOL {
        return Ok(values);
    }
    Ok(values.into_iter().map(|v| v / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn w(values: &[f64]) -> MixtureWeights {
        validate_simplex(values, 1e-9).unwrap()
    }

    fn g(values: &[f64]) -> GradientVector {
        GradientVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_weights(&["a"]).unwrap().values(), &[1.0]);
        assert_eq!(uniform_weights(&["a", "b"]).unwrap().values(), &[0.5, 0.5]);
        assert_eq!(
            uniform_weights(&["a", "b", "c", "d"]).unwrap().values(),
            &[0.25; 4]
        );
    }

    #[test]
    fn uniform_rejects_empty_and_duplicates() {
        let empty: [&str; 0] = [];
        assert!(matches!(uniform_weights(&empty), Err(Error::NoSources)));
        assert!(matches!(
            uniform_weights(&["a", "a"]),
            Err(Error::DuplicateSource(_))
        ));
        assert_eq!(Error::NoSources.to_string(), "no sources");
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let out = entropic_step(&w(&[0.5, 0.5]), &g(&[0.0, 0.0]), 1.0).unwrap();
        assert_eq!(out.values(), &[0.5, 0.5]);
    }

    #[test]
    fn constant_gradient_is_fixed_point() {
        let out = entropic_step(&w(&[0.3, 0.7]), &g(&[2.0, 2.0]), 1.0).unwrap();
        assert_abs_diff_eq!(out.values()[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(out.values()[1], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn unit_gradient_step() {
        let out = entropic_step(&w(&[0.5, 0.5]), &g(&[1.0, 0.0]), 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert_abs_diff_eq!(out.values()[0], e / (1.0 + e), epsilon = 1e-12);
        assert_abs_diff_eq!(out.values()[0], 0.26894, epsilon = 1e-5);
        assert_abs_diff_eq!(out.values()[1], 0.73106, epsilon = 1e-5);
    }

    #[test]
    fn huge_gradients_do_not_overflow() {
        let out = entropic_step(&w(&[0.5, 0.5]), &g(&[-1e6, 1e6]), 10.0).unwrap();
        assert_eq!(out.values(), &[1.0, 0.0]);
        // the only supported entry is pushed hard but must keep all mass
        let out = entropic_step(&w(&[0.0, 1.0]), &g(&[-1e300, 1e300]), 1.0).unwrap();
        assert_eq!(out.values(), &[0.0, 1.0]);
    }

    #[test]
    fn step_rejects_bad_inputs() {
        assert!(GradientVector::new(vec![f64::NAN]).is_err());
        assert!(GradientVector::new(vec![0.0, f64::INFINITY]).is_err());
        assert!(entropic_step(&w(&[1.0]), &g(&[0.0]), 0.0).is_err());
        assert!(entropic_step(&w(&[1.0]), &g(&[0.0, 1.0]), 1.0).is_err());
    }

    #[test]
    fn validate_examples() {
        assert_eq!(validate_simplex(&[0.5, 0.5], 1e-6).unwrap().values(), &[0.5, 0.5]);

        let v = validate_simplex(&[0.500000001, 0.5], 1e-6).unwrap();
        assert_abs_diff_eq!(v.values()[0], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(v.values().iter().sum::<f64>(), 1.0, epsilon = 1e-15);

        let err = validate_simplex(&[-0.1, 1.1], 1e-6).unwrap_err();
        assert!(err.to_string().contains("negative weight"), "{err}");

        assert!(matches!(
            validate_simplex(&[0.5, 0.6], 1e-6),
            Err(Error::NotNormalized { .. })
        ));
        assert!(validate_simplex(&[], 1e-6).is_err());
    }

    #[test]
    fn validate_keeps_near_exact_values_bitwise() {
        let vals = [0.1, 0.2, 0.7000000000000001];
        let v = validate_simplex(&vals, 1e-6).unwrap();
        assert_eq!(v.values(), &vals);
    }

    fn simplex_point(p: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, p).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    fn point_and_grad() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..8).prop_flat_map(|p| (simplex_point(p), prop::collection::vec(-50.0f64..50.0, p)))
    }

    proptest! {
        #[test]
        fn step_stays_on_simplex((lam, grad) in point_and_grad(), eta in 0.001f64..5.0) {
            let out = entropic_step(&w(&lam), &g(&grad), eta).unwrap();
            let sum: f64 = out.values().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            // positivity holds unless the exponent gap underflows
            let spread = grad.iter().cloned().fold(f64::MIN, f64::max)
                - grad.iter().cloned().fold(f64::MAX, f64::min);
            if eta * spread < 600.0 {
                prop_assert!(out.values().iter().all(|&v| v > 0.0));
            }
        }

        #[test]
        fn step_is_shift_invariant((lam, grad) in point_and_grad(), eta in 0.001f64..2.0, c in -10.0f64..10.0) {
            let shifted: Vec<f64> = grad.iter().map(|x| x + c).collect();
            let a = entropic_step(&w(&lam), &g(&grad), eta).unwrap();
            let b = entropic_step(&w(&lam), &g(&shifted), eta).unwrap();
            prop_assert!(a.max_abs_diff(b.values()) <= 1e-12);
        }

        #[test]
        fn small_step_barely_moves((lam, grad) in point_and_grad(), eta in 1e-8f64..1e-4) {
            let gv = g(&grad);
            let out = entropic_step(&w(&lam), &gv, eta).unwrap();
            prop_assert!(out.max_abs_diff(&lam) <= eta * gv.max_norm() + 1e-15);
        }

        #[test]
        fn zero_entries_stay_zero((lam, grad) in point_and_grad(), zero in 0usize..8, eta in 0.01f64..5.0) {
            prop_assume!(lam.len() >= 2);
            let zero = zero % lam.len();
            let mut lam = lam;
            lam[zero] = 0.0;
            let s: f64 = lam.iter().sum();
            let lam: Vec<f64> = lam.into_iter().map(|x| x / s).collect();
            let out = entropic_step(&w(&lam), &g(&grad), eta).unwrap();
            prop_assert_eq!(out.values()[zero], 0.0);
        }
    }
}
