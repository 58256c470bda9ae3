use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// One evaluation of a scalar function of the parameters.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grads: BTreeMap<String, DenseTensor>,
    /// Sign pattern of every ReLU input; see [`crate::autodiff::Tape::relu_pattern`].
    pub pattern: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU kink.
    pub skipped: usize,
}

/// Floor on the denominator of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compare analytic gradients with central differences on up to `samples`
/// randomly chosen coordinates.
///
/// A coordinate is skipped when either perturbed evaluation flips the sign
/// of some ReLU input, since the central difference then straddles a kink.
pub fn finite_difference_check(
    f: impl Fn(&ParamStore) -> Result<Evaluation>,
    store: &ParamStore,
    step: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if step <= 0.0 {
        return Err(Error::Argument(format!("finite-difference step must be positive, got {step}")));
    }
    let base = f(store)?;
    let mut coords: Vec<(String, usize)> = store
        .params()
        .filter(|(k, _)| base.grads.contains_key(*k))
        .flat_map(|(k, t)| (0..t.len()).map(move |i| (k.clone(), i)))
        .collect();
    coords.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut work = store.clone();
    for (name, i) in coords {
        if report.checked >= samples {
            break;
        }
        let x0 = store.get(&name)?.data()[i];
        work.get_mut(&name).expect("present").data_mut()[i] = x0 + step;
        let plus = f(&work)?;
        work.get_mut(&name).expect("present").data_mut()[i] = x0 - step;
        let minus = f(&work)?;
        work.get_mut(&name).expect("present").data_mut()[i] = x0;
        if plus.pattern != base.pattern || minus.pattern != base.pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * step);
        let analytic = base.grads[&name].data()[i];
        report.max_rel_error = report.max_rel_error.max(relative_error(analytic, numeric));
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_essentially_exact() {
        let mut store = ParamStore::new();
        store.insert("x", DenseTensor::vector(vec![1.0, -2.0, 0.5]));
        let f = |s: &ParamStore| {
            let x = s.get("x")?;
            let value = x.data().iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum();
            let g = x.data().iter().enumerate().map(|(i, v)| 2.0 * (i as f64 + 1.0) * v).collect();
            Ok(Evaluation {
                value,
                grads: [("x".to_string(), DenseTensor::vector(g))].into(),
                pattern: vec![],
            })
        };
        let r = finite_difference_check(f, &store, 1e-4, 10, 0).unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut store = ParamStore::new();
        store.insert("x", DenseTensor::scalar(1.0));
        let f = |s: &ParamStore| {
            let x = s.get("x")?.item();
            Ok(Evaluation {
                value: x * x,
                grads: [("x".to_string(), DenseTensor::scalar(3.0 * x))].into(),
                pattern: vec![],
            })
        };
        assert!(finite_difference_check(f, &store, 1e-4, 1, 0).unwrap().max_rel_error > 0.1);
    }
}
