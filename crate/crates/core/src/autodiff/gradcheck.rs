use std::collections::BTreeMap;

use super::{AutodiffError, ParamSet, Result};

/// Central-difference gradient of `loss_fn` at `theta`, one entry per
/// parameter coordinate. Only forward evaluations are used.
pub fn fd_gradient<F>(
    mut loss_fn: F,
    theta: &ParamSet,
    eps: f64,
) -> Result<BTreeMap<String, Vec<f64>>>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(AutodiffError::InvalidStep(eps));
    }
    let mut probe = theta.clone();
    let names: Vec<String> = theta.names().map(str::to_string).collect();
    let mut out = BTreeMap::new();
    for name in names {
        let n = theta.get(&name)?.numel();
        let mut grad = Vec::with_capacity(n);
        for index in 0..n {
            let original = theta.get(&name)?.data()[index];
            probe.get_mut(&name)?.data_mut()[index] = original + eps;
            let plus = loss_fn(&probe);
            probe.get_mut(&name)?.data_mut()[index] = original - eps;
            let minus = loss_fn(&probe);
            probe.get_mut(&name)?.data_mut()[index] = original;
            let non_finite = || AutodiffError::NonFiniteProbe {
                name: name.clone(),
                index,
            };
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p, m),
                (Err(AutodiffError::NonFinite { .. }), _)
                | (_, Err(AutodiffError::NonFinite { .. }))
                | (Ok(_), Ok(_)) => return Err(non_finite()),
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            grad.push((plus - minus) / (2.0 * eps));
        }
        out.insert(name, grad);
    }
    Ok(out)
}

/// `|a − b| / max(|a|, |b|, floor)`.
///
/// The floor keeps entries whose true gradient is zero from dividing
/// finite-difference roundoff by zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn single(w: f64) -> ParamSet {
        let mut p = ParamSet::new(0);
        p.insert("w", Tensor::scalar(w)).unwrap();
        p
    }

    fn w(p: &ParamSet) -> f64 {
        p.get("w").unwrap().data()[0]
    }

    #[test]
    fn quadratic_is_exact() {
        let g = fd_gradient(|p| Ok(w(p) * w(p)), &single(3.0), 1e-5).unwrap();
        assert!((g["w"][0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = fd_gradient(|_| Ok(4.2), &single(3.0), 1e-5).unwrap();
        assert_eq!(g["w"][0], 0.0);
    }

    #[test]
    fn abs_at_one() {
        let g = fd_gradient(|p| Ok(w(p).abs()), &single(1.0), 1e-5).unwrap();
        assert!((g["w"][0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_probe_names_coordinate() {
        let err = fd_gradient(
            |p| Ok(if w(p) > 1.0 { f64::INFINITY } else { 0.0 }),
            &single(1.0),
            1e-3,
        )
        .unwrap_err();
        assert_eq!(
            err,
            AutodiffError::NonFiniteProbe {
                name: "w".into(),
                index: 0
            }
        );
    }

    #[test]
    fn step_must_be_positive() {
        assert!(fd_gradient(|_| Ok(0.0), &single(1.0), 0.0).is_err());
    }
}
