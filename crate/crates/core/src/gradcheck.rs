//! Finite-difference verification of tape gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval(loss_fn: &mut impl FnMut(&ParamStore, &mut Tape) -> Result<Var>, store: &ParamStore, at: &str) -> Result<f64> {
    let mut tape = Tape::new();
    let v = loss_fn(store, &mut tape)?;
    let l = tape.scalar(v);
    if !l.is_finite() {
        return Err(Error::Numeric {
            param: String::from(at),
            detail: format!("loss evaluated to {l}"),
        });
    }
    Ok(l)
}

/// Compare analytic gradients against central differences
/// `(f(x+eps) - f(x-eps)) / 2eps` on `samples` entries drawn round-robin over
/// parameters (every entry when `samples` covers them all).
pub fn grad_check(
    mut loss_fn: impl FnMut(&ParamStore, &mut Tape) -> Result<Var>,
    store: &ParamStore,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::arg(format!("eps must lie in [1e-7, 1e-4], got {eps}")));
    }
    let mut work = store.clone();
    work.zero_grad();
    {
        let mut tape = Tape::new();
        let v = loss_fn(&work, &mut tape)?;
        let l = tape.scalar(v);
        if !l.is_finite() {
            let culprit = work
                .iter()
                .find(|(_, t)| t.data().iter().any(|v| !v.is_finite()))
                .map_or("<unperturbed>", |(k, _)| k);
            return Err(Error::Numeric {
                param: String::from(culprit),
                detail: format!("loss evaluated to {l}"),
            });
        }
        tape.backward_into(v, &mut work)?;
    }
    let analytic: Vec<(String, Vec<f64>)> = work
        .iter()
        .map(|(k, t)| (String::from(k), t.grad().map(|g| g.to_vec()).unwrap_or_default()))
        .collect();
    work.clear_grad();

    let total: usize = analytic.iter().map(|(_, g)| g.len()).sum();
    let mut picks: Vec<(usize, usize)> = Vec::new();
    if samples >= total {
        for (pi, (_, g)) in analytic.iter().enumerate() {
            picks.extend((0..g.len()).map(|i| (pi, i)));
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nonempty: Vec<usize> = (0..analytic.len()).filter(|&i| !analytic[i].1.is_empty()).collect();
        for k in 0..samples {
            let pi = nonempty[k % nonempty.len()];
            picks.push((pi, rng.random_range(0..analytic[pi].1.len())));
        }
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (pi, idx) in picks {
        let (name, grads) = &analytic[pi];
        let original = work.get(name).expect("name taken from store").data()[idx];
        let mut at = |x: f64, work: &mut ParamStore| -> Result<f64> {
            work.get_mut(name).expect("present").data_mut()[idx] = x;
            eval(&mut loss_fn, work, name)
        };
        let plus = at(original + eps, &mut work)?;
        let minus = at(original - eps, &mut work)?;
        work.get_mut(name).expect("present").data_mut()[idx] = original;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(grads[idx], numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((name.clone(), idx));
            report.analytic = grads[idx];
            report.numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    #[test]
    fn sum_of_squares() {
        let mut s = ParamStore::new(0);
        s.insert("w", Tensor::matrix(2, 2, vec![0.3, -1.1, 2.0, 0.7]).unwrap()).unwrap();
        let r = grad_check(
            |st, t| {
                let w = t.param(st, "w")?;
                let sq = t.mul(w, w)?;
                Ok(t.sum_all(sq))
            },
            &s,
            1e-5,
            50,
            1,
        )
        .unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn constant_loss_is_below_floor() {
        let mut s = ParamStore::new(0);
        s.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        s.insert("unused", Tensor::vector(vec![5.0])).unwrap();
        let r = grad_check(
            |st, t| {
                let w = t.param(st, "w")?;
                let z = t.scale(w, 0.0);
                Ok(t.sum_all(z))
            },
            &s,
            1e-5,
            10,
            1,
        )
        .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_loss_names_parameter() {
        let mut s = ParamStore::new(0);
        s.insert("w", Tensor::vector(vec![f64::NAN])).unwrap();
        let err = grad_check(
            |st, t| {
                let w = t.param(st, "w")?;
                Ok(t.sum_all(w))
            },
            &s,
            1e-5,
            1,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric { ref param, .. } if param == "w"));
    }

    #[test]
    fn eps_range_enforced() {
        let s = ParamStore::new(0);
        assert!(grad_check(|_, t| Ok(t.zeros(1, 1)), &s, 1e-2, 1, 0).is_err());
    }
}
