use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Relative errors below this magnitude floor are measured against the floor,
/// so entries whose true gradient is ~0 are judged on absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Entries whose relative error exceeds the tolerance.
    pub flagged: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub step: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.flagged == 0)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `analytic` against central differences `(f(θ+h) − f(θ−h)) / 2h`
/// for every scalar parameter. The store is restored bit-exactly afterwards.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    store: &mut ParamStore,
    analytic: &Gradients,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut params = Vec::with_capacity(store.len());
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let grad = analytic
            .get(id)
            .ok_or_else(|| Error::Data(format!("missing gradient for {:?}", store.param(id).name)))?
            .clone();
        let mut check = ParamCheck {
            name: store.param(id).name.clone(),
            entries: grad.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            flagged: 0,
        };
        for i in 0..grad.len() {
            let original = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = original + h;
            let plus = loss_fn(store);
            store.value_mut(id).data_mut()[i] = original - h;
            let minus = loss_fn(store);
            store.value_mut(id).data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = grad.data()[i];
            let err = relative_error(a, numeric);
            if err > tol {
                check.flagged += 1;
            }
            if err > check.max_rel_error || i == 0 {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    Ok(GradCheckReport { tol, step: h, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};

    fn analytic(store: &ParamStore, f: impl Fn(&mut Tape, crate::autodiff::Var) -> crate::autodiff::Var) -> (f64, Gradients) {
        let mut tape = Tape::new();
        let x = tape.param(store, store.id("theta").unwrap());
        let loss = f(&mut tape, x);
        let value = tape.value(loss).item();
        (value, tape.backward(loss).unwrap().into_gradients(store))
    }

    fn half_square(tape: &mut Tape, x: crate::autodiff::Var) -> crate::autodiff::Var {
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.scale(s, 0.5)
    }

    #[test]
    fn quadratic_matches_within_1e8() {
        let mut store = ParamStore::new();
        store.insert("theta", Tensor::vector(vec![0.7, -1.3, 2.5, 0.0])).unwrap();
        let (_, grads) = analytic(&store, half_square);
        assert_eq!(grads.get(store.id("theta").unwrap()).unwrap().data(), &[0.7, -1.3, 2.5, 0.0]);
        let report = finite_diff_check(
            |s| Ok(analytic(s, half_square).0),
            &mut store,
            &grads,
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn logsumexp_gradient_is_softmax() {
        let theta = vec![0.2, -1.0, 3.0];
        let mut store = ParamStore::new();
        store.insert("theta", Tensor::vector(theta.clone())).unwrap();
        let lse = |tape: &mut Tape, x| tape.logsumexp(x, 0).unwrap();
        let (_, grads) = analytic(&store, lse);
        let z: f64 = theta.iter().map(|t| t.exp()).sum();
        for (g, t) in grads.get(store.id("theta").unwrap()).unwrap().data().iter().zip(&theta) {
            assert!((g - t.exp() / z).abs() < 1e-15);
        }
        let report =
            finite_diff_check(|s| Ok(analytic(s, lse).0), &mut store, &grads, 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_flagged_and_store_restored() {
        let mut store = ParamStore::new();
        store.insert("theta", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let before = store.value(store.id("theta").unwrap()).clone();
        let mut grads = Gradients::zeros(&store);
        grads.set(store.id("theta").unwrap(), Tensor::vector(vec![1.0, 0.0]));
        let report =
            finite_diff_check(|s| Ok(analytic(s, half_square).0), &mut store, &grads, 1e-5, 1e-6).unwrap();
        assert!(!report.passed());
        assert_eq!(report.params[0].flagged, 1);
        assert_eq!(report.params[0].worst_index, 1);
        assert_eq!(store.value(store.id("theta").unwrap()), &before);
    }
}
