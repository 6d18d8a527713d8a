use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err < self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval<F>(store: &ParamStore, build: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = build(&mut g, store)?;
    if g.value(root).numel() != 1 {
        return Err(Error::NonScalarRoot(g.value(root).shape().to_vec()));
    }
    Ok(g.scalar(root))
}

/// Compares reverse-mode gradients of `build` against central differences
/// `(f(θ + h) − f(θ − h)) / 2h`, one coordinate at a time.
///
/// `build` must construct the same scalar loss every time it is called for
/// the same parameter values; any randomness has to be drawn up front.
pub fn grad_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    step: f64,
    tolerance: f64,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let first = eval(store, &mut build)?;
    let second = eval(store, &mut build)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let saved_grads: Vec<_> = ids.iter().map(|&id| store.grad(id).clone()).collect();
    for &id in ids {
        store.grad_mut(id).data_mut().fill(0.0);
    }
    let mut g = Graph::new();
    let root = build(&mut g, store)?;
    g.backward(root)?;
    store.accumulate(&g, |id| ids.contains(&id));
    let analytic: Vec<_> = ids.iter().map(|&id| store.grad(id).clone()).collect();
    for (&id, saved) in ids.iter().zip(saved_grads) {
        *store.grad_mut(id) = saved;
    }

    let mut params = Vec::with_capacity(ids.len());
    for (&id, grad) in ids.iter().zip(&analytic) {
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..grad.numel() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + step;
            let plus = eval(store, &mut build);
            store.value_mut(id).data_mut()[i] = orig - step;
            let minus = eval(store, &mut build);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * step);
            let a = grad.data()[i];
            let err = relative_error(a, numeric);
            if err > check.max_rel_err || i == 0 {
                check.max_rel_err = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    Ok(GradCheckReport { params, tolerance })
}
