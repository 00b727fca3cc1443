use super::{ParamStore, Tensor};

/// Central-difference gradient of `loss` with respect to every coordinate
/// of every parameter in `store`.
///
/// Each coordinate is perturbed in place and restored exactly before the
/// next one, so `store` values are unchanged on return.
pub fn finite_difference_gradient<F>(mut loss: F, store: &mut ParamStore, eps: f64) -> Vec<Tensor>
where
    F: FnMut(&ParamStore) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.value(id).len();
        let mut g = vec![0.0; n];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = loss(store);
            store.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = loss(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            *gi = (plus - minus) / (2.0 * eps);
        }
        out.push(Tensor::from_parts(store.value(id).shape().to_vec(), g));
    }
    out
}

/// `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps coordinates whose true gradient is zero from turning
/// rounding noise into an unbounded ratio.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}
