//! Central finite differences over a parameter store.
//!
//! Only forward evaluations are used, so results are independent of the
//! tape's backward rules.

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

/// Numerical gradient of `f` at `store`, one tensor per parameter.
pub fn finite_difference<F>(store: &ParamStore, h: f32, mut f: F) -> Result<Vec<Tensor>>
where
    F: FnMut(&ParamStore) -> Result<f32>,
{
    let mut probe = store.clone();
    let mut out = Vec::with_capacity(store.len());
    for id in store.ids() {
        let n = store.get(id).len();
        let mut grad = vec![0.0f32; n];
        for (k, g) in grad.iter_mut().enumerate() {
            let orig = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + h;
            let plus = f(&probe)? as f64;
            probe.get_mut(id).data_mut()[k] = orig - h;
            let minus = f(&probe)? as f64;
            probe.get_mut(id).data_mut()[k] = orig;
            *g = ((plus - minus) / (2.0 * h as f64)) as f32;
        }
        out.push(Tensor::new(store.get(id).shape().to_vec(), grad)?);
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt();
    let scale = a.squared_norm().sqrt().max(b.squared_norm().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
