use super::{ParamGrads, ParamStore};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor. Central differences carry ~1e-11 of rounding noise, so
/// components whose true gradient is (near) zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(REL_FLOOR)
}

/// Max relative error between `analytic` and central differences of `f` at `x`.
pub fn grad_check<F>(mut f: F, x: &[f64], analytic: &[f64]) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        let central = (up - down) / (2.0 * FD_STEP);
        let e = rel_err(analytic[i], central);
        worst = worst.max(e);
    }
    worst
}

/// Gradient check over every scalar of a parameter store. `loss` evaluates the
/// scalar objective and its parameter gradients for the store it is given.
pub fn grad_check_store<F>(store: &ParamStore, loss: F) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(f64, ParamGrads)>,
{
    let (_, grads) = loss(store)?;
    let analytic = grads.flatten(store);
    let x = store.flat_values();
    let mut scratch = store.clone();
    let mut err = None;
    let worst = grad_check(
        |v| {
            scratch.set_flat_values(v).expect("same length");
            match loss(&scratch) {
                Ok((l, _)) => l,
                Err(e) => {
                    err.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &x,
        &analytic,
    );
    match err {
        Some(e) => Err(e),
        None => Ok(worst),
    }
}
