use super::Real;
use crate::error::{Error, Result};

/// In-place SGD with momentum: `v ← μ·v − η·g`, `w ← w + v`.
pub fn sgd_momentum_update<T: Real>(
    params: &mut [T],
    velocity: &mut [T],
    grads: &[T],
    learning_rate: T,
    momentum: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape(format!(
            "sgd step with {} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    if !(learning_rate > T::zero()) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    if !(momentum >= T::zero() && momentum < T::one()) {
        return Err(Error::invalid("momentum must lie in [0, 1)"));
    }
    for ((w, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        *v = momentum * *v - learning_rate * g;
        *w = *w + *v;
    }
    Ok(())
}

/// Pure form of [`sgd_momentum_update`] returning the new `(params, velocity)`.
pub fn sgd_momentum_step<T: Real>(
    params: &[T],
    grads: &[T],
    velocity: &[T],
    learning_rate: T,
    momentum: T,
) -> Result<(Vec<T>, Vec<T>)> {
    let mut p = params.to_vec();
    let mut v = velocity.to_vec();
    sgd_momentum_update(&mut p, &mut v, grads, learning_rate, momentum)?;
    Ok((p, v))
}
