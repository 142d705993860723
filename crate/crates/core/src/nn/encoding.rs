use super::NnError;
use crate::Scalar;

/// Fixed trigonometric encoding of a signed inter-onset interval.
pub fn sinusoidal_encode<T: Scalar>(ioi: i32, d: usize) -> Result<Vec<T>, NnError> {
    if !d.is_multiple_of(2) {
        return Err(NnError::OddDimension(d));
    }
    let mut out = Vec::with_capacity(d);
    for j in 0..d / 2 {
        let angle = f64::from(ioi) / 10000f64.powf(2.0 * j as f64 / d as f64);
        out.push(T::cast(angle.sin()));
        out.push(T::cast(angle.cos()));
    }
    Ok(out)
}
