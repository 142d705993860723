use super::sigmoid;
use crate::Scalar;

/// Mean binary cross-entropy over four independent labels, computed as
/// `max(z, 0) − y z + ln(1 + e^{−|z|})`. Returns the loss and `dL/dz`.
pub fn bce_multilabel<T: Scalar>(logits: &[T; 4], labels: &[bool; 4]) -> (T, [T; 4]) {
    let quarter = T::cast(0.25);
    let mut loss = T::zero();
    let mut grad = [T::zero(); 4];
    for j in 0..4 {
        let z = logits[j];
        let y = if labels[j] { T::one() } else { T::zero() };
        loss = loss + z.max(T::zero()) - y * z + (-z.abs()).exp().ln_1p();
        grad[j] = (sigmoid(z) - y) * quarter;
    }
    (loss * quarter, grad)
}
