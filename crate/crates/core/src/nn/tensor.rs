use crate::Scalar;

use super::NnError;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if shape.contains(&0) || data.len() != expected {
            return Err(NnError::ShapeMismatch {
                expected: format!("{expected} elements for shape {shape:?}"),
                found: format!("{}", data.len()),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Width of a row (last dimension).
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `W x` for a row-major `out × in` matrix.
pub(crate) fn matvec<T: Scalar>(w: &Tensor<T>, x: &[T]) -> Vec<T> {
    let cols = w.cols();
    debug_assert_eq!(cols, x.len());
    w.data()
        .chunks_exact(cols)
        .map(|row| row.iter().zip(x).fold(T::zero(), |acc, (a, b)| acc + *a * *b))
        .collect()
}

/// `out += Wᵀ g`.
pub(crate) fn matvec_t_acc<T: Scalar>(w: &Tensor<T>, g: &[T], out: &mut [T]) {
    let cols = w.cols();
    debug_assert_eq!(cols, out.len());
    for (row, &gi) in w.data().chunks_exact(cols).zip(g) {
        if gi == T::zero() {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(row) {
            *o = *o + wij * gi;
        }
    }
}

/// `G += g xᵀ`.
pub(crate) fn outer_acc<T: Scalar>(grad: &mut Tensor<T>, g: &[T], x: &[T]) {
    let cols = grad.cols();
    debug_assert_eq!(cols, x.len());
    for (row, &gi) in grad.data_mut().chunks_exact_mut(cols).zip(g) {
        if gi == T::zero() {
            continue;
        }
        for (o, &xj) in row.iter_mut().zip(x) {
            *o = *o + gi * xj;
        }
    }
}

pub(crate) fn add_assign<T: Scalar>(acc: &mut [T], x: &[T]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a = *a + b;
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
