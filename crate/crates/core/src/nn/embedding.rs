use rand::Rng;

use super::{add_assign, Grads, NnError, ParamId, ParamStore};
use crate::Scalar;

/// Lookup table of `rows × d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub d: usize,
}

impl Embedding {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        rows: usize,
        d: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let table = store.add_normal(name, &[rows, d], 0.1, rng)?;
        Ok(Embedding { table, rows, d })
    }

    fn check(&self, index: usize) -> Result<(), NnError> {
        if index >= self.rows {
            return Err(NnError::IndexOutOfRange { index, size: self.rows });
        }
        Ok(())
    }

    pub fn row<'a, T: Scalar>(&self, store: &'a ParamStore<T>, index: usize) -> Result<&'a [T], NnError> {
        self.check(index)?;
        Ok(store.value(self.table).row(index))
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, index: usize) -> Result<Vec<T>, NnError> {
        self.row(store, index).map(<[T]>::to_vec)
    }

    pub fn backward<T: Scalar>(&self, grads: &mut Grads<T>, index: usize, g: &[T]) -> Result<(), NnError> {
        self.check(index)?;
        add_assign(grads.get_mut(self.table).row_mut(index), g);
        Ok(())
    }
}
