use rand::Rng;

use super::{check_len, ParamTensor, Parameterized};
use crate::error::{Error, Result};

/// A learned lookup table, initialised uniformly in `+-0.05`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    table: ParamTensor,
}

impl EmbeddingTable {
    pub fn new<R: Rng + ?Sized>(name: &str, rows: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::Shape(format!("embedding table `{name}` must be non-empty")));
        }
        Ok(Self {
            rows,
            dim,
            table: ParamTensor::uniform(name, &[rows, dim], 0.05, rng),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lookup(&self, index: usize) -> Result<&[f64]> {
        if index >= self.rows {
            return Err(Error::Index {
                index,
                rows: self.rows,
            });
        }
        Ok(&self.table.value[index * self.dim..(index + 1) * self.dim])
    }

    /// Adds `grad` into the gradient of row `index`.
    pub fn backward(&mut self, index: usize, grad: &[f64]) -> Result<()> {
        if index >= self.rows {
            return Err(Error::Index {
                index,
                rows: self.rows,
            });
        }
        check_len("embedding gradient", grad.len(), self.dim)?;
        let row = &mut self.table.grad[index * self.dim..(index + 1) * self.dim];
        row.iter_mut().zip(grad).for_each(|(g, d)| *g += d);
        Ok(())
    }

    pub fn row_grad(&self, index: usize) -> &[f64] {
        &self.table.grad[index * self.dim..(index + 1) * self.dim]
    }
}

impl Parameterized for EmbeddingTable {
    fn visit(&self, f: &mut dyn FnMut(&ParamTensor)) {
        f(&self.table)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut ParamTensor)) {
        f(&mut self.table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lookup_is_stable_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let table = EmbeddingTable::new("e", 4, 3, &mut rng).unwrap();
        assert_eq!(table.lookup(0).unwrap(), table.lookup(0).unwrap());
        assert!(table.lookup(3).is_ok());
        assert!(matches!(table.lookup(4), Err(Error::Index { index: 4, rows: 4 })));
        let mut all_small = true;
        table.visit(&mut |p| all_small &= p.value.iter().all(|v| v.abs() <= 0.05));
        assert!(all_small);
    }

    #[test]
    fn backward_touches_only_one_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut table = EmbeddingTable::new("e", 4, 2, &mut rng).unwrap();
        table.backward(2, &[1.0, -2.0]).unwrap();
        table.backward(2, &[0.5, 0.5]).unwrap();
        assert_eq!(table.row_grad(2), &[1.5, -1.5]);
        for r in [0, 1, 3] {
            assert_eq!(table.row_grad(r), &[0.0, 0.0]);
        }
        assert!(table.backward(9, &[0.0, 0.0]).is_err());
    }
}
