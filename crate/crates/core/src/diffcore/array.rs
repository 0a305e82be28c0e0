use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array. Most of the engine only needs vectors (rank 1)
/// and matrices (rank 2).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> DenseArray<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite entry at flat index {i}")));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[1],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `out = self · x` for a rank-2 array.
    pub fn matvec_into(&self, x: &[S], out: &mut [S]) -> Result<()> {
        if x.len() != self.cols() || out.len() != self.rows() {
            return Err(Error::Dimension(format!(
                "matvec {:?} with x[{}] into out[{}]",
                self.shape,
                x.len(),
                out.len()
            )));
        }
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
        Ok(())
    }

    pub fn matvec(&self, x: &[S]) -> Result<Vec<S>> {
        let mut out = vec![S::zero(); self.rows()];
        self.matvec_into(x, &mut out)?;
        Ok(out)
    }

    /// `selfᵀ · y` for a rank-2 array.
    pub fn matvec_t(&self, y: &[S]) -> Result<Vec<S>> {
        if y.len() != self.rows() {
            return Err(Error::Dimension(format!(
                "transposed matvec {:?} with y[{}]",
                self.shape,
                y.len()
            )));
        }
        let mut out = vec![S::zero(); self.cols()];
        for (r, &yr) in y.iter().enumerate() {
            if yr != S::zero() {
                axpy(yr, self.row(r), &mut out);
            }
        }
        Ok(out)
    }

    /// `self += scale · a bᵀ`.
    pub fn add_outer(&mut self, scale: S, a: &[S], b: &[S]) {
        debug_assert_eq!(a.len(), self.rows());
        debug_assert_eq!(b.len(), self.cols());
        for (r, &ar) in a.iter().enumerate() {
            let s = scale * ar;
            if s != S::zero() {
                axpy(s, b, self.row_mut(r));
            }
        }
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> DenseArray<T> {
        DenseArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `y += alpha · x`.
#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm<S: Scalar>(x: &[S]) -> S {
    dot(x, x).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length_and_finiteness() {
        assert!(DenseArray::<f64>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        assert!(DenseArray::<f64>::from_vec(&[2], vec![1.0, f64::NAN]).is_err());
        let a = DenseArray::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(a.matvec(&[1., 0., -1.]).unwrap(), vec![-2., -2.]);
        assert_eq!(a.matvec_t(&[1., 1.]).unwrap(), vec![5., 7., 9.]);
        assert!(a.matvec(&[1.0]).is_err());
    }

    #[test]
    fn outer_product_update() {
        let mut a = DenseArray::<f32>::zeros(&[2, 2]);
        a.add_outer(2.0, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(a.as_slice(), &[6.0, 8.0, 12.0, 16.0]);
    }
}
