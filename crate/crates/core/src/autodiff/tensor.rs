use std::fmt;
use std::rc::Rc;

use super::tape::Tape;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major tensor with an optional handle into a differentiation tape.
///
/// Cloning is cheap: the value buffer is reference counted. A tensor without
/// a tape handle is *detached* and never carries gradient.
#[derive(Clone)]
pub struct Tensor<T: Real> {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<Vec<T>>,
    pub(crate) node: Option<(Tape<T>, usize)>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    /// Builds a detached tensor, checking that `shape` matches `data`.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Self::detached(shape, data))
    }

    pub(crate) fn detached(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            shape,
            data: Rc::new(data),
            node: None,
        }
    }

    /// 0-d tensor holding one value.
    pub fn scalar(x: T) -> Self {
        Self::detached(Vec::new(), vec![x])
    }

    /// 1-d tensor.
    pub fn vector(data: Vec<T>) -> Self {
        Self::detached(vec![data.len()], data)
    }

    /// 2-d tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("Tensor::from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Ok(Self::detached(vec![rows.len(), cols], data))
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::detached(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::NotScalar(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    /// Row `i` of a 2-d tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> Option<&Tape<T>> {
        self.node.as_ref().map(|(t, _)| t)
    }

    /// Same values, no tape handle.
    pub fn detach(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Mutable access to the values of a detached tensor (copy-on-write).
    pub fn data_mut(&mut self) -> &mut [T] {
        self.node = None;
        Rc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        Self::detached(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    /// Converts to another scalar type (detached).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::detached(
            self.shape.clone(),
            self.data.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
        )
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.shape);
        if self.data.len() <= SHOWN {
            d.field("data", &self.data.as_slice());
        } else {
            d.field("data", &format_args!("{:?} …", &self.data[..SHOWN]));
        }
        d.field("attached", &self.is_attached()).finish()
    }
}
