use crate::error::{AutodiffError, Result};
use crate::Real;

/// Dense row-major array of [`Real`] values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<Real>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(AutodiffError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: Real) -> Self {
        let shape = shape.into();
        let data = vec![value; numel(&shape)];
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: Real) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a `[rows.len(), N]` matrix.
    pub fn from_rows<const N: usize>(rows: &[[Real; N]]) -> Self {
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self {
            shape: vec![rows.len(), N],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    ///
    /// Panics if the tensor holds more than one element.
    pub fn item(&self) -> Real {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn fill(&mut self, value: Real) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn max_abs(&self) -> Real {
        self.data.iter().fold(0.0, |m: Real, x| m.max(x.abs()))
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn dim_from_right(shape: &[usize], k: usize) -> usize {
    if k < shape.len() {
        shape[shape.len() - 1 - k]
    } else {
        1
    }
}

/// Strides of `shape` viewed at rank `rank`, zero on broadcast dimensions.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let pad = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 || out[pad + i] == 1 {
            strides[pad + i] = acc;
        }
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, in_index)` for every element of the broadcast output.
fn for_each_broadcast(shape: &[usize], out: &[usize], mut f: impl FnMut(usize, usize)) {
    let total = numel(out);
    if total == 0 {
        return;
    }
    let strides = broadcast_strides(shape, out);
    let rank = out.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let inner = out[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut counter = vec![0usize; rank];
    let mut base = 0usize;
    let mut o = 0usize;
    while o < total {
        for j in 0..inner {
            f(o + j, base + j * inner_stride);
        }
        o += inner;
        // advance the odometer over the outer dimensions
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            counter[d] += 1;
            base += strides[d];
            if counter[d] < out[d] {
                break;
            }
            base -= strides[d] * out[d];
            counter[d] = 0;
        }
    }
}

/// Materializes `data` (of `shape`) broadcast to `out`.
pub(crate) fn expand(data: &[Real], shape: &[usize], out: &[usize]) -> Vec<Real> {
    if shape == out {
        return data.to_vec();
    }
    let mut result = vec![0.0; numel(out)];
    for_each_broadcast(shape, out, |o, i| result[o] = data[i]);
    result
}

/// Sums `grad` (of the broadcast shape `out`) back down to `shape`.
pub(crate) fn reduce_to(grad: &[Real], out: &[usize], shape: &[usize]) -> Vec<Real> {
    if shape == out {
        return grad.to_vec();
    }
    let mut result = vec![0.0; numel(shape)];
    for_each_broadcast(shape, out, |o, i| result[i] += grad[o]);
    result
}
