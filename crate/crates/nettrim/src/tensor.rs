//! Dense row-major tensor of 32-bit floats, the universal value carrier.
//!
//! The element type is generic so the same layer kernels can run in an f64
//! verification mode for tight gradient checks; everything user-facing is
//! the `f32` alias [`Tensor`].

use ndarray::{ArrayView2, ArrayViewMut2, NdFloat};
use num_traits::FromPrimitive;

use crate::error::{Error, Result};

/// Element types the engine computes with.
pub trait Element: NdFloat + FromPrimitive {}
impl Element for f32 {}
impl Element for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorT<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

/// The engine's working tensor: f32 storage and compute.
pub type Tensor = TensorT<f32>;

impl<F: Element> TensorT<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Input(format!(
                "tensor shape {shape:?} has a zero extent"
            )));
        }
        if data.len() != expect {
            return Err(Error::Input(format!(
                "tensor data length {} does not match shape {:?} (product {})",
                data.len(),
                shape,
                expect
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![F::zero(); n],
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

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Borrow as a 2-D matrix view; the shape product must match.
    pub fn view2(&self, rows: usize, cols: usize) -> ArrayView2<'_, F> {
        debug_assert_eq!(rows * cols, self.data.len());
        ArrayView2::from_shape((rows, cols), &self.data).expect("tensor view shape")
    }

    pub fn view2_mut(&mut self, rows: usize, cols: usize) -> ArrayViewMut2<'_, F> {
        debug_assert_eq!(rows * cols, self.data.len());
        ArrayViewMut2::from_shape((rows, cols), &mut self.data).expect("tensor view shape")
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert elementwise to another element type.
    pub fn cast<G: Element>(&self) -> TensorT<G> {
        TensorT {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| G::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    /// Bitwise equality; `PartialEq` on floats would treat -0.0 == 0.0.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_f64().unwrap().to_bits() == b.to_f64().unwrap().to_bits())
    }
}

impl Tensor {
    /// Largest absolute difference between two same-shaped tensors.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}
