use super::AutodiffError;

/// Dense row-major tensor of 32-bit floats.
///
/// Immutable after creation; construction validates that the data length
/// matches the shape product and that every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, AutodiffError> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(AutodiffError::InvalidOperand {
                op: "tensor".into(),
                detail: format!("extents must be positive, got {shape:?}"),
            });
        }
        if data.len() != numel {
            return Err(AutodiffError::ShapeMismatch {
                op: "tensor".into(),
                detail: format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: "tensor".into() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn scalar(v: f32) -> Result<Self, AutodiffError> {
        Tensor::new(vec![1], vec![v])
    }

    pub fn vector(data: Vec<f32>) -> Result<Self, AutodiffError> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, AutodiffError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f32 {
        assert!(self.is_scalar(), "item() on non-scalar shape {:?}", self.shape);
        self.data[0]
    }

    /// Interpret as rows of a matrix: 1-D tensors are a single row.
    pub(crate) fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("rows_cols on rank-{} tensor", self.shape.len()),
        }
    }
}
