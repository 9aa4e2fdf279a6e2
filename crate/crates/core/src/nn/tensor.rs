use crate::error::{Error, Result};

/// Dense `(batch, channels, height, width)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::invalid(format!(
                "tensor {dims:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor contains non-finite values"));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub(crate) fn from_parts(dims: [usize; 4], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    /// `(channels, height, width)` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        [self.dims[1], self.dims[2], self.dims[3]]
    }

    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    /// Stacks tensors along the batch axis.
    pub fn concat_batch(parts: &[Tensor4]) -> Result<Tensor4> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cannot concatenate an empty tensor list"))?;
        let shape = first.sample_shape();
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut batch = 0;
        for p in parts {
            if p.sample_shape() != shape {
                return Err(Error::invalid(format!(
                    "sample shape {:?} does not match {:?}",
                    p.sample_shape(),
                    shape
                )));
            }
            batch += p.batch();
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4::from_parts(
            [batch, shape[0], shape[1], shape[2]],
            data,
        ))
    }

    /// Splits back into single-sample tensors.
    pub fn split_batch(&self) -> Vec<Tensor4> {
        let [_, c, h, w] = self.dims;
        (0..self.batch())
            .map(|n| Tensor4::from_parts([1, c, h, w], self.sample(n).to_vec()))
            .collect()
    }
}
