use crate::error::{Error, Result};
use crate::num::Scalar;

/// Dense row-major tensor. Shapes are dynamic; all hot paths operate on the
/// flat `data` slice with externally known geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S = crate::num::Real> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::ZERO; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::usage(format!(
                "tensor data length {} does not match shape {:?} (= {})",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
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

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn fill(&mut self, value: S) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Verifies every element is finite, per the tensor invariant that ops
    /// produce finite values only.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::numerical(format!(
                "non-finite value in tensor ({context})"
            )))
        }
    }

    pub fn map_to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }
}

/// A learnable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct Param<S = crate::num::Real> {
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub m: Tensor<S>,
    pub v: Tensor<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(value: Tensor<S>) -> Self {
        let shape = value.shape().to_vec();
        Param {
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::ZERO);
    }
}

/// Named view over a module's parameters, used by the optimizer, the target
/// sync, and checkpointing. Names are stable identifiers like `trunk.conv1.w`.
pub trait Parameterized<S: Scalar> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<S>));

    fn param_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _| names.push(name.to_string()));
        names
    }

    fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }

    /// Copies parameter values (not moments) from `src`, matching by name.
    fn copy_values_from(&mut self, src: &mut dyn Parameterized<S>) {
        let mut values: Vec<(String, Vec<S>)> = Vec::new();
        src.visit_params(&mut |name, p| values.push((name.to_string(), p.value.data().to_vec())));
        let mut idx = 0;
        self.visit_params(&mut |name, p| {
            let (src_name, src_data) = &values[idx];
            assert_eq!(name, src_name, "parameter order mismatch in copy");
            p.value.data_mut().copy_from_slice(src_data);
            idx += 1;
        });
        assert_eq!(idx, values.len(), "parameter count mismatch in copy");
    }
}
