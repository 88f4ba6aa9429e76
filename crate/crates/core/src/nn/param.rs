use ndarray::{ArrayD, IxDyn, NdFloat};

/// A tensor owned by a layer together with its accumulated gradient.
///
/// Non-trainable params (normalization running statistics) are visited for
/// checkpointing but skipped by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
    pub trainable: bool,
}

impl<F: NdFloat> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(value: ArrayD<F>) -> Self {
        Param {
            trainable: false,
            ..Param::new(value)
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Param::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn filled(shape: &[usize], v: F) -> Self {
        Param::new(ArrayD::from_elem(IxDyn(shape), v))
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn values(&self) -> &[F] {
        self.value.as_slice().expect("params are contiguous")
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        self.value.as_slice_mut().expect("params are contiguous")
    }

    pub fn grads(&self) -> &[F] {
        self.grad.as_slice().expect("params are contiguous")
    }

    pub fn grads_mut(&mut self) -> &mut [F] {
        self.grad.as_slice_mut().expect("params are contiguous")
    }
}

/// Anything holding named parameters.
///
/// Names are joined with `.`; the resulting paths are the checkpoint keys.
pub trait Module<F: NdFloat> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                n += p.value.len();
            }
        });
        n
    }

    /// `(path, shape)` of every param and buffer in visit order.
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name.to_string(), p.shape().to_vec())));
        out
    }
}

pub fn join_path(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
