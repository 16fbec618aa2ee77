//! Affine layers shared by the encoder, discriminator and projector.

use rand::Rng;

use crate::tensor::{Bindings, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// `rows × cols` entries drawn from `U(-1/√fan_in, 1/√fan_in)`, the default
/// affine-layer initialization of common deep learning frameworks.
pub fn fan_in_uniform(fan_in: usize, rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let limit = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// `y = x·W + b` with `W: in×out` and `b: 1×out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(in_dim, in_dim, out_dim, rng),
        );
        let bias = store.add(
            format!("{name}.bias"),
            fan_in_uniform(in_dim, 1, out_dim, rng),
        );
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var, TensorError> {
        let xw = tape.matmul(x, params.get(self.weight))?;
        tape.broadcast_add_row(xw, params.get(self.bias))
    }

    /// Sets `W` to the (possibly rectangular) identity and `b` to zero.
    pub fn set_identity(&self, store: &mut ParamStore) {
        let mut w = Tensor::zeros(&[self.in_dim, self.out_dim]);
        for i in 0..self.in_dim.min(self.out_dim) {
            w.data_mut()[i * self.out_dim + i] = 1.0;
        }
        store.set(self.weight, w).expect("shape preserved");
        store
            .set(self.bias, Tensor::zeros(&[1, self.out_dim]))
            .expect("shape preserved");
    }

    pub fn set_zero(&self, store: &mut ParamStore) {
        store
            .set(self.weight, Tensor::zeros(&[self.in_dim, self.out_dim]))
            .expect("shape preserved");
        store
            .set(self.bias, Tensor::zeros(&[1, self.out_dim]))
            .expect("shape preserved");
    }
}

/// Linear → ReLU → Linear.
#[derive(Debug, Clone, Copy)]
pub struct TwoLayer {
    pub first: Linear,
    pub second: Linear,
}

impl TwoLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: (usize, usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let (i, h, o) = dims;
        Self {
            first: Linear::new(store, &format!("{name}.0"), i, h, rng),
            second: Linear::new(store, &format!("{name}.1"), h, o, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var, TensorError> {
        let h = self.first.forward(tape, params, x)?;
        let h = tape.relu(h);
        self.second.forward(tape, params, h)
    }

    pub fn out_dim(&self) -> usize {
        self.second.out_dim
    }
}
