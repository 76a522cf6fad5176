use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::{Bound, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f32 = 0.2;

/// He-normal weights scaled for the leaky-ReLU gain; zero bias.
fn he_normal<R: Rng + ?Sized>(rng: &mut R, out: usize, inp: usize, slope: f32) -> Tensor {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    let std = gain / (inp as f32).sqrt();
    let normal = Normal::new(0.0f32, std).expect("std is positive and finite");
    let data = (0..out * inp).map(|_| normal.sample(rng)).collect();
    Tensor::new(vec![out, inp], data).expect("shape matches generated data")
}

/// Fully connected layer, `y = x Wᵀ + b` with `W: [out, in]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        slope: f32,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            he_normal(rng, outputs, inputs, slope),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn param_count(&self) -> usize {
        self.outputs * self.inputs + self.outputs
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.inputs {
            return Err(Error::Shape {
                op: "linear",
                left: tape.value(x).shape().to_vec(),
                right: vec![self.outputs, self.inputs],
            });
        }
        let h = tape.matmul_t(x, params.var(self.weight), false, true)?;
        tape.add_row(h, params.var(self.bias))
    }
}

/// `x + L2(leaky(L1(x)))`, both layers `width × width`.
#[derive(Debug, Clone, Copy)]
pub struct ResidualBlock {
    pub first: Linear,
    pub second: Linear,
    pub slope: f32,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        slope: f32,
        rng: &mut R,
    ) -> Self {
        Self {
            first: Linear::new(store, &format!("{name}.fc1"), width, width, slope, rng),
            second: Linear::new(store, &format!("{name}.fc2"), width, width, slope, rng),
            slope,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let h = self.first.forward(tape, params, x)?;
        let h = tape.leaky_relu(h, self.slope);
        let h = self.second.forward(tape, params, h)?;
        tape.add(x, h)
    }
}

/// Stack of linear layers with leaky ReLU between them. The final layer is
/// followed by an activation only when `activate_last` is set.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub slope: f32,
    pub activate_last: bool,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        slope: f32,
        activate_last: bool,
        rng: &mut R,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], slope, rng))
            .collect();
        Self {
            layers,
            slope,
            activate_last,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, params, x)?;
            if i + 1 < n || self.activate_last {
                x = tape.leaky_relu(x, self.slope);
            }
        }
        Ok(x)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(store: &mut ParamStore, id: ParamId, data: &[f32]) {
        store.get_mut(id).data_mut().copy_from_slice(data);
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let l = Linear::new(&mut store, "l", 2, 2, 0.2, &mut rng);
        set(&mut store, l.weight, &[1.0, 0.0, 0.0, 1.0]);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let y = l.forward(&mut tape, &b, x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn scalar_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let l = Linear::new(&mut store, "l", 1, 1, 0.2, &mut rng);
        set(&mut store, l.weight, &[2.0]);
        set(&mut store, l.bias, &[1.0]);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.leaf(Tensor::vector(vec![3.0]));
        let y = l.forward(&mut tape, &b, x).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0]);
    }

    #[test]
    fn wrong_input_width_reports_both_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let l = Linear::new(&mut store, "l", 3, 2, 0.2, &mut rng);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.leaf(Tensor::matrix(1, 4, vec![0.0; 4]).unwrap());
        match l.forward(&mut tape, &b, x).unwrap_err() {
            Error::Shape { left, right, .. } => {
                assert_eq!(left, vec![1, 4]);
                assert_eq!(right, vec![2, 3]);
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let l = Linear::new(&mut store, "l", 5, 3, 0.2, &mut rng);
        assert_eq!(l.param_count(), 18);
        assert_eq!(store.numel(), 18);
    }

    #[test]
    fn leaky_relu_piecewise() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(y).data(), &[-0.2, 0.0, 2.0]);
        let x = tape.leaf(Tensor::vector(vec![0.5, 1.5, 7.0]));
        let y = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn residual_with_zero_second_layer_is_identity_plus_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let block = ResidualBlock::new(&mut store, "r", 4, 0.2, &mut rng);
        store.get_mut(block.second.weight).data_mut().fill(0.0);
        set(&mut store, block.second.bias, &[0.5, -1.0, 0.0, 2.0]);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.leaf(Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, -1.0, -2.0, -3.0, -4.0]).unwrap());
        let y = block.forward(&mut tape, &b, x).unwrap();
        assert_eq!(
            tape.value(y).data(),
            &[1.5, 1.0, 3.0, 6.0, -0.5, -3.0, -3.0, -2.0]
        );
        assert_eq!(tape.value(y).shape(), tape.value(x).shape());
    }
}
