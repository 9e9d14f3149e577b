//! Dense `f64` linear algebra, a recording tape for reverse-mode gradients,
//! and a named parameter store with momentum SGD.

mod params;
mod tape;
mod tensor;

pub use params::{read_tensors, write_tensors, ParamStore};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor2;

use rand::Rng;

/// Uniform Glorot initialisation for a `fan_in x fan_out` weight.
pub fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor2 {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor2::from_vec(fan_in, fan_out, data).expect("shape matches length")
}
