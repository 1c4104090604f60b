//! Central finite-difference checks of tape gradients.
//!
//! The numerical side only ever runs forward passes on fresh tapes, so it
//! never touches the backward rules it is checking.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared against it instead of themselves.
pub const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Central difference of `f` with respect to `inputs[which][index]`.
pub fn central_difference<F>(f: &mut F, inputs: &[Tensor], which: usize, index: usize, h: f64) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut shifted = inputs.to_vec();
    let orig = inputs[which].data()[index];
    shifted[which].data_mut()[index] = orig + h;
    let plus = f(&shifted)?;
    shifted[which].data_mut()[index] = orig - h;
    let minus = f(&shifted)?;
    Ok((plus - minus) / (2.0 * h))
}

/// Compares `backward` against central differences for every input entry.
///
/// `build` receives the inputs as trainable leaves and must return a scalar.
pub fn check<B>(build: B, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    B: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(w, t)| (0..t.numel()).map(move |i| (w, i)))
        .collect();
    check_coords(build, inputs, &coords, h)
}

/// Same as [`check`] but restricted to the listed `(input, index)` coordinates.
pub fn check_coords<B>(build: B, inputs: &[Tensor], coords: &[(usize, usize)], h: f64) -> Result<GradCheckReport>
where
    B: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get_or_zeros(*v, t))
        .collect();

    let mut forward = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = xs
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for &(w, i) in coords {
        let numeric = central_difference(&mut forward, inputs, w, i, h)?;
        let err = relative_error(analytic[w].data()[i], numeric);
        if err > report.max_rel_err || report.checked == 0 {
            report.max_rel_err = err;
            report.worst = (w, i);
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Reduces `out` to a scalar through fixed pseudo-random weights so that every
/// output entry carries a distinct upstream gradient.
pub fn random_projection(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let weights = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = tape.constant(Tensor::new(shape, weights)?)?;
    let prod = tape.mul(out, w)?;
    tape.sum_all(prod)
}
