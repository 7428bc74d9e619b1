//! Two-sided random-sign Hadamard rotation.
//!
//! The transform is `U_l · W · U_rᵀ` with `U = H · diag(signs)` and `H` the
//! orthonormal Walsh–Hadamard matrix. Dimensions that are not powers of two
//! are zero-padded up to the next power of two; the inverse truncates back.

use ndarray::{Array2, ArrayViewMut1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seeds::{self, Stream};

/// Random ±1 vector, a deterministic function of `(d, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignVector {
    signs: Vec<f64>,
    seed: u64,
}

impl SignVector {
    pub fn new(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signs = (0..d)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        SignVector { signs, seed }
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }
}

/// What to do with a dimension that is not a power of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    ZeroPad,
    Disallow,
}

/// In-place orthonormal fast Walsh–Hadamard transform. `x.len()` must be a power of two.
pub fn fwht(mut x: ArrayViewMut1<'_, f64>) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let a = x[j];
                let b = x[j + h];
                x[j] = a + b;
                x[j + h] = a - b;
            }
        }
        h *= 2;
    }
    let norm = 1.0 / (n as f64).sqrt();
    x.mapv_inplace(|v| v * norm);
}

fn side_signs(seed: u64, rows: usize, cols: usize) -> (SignVector, SignVector) {
    (
        SignVector::new(rows, seeds::split(seed, Stream::SignsLeft, 0)),
        SignVector::new(cols, seeds::split(seed, Stream::SignsRight, 0)),
    )
}

fn padded_dims(rows: usize, cols: usize, padding: Padding) -> Result<(usize, usize)> {
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    if padding == Padding::Disallow && !(rows.is_power_of_two() && cols.is_power_of_two()) {
        return Err(Error::Dimension(format!(
            "{rows}x{cols} is not a power-of-two shape and padding is disabled"
        )));
    }
    Ok((rows.next_power_of_two(), cols.next_power_of_two()))
}

/// Applies `H · diag(signs)` along one axis.
fn rotate(m: &mut Array2<f64>, axis: Axis, signs: &SignVector) {
    for mut lane in m.lanes_mut(axis) {
        lane.iter_mut().zip(signs.signs()).for_each(|(v, s)| *v *= s);
        fwht(lane);
    }
}

/// Applies `diag(signs) · H` along one axis (the transpose of [`rotate`]).
fn unrotate(m: &mut Array2<f64>, axis: Axis, signs: &SignVector) {
    for mut lane in m.lanes_mut(axis) {
        fwht(lane.view_mut());
        lane.iter_mut().zip(signs.signs()).for_each(|(v, s)| *v *= s);
    }
}

/// Rotates `w` on both sides. The output has padded (power-of-two) shape.
pub fn incoherence_transform(w: &Array2<f64>, seed: u64, padding: Padding) -> Result<Array2<f64>> {
    let (rows, cols) = w.dim();
    let (pr, pc) = padded_dims(rows, cols, padding)?;
    let mut out = Array2::zeros((pr, pc));
    out.slice_mut(ndarray::s![..rows, ..cols]).assign(w);
    let (left, right) = side_signs(seed, pr, pc);
    rotate(&mut out, Axis(0), &left);
    rotate(&mut out, Axis(1), &right);
    Ok(out)
}

/// Exact inverse of [`incoherence_transform`]; `original` is the pre-padding shape.
pub fn inverse_incoherence_transform(
    w: &Array2<f64>,
    seed: u64,
    original: (usize, usize),
) -> Result<Array2<f64>> {
    let (pr, pc) = w.dim();
    if !(pr.is_power_of_two() && pc.is_power_of_two()) {
        return Err(Error::Dimension(format!("{pr}x{pc} is not a power-of-two shape")));
    }
    let (rows, cols) = original;
    if rows == 0 || cols == 0 || rows.next_power_of_two() != pr || cols.next_power_of_two() != pc {
        return Err(Error::Dimension(format!(
            "original shape {rows}x{cols} does not pad to {pr}x{pc}"
        )));
    }
    let mut out = w.clone();
    let (left, right) = side_signs(seed, pr, pc);
    unrotate(&mut out, Axis(0), &left);
    unrotate(&mut out, Axis(1), &right);
    Ok(out.slice(ndarray::s![..rows, ..cols]).to_owned())
}
