//! The negative-sampling CBOW update over abstract row storage, so the same
//! arithmetic runs on exclusively borrowed matrices, on shared matrices
//! updated lock-free by several workers, and in `f64` for gradient checks.

use std::sync::atomic::{AtomicU32, Ordering};

use num_traits::Float;

use super::logistic::Logistic;

/// Row-addressed parameter matrix.
pub trait RowStore<F> {
    fn dim(&self) -> usize;

    /// `acc += scale * row`
    fn add_row_to(&self, row: usize, acc: &mut [F], scale: F);

    fn dot(&self, row: usize, v: &[F]) -> F;

    /// `row += scale * v`
    fn axpy(&mut self, row: usize, v: &[F], scale: F);
}

pub struct DenseRows<'a, F> {
    data: &'a mut [F],
    dim: usize,
}

impl<'a, F> DenseRows<'a, F> {
    pub fn new(data: &'a mut [F], dim: usize) -> Self {
        debug_assert!(dim > 0 && data.len().is_multiple_of(dim));
        DenseRows { data, dim }
    }
}

impl<F: Float> RowStore<F> for DenseRows<'_, F> {
    #[inline]
    fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn add_row_to(&self, row: usize, acc: &mut [F], scale: F) {
        let r = &self.data[row * self.dim..(row + 1) * self.dim];
        for (a, &x) in acc.iter_mut().zip(r) {
            *a = *a + scale * x;
        }
    }

    #[inline]
    fn dot(&self, row: usize, v: &[F]) -> F {
        let r = &self.data[row * self.dim..(row + 1) * self.dim];
        r.iter().zip(v).fold(F::zero(), |s, (&a, &b)| s + a * b)
    }

    #[inline]
    fn axpy(&mut self, row: usize, v: &[F], scale: F) {
        let r = &mut self.data[row * self.dim..(row + 1) * self.dim];
        for (x, &y) in r.iter_mut().zip(v) {
            *x = *x + scale * y;
        }
    }
}

const _: () = assert!(std::mem::align_of::<AtomicU32>() == std::mem::align_of::<f32>());
const _: () = assert!(std::mem::size_of::<AtomicU32>() == std::mem::size_of::<f32>());

/// View an exclusively borrowed `f32` matrix as atomics, so several workers
/// can read and write it concurrently.
pub fn as_shared(data: &mut [f32]) -> &[AtomicU32] {
    // SAFETY: AtomicU32 has the same size, alignment and bit validity as f32
    // (checked above), and the exclusive borrow guarantees that no
    // non-atomic access happens while the returned slice is alive.
    unsafe { &*(data as *mut [f32] as *const [AtomicU32]) }
}

/// Shared `f32` rows with relaxed atomic loads and stores. Concurrent
/// read-modify-write sequences may lose updates; that is accepted.
#[derive(Clone, Copy)]
pub struct SharedRows<'a> {
    data: &'a [AtomicU32],
    dim: usize,
}

impl<'a> SharedRows<'a> {
    pub fn new(data: &'a [AtomicU32], dim: usize) -> Self {
        debug_assert!(dim > 0 && data.len().is_multiple_of(dim));
        SharedRows { data, dim }
    }

    #[inline]
    fn row(&self, row: usize) -> &'a [AtomicU32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }
}

#[inline]
fn load(a: &AtomicU32) -> f32 {
    f32::from_bits(a.load(Ordering::Relaxed))
}

impl RowStore<f32> for SharedRows<'_> {
    #[inline]
    fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn add_row_to(&self, row: usize, acc: &mut [f32], scale: f32) {
        for (a, x) in acc.iter_mut().zip(self.row(row)) {
            *a += scale * load(x);
        }
    }

    #[inline]
    fn dot(&self, row: usize, v: &[f32]) -> f32 {
        self.row(row)
            .iter()
            .zip(v)
            .fold(0.0, |s, (a, &b)| s + load(a) * b)
    }

    #[inline]
    fn axpy(&mut self, row: usize, v: &[f32], scale: f32) {
        for (x, &y) in self.row(row).iter().zip(v) {
            x.store((load(x) + scale * y).to_bits(), Ordering::Relaxed);
        }
    }
}

/// Reusable buffers for [`cbow_update`].
#[derive(Clone, Debug)]
pub struct Scratch<F> {
    hidden: Vec<F>,
    grad: Vec<F>,
}

impl<F: Float> Scratch<F> {
    pub fn new(dim: usize) -> Self {
        Scratch {
            hidden: vec![F::zero(); dim],
            grad: vec![F::zero(); dim],
        }
    }

    /// The averaged context vector of the last update.
    pub fn hidden(&self) -> &[F] {
        &self.hidden
    }
}

/// One negative-sampling step: predict `target` (label 1) and each of
/// `negatives` (label 0) from the mean of the `features` input rows.
///
/// Output rows move along `lr * (label - sigmoid(h . o)) * h`; every feature
/// row moves along the accumulated input gradient divided by the number of
/// features. Returns `-ln sigmoid(h . o_t) - sum ln sigmoid(-h . o_n)`,
/// evaluated before any parameter changes.
#[allow(clippy::too_many_arguments)]
pub fn cbow_update<F, I, O, L>(
    input: &mut I,
    output: &mut O,
    features: &[u32],
    target: u32,
    negatives: &[u32],
    lr: F,
    logistic: &L,
    scratch: &mut Scratch<F>,
) -> f64
where
    F: Float,
    I: RowStore<F>,
    O: RowStore<F>,
    L: Logistic<F>,
{
    if features.is_empty() {
        return 0.0;
    }
    let Scratch { hidden, grad } = scratch;
    hidden.iter_mut().for_each(|x| *x = F::zero());
    grad.iter_mut().for_each(|x| *x = F::zero());

    let inv_n = F::one() / F::from(features.len()).unwrap();
    for &f in features {
        input.add_row_to(f as usize, hidden, F::one());
    }
    hidden.iter_mut().for_each(|x| *x = *x * inv_n);

    let mut loss = 0.0;
    let labelled = std::iter::once((target, true)).chain(negatives.iter().map(|&n| (n, false)));
    for (word, positive) in labelled {
        let score = output.dot(word as usize, hidden);
        let label = if positive { F::one() } else { F::zero() };
        loss += if positive {
            logistic.neg_log_sigmoid(score)
        } else {
            logistic.neg_log_sigmoid(-score)
        };
        let g = (label - logistic.sigmoid(score)) * lr;
        output.add_row_to(word as usize, grad, g);
        output.axpy(word as usize, hidden, g);
    }

    for &f in features {
        input.axpy(f as usize, grad, inv_n);
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::logistic::ExactLogistic;

    #[test]
    fn dense_and_shared_agree() {
        let dim = 3;
        let init_in: Vec<f32> = (0..12).map(|i| (i as f32 * 0.37).sin() * 0.3).collect();
        let init_out: Vec<f32> = (0..12).map(|i| (i as f32 * 0.71).cos() * 0.2).collect();

        let (mut a_in, mut a_out) = (init_in.clone(), init_out.clone());
        let mut s = Scratch::new(dim);
        let la = cbow_update(
            &mut DenseRows::new(&mut a_in, dim),
            &mut DenseRows::new(&mut a_out, dim),
            &[0, 2, 3],
            1,
            &[2, 3],
            0.1f32,
            &ExactLogistic,
            &mut s,
        );

        let (mut b_in, mut b_out) = (init_in, init_out);
        let lb = {
            let si = as_shared(&mut b_in);
            let so = as_shared(&mut b_out);
            cbow_update(
                &mut SharedRows::new(si, dim),
                &mut SharedRows::new(so, dim),
                &[0, 2, 3],
                1,
                &[2, 3],
                0.1f32,
                &ExactLogistic,
                &mut s,
            )
        };
        assert_eq!(la, lb);
        assert_eq!(a_in, b_in);
        assert_eq!(a_out, b_out);
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let mut inp = vec![0.5f64; 8];
        let mut out = vec![0.25f64; 8];
        let (i0, o0) = (inp.clone(), out.clone());
        let loss = cbow_update(
            &mut DenseRows::new(&mut inp, 2),
            &mut DenseRows::new(&mut out, 2),
            &[0, 1],
            2,
            &[3],
            0.0,
            &ExactLogistic,
            &mut Scratch::new(2),
        );
        assert!(loss > 0.0);
        assert_eq!(inp, i0);
        assert_eq!(out, o0);
    }
}
