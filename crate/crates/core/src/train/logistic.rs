use num_traits::Float;

const TABLE_SIZE: usize = 512;
const MAX_SIGMOID: f64 = 8.0;

/// Logistic function used by the negative-sampling update.
pub trait Logistic<F> {
    fn sigmoid(&self, x: F) -> F;

    /// `-ln sigmoid(x)`, the loss of a positive example with score `x`.
    fn neg_log_sigmoid(&self, x: F) -> f64;
}

/// Exact logistic via `exp`, with a numerically stable log loss.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactLogistic;

impl<F: Float> Logistic<F> for ExactLogistic {
    #[inline]
    fn sigmoid(&self, x: F) -> F {
        F::one() / (F::one() + (-x).exp())
    }

    #[inline]
    fn neg_log_sigmoid(&self, x: F) -> f64 {
        let x = x.to_f64().unwrap_or(0.0);
        if x > 0.0 {
            (-x).exp().ln_1p()
        } else {
            -x + x.exp().ln_1p()
        }
    }
}

/// 512-entry lookup table over [-8, 8]; scores outside saturate to 0 or 1.
#[derive(Clone, Debug)]
pub struct SigmoidTable {
    table: Vec<f32>,
}

impl Default for SigmoidTable {
    fn default() -> Self {
        let table = (0..=TABLE_SIZE)
            .map(|i| {
                let x = (i as f64 * 2.0 * MAX_SIGMOID) / TABLE_SIZE as f64 - MAX_SIGMOID;
                (1.0 / (1.0 + (-x).exp())) as f32
            })
            .collect();
        SigmoidTable { table }
    }
}

impl SigmoidTable {
    #[inline]
    fn lookup(&self, x: f64) -> f32 {
        if x <= -MAX_SIGMOID {
            0.0
        } else if x >= MAX_SIGMOID {
            1.0
        } else {
            let i = ((x + MAX_SIGMOID) * TABLE_SIZE as f64 / MAX_SIGMOID / 2.0) as usize;
            self.table[i]
        }
    }
}

impl<F: Float> Logistic<F> for SigmoidTable {
    #[inline]
    fn sigmoid(&self, x: F) -> F {
        F::from(self.lookup(x.to_f64().unwrap_or(0.0))).unwrap_or_else(F::zero)
    }

    #[inline]
    fn neg_log_sigmoid(&self, x: F) -> f64 {
        -(self.lookup(x.to_f64().unwrap_or(0.0)) as f64 + 1e-5).ln()
    }
}

/// Either flavour, chosen at runtime from the training configuration.
#[derive(Clone, Debug)]
pub enum AnyLogistic {
    Exact(ExactLogistic),
    Table(SigmoidTable),
}

impl AnyLogistic {
    pub fn new(exact: bool) -> Self {
        if exact {
            AnyLogistic::Exact(ExactLogistic)
        } else {
            AnyLogistic::Table(SigmoidTable::default())
        }
    }
}

impl<F: Float> Logistic<F> for AnyLogistic {
    #[inline]
    fn sigmoid(&self, x: F) -> F {
        match self {
            AnyLogistic::Exact(e) => e.sigmoid(x),
            AnyLogistic::Table(t) => t.sigmoid(x),
        }
    }

    #[inline]
    fn neg_log_sigmoid(&self, x: F) -> f64 {
        match self {
            AnyLogistic::Exact(e) => Logistic::<F>::neg_log_sigmoid(e, x),
            AnyLogistic::Table(t) => Logistic::<F>::neg_log_sigmoid(t, x),
        }
    }
}
