//! Compensated accumulation for the grid quadratures.
//!
//! Grid energies are sums of up to ~1.7e7 nonnegative cell terms spanning many
//! orders of magnitude; plain left-to-right `+=` drifts enough to break the
//! cross-thread-count reproducibility bound (≤1e-12 relative) the serializers
//! promise. Two tools, used together:
//!
//! * [`NeumaierSum`] — running Kahan–Neumaier compensation, O(1) state;
//! * [`pairwise_sum`] — recursive pairwise reduction of a finished slice.

/// Kahan–Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    s: f64,
    c: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.s + self.c
    }
}

/// Pairwise (cascade) sum; error O(log n)·ε instead of O(n)·ε.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    // below this length a compensated linear pass is both faster and tighter
    const LEAF: usize = 64;
    if xs.len() <= LEAF {
        let mut acc = NeumaierSum::new();
        for &x in xs {
            acc.add(x);
        }
        return acc.value();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
