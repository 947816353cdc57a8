//! Compensated (Kahan–Neumaier) summation.
//!
//! Primal/dual values and residuals are differences of sums over many
//! cells/faces; the duality gap certifies optimality down to ~1e−13 relative,
//! which plain left-to-right summation cannot resolve reliably.

#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator of terms.
pub fn sum(it: impl IntoIterator<Item = f64>) -> f64 {
    let mut k = Kahan::new();
    for x in it {
        k.add(x);
    }
    k.value()
}
