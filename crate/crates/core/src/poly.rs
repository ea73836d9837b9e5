//! Polynomials in the centered fast counters, truncated at total degree two.
//!
//! Under the order-two closure every central moment of order three or more
//! is zero, so multiplying out products of affine factors and discarding the
//! cubic and higher terms loses nothing that the expectation could see.

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct QuadPoly {
    dims: usize,
    constant: f64,
    linear: Vec<f64>,
    /// Symmetric `dims x dims` matrix `Q`, row-major; the quadratic part is `x^T Q x`.
    quadratic: Vec<f64>,
    /// Set once a nonzero term of degree >= 3 has been discarded.
    truncated: bool,
}

impl QuadPoly {
    pub(crate) fn constant(dims: usize, value: f64) -> Self {
        QuadPoly {
            dims,
            constant: value,
            linear: vec![0.0; dims],
            quadratic: vec![0.0; dims * dims],
            truncated: false,
        }
    }

    /// Multiplies in place by `a + b . x`.
    pub(crate) fn mul_affine(&mut self, a: f64, b: &[f64]) {
        debug_assert_eq!(b.len(), self.dims);
        let q = self.dims;
        let b_nonzero = b.iter().any(|&v| v != 0.0);
        if b_nonzero && self.quadratic.iter().any(|&v| v != 0.0) {
            self.truncated = true;
        }
        for j in 0..q {
            for k in 0..q {
                let cross = 0.5 * (self.linear[j] * b[k] + self.linear[k] * b[j]);
                self.quadratic[j * q + k] = a * self.quadratic[j * q + k] + cross;
            }
        }
        for (l, &bj) in self.linear.iter_mut().zip(b) {
            *l = a * *l + self.constant * bj;
        }
        self.constant *= a;
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        self.constant *= factor;
        self.linear.iter_mut().for_each(|v| *v *= factor);
        self.quadratic.iter_mut().for_each(|v| *v *= factor);
    }

    /// Expectation when `x` has zero mean, covariance `cov` (row-major) and
    /// vanishing central moments above order two.
    pub(crate) fn expectation(&self, cov: &[f64]) -> f64 {
        self.constant
            + self
                .quadratic
                .iter()
                .zip(cov)
                .map(|(q, s)| q * s)
                .sum::<f64>()
    }

    pub(crate) fn was_truncated(&self) -> bool {
        self.truncated
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_of_affine() {
        // (3 + x)^2 = 9 + 6x + x^2, E = 9 + var
        let mut p = QuadPoly::constant(1, 1.0);
        p.mul_affine(3.0, &[1.0]);
        p.mul_affine(3.0, &[1.0]);
        assert!(!p.was_truncated());
        assert_eq!(p.expectation(&[2.0]), 11.0);
    }

    #[test]
    fn cubic_terms_are_dropped_and_flagged() {
        let mut p = QuadPoly::constant(1, 1.0);
        for _ in 0..3 {
            p.mul_affine(0.0, &[1.0]);
        }
        assert!(p.was_truncated());
        assert_eq!(p.expectation(&[5.0]), 0.0);
    }

    #[test]
    fn cross_term_is_symmetric() {
        // (x0)(x1) -> E = cov01
        let mut p = QuadPoly::constant(2, 1.0);
        p.mul_affine(0.0, &[1.0, 0.0]);
        p.mul_affine(0.0, &[0.0, 1.0]);
        let cov = [1.0, 0.3, 0.3, 2.0];
        assert!((p.expectation(&cov) - 0.3).abs() < 1e-15);
    }
}
