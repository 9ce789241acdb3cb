//! Central finite differences used when a local objective has no analytic derivative.

use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

/// Per-coordinate step `max(1, |x_j|) · ε^{1/3}`.
#[inline]
pub fn central_step<T: Scalar>(xj: T) -> T {
    T::one().max(xj.abs()) * T::epsilon().cbrt()
}

/// Step for second differences of values, `max(1, |x_j|) · ε^{1/4}`.
#[inline]
fn second_order_step<T: Scalar>(xj: T) -> T {
    T::one().max(xj.abs()) * T::epsilon().sqrt().sqrt()
}

pub fn gradient<T: Scalar>(f: impl Fn(&[T]) -> T, x: &[T]) -> Vec<T> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = central_step(x[j]);
            let plus = x[j] + h;
            let minus = x[j] - h;
            probe[j] = plus;
            let fp = f(&probe);
            probe[j] = minus;
            let fm = f(&probe);
            probe[j] = x[j];
            (fp - fm) / (plus - minus)
        })
        .collect()
}

/// Jacobian of an analytic gradient, symmetrized.
pub fn hessian_from_gradient<T: Scalar>(g: impl Fn(&[T]) -> Vec<T>, x: &[T]) -> DenseMatrix<T> {
    let n = x.len();
    let mut h = DenseMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        let step = central_step(x[j]);
        let plus = x[j] + step;
        let minus = x[j] - step;
        probe[j] = plus;
        let gp = g(&probe);
        probe[j] = minus;
        let gm = g(&probe);
        probe[j] = x[j];
        let denom = plus - minus;
        for k in 0..n {
            h[(k, j)] = (gp[k] - gm[k]) / denom;
        }
    }
    h.symmetrized()
}

/// Hessian from values only, by second central differences.
pub fn hessian_from_values<T: Scalar>(f: impl Fn(&[T]) -> T, x: &[T]) -> DenseMatrix<T> {
    let n = x.len();
    let mut h = DenseMatrix::zeros(n, n);
    let mut p = x.to_vec();
    let f0 = f(x);
    let steps: Vec<T> = x.iter().map(|&v| second_order_step(v)).collect();
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    for j in 0..n {
        let hj = steps[j];
        p[j] = x[j] + hj;
        let fp = f(&p);
        p[j] = x[j] - hj;
        let fm = f(&p);
        p[j] = x[j];
        h[(j, j)] = (fp - two * f0 + fm) / (hj * hj);
        for k in (j + 1)..n {
            let hk = steps[k];
            let mut corner = |sj: T, sk: T| {
                p[j] = x[j] + sj * hj;
                p[k] = x[k] + sk * hk;
                let v = f(&p);
                p[j] = x[j];
                p[k] = x[k];
                v
            };
            let one = T::one();
            let v = (corner(one, one) - corner(one, -one) - corner(-one, one) + corner(-one, -one))
                / (four * hj * hk);
            h[(j, k)] = v;
            h[(k, j)] = v;
        }
    }
    h
}

/// `‖a − b‖_∞ / max(1, ‖a‖_∞)`, the mixed relative error used for derivative checks.
pub fn relative_error<T: Scalar>(reference: &[T], candidate: &[T]) -> T {
    let scale = reference
        .iter()
        .fold(T::one(), |acc, v| acc.max(v.abs()));
    reference
        .iter()
        .zip(candidate)
        .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
        / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient_and_hessian() {
        let f = |x: &[f64]| x[0].powi(3) + x[0] * x[1] * x[1];
        let x = [1.3, -0.7];
        let g = gradient(f, &x);
        let exact = [3.0 * 1.3f64.powi(2) + 0.49, 2.0 * 1.3 * -0.7];
        assert!(relative_error(&exact, &g) < 1e-9);
        let h = hessian_from_values(f, &x);
        assert!((h[(0, 0)] - 6.0 * 1.3).abs() < 1e-5);
        assert!((h[(0, 1)] - 2.0 * -0.7).abs() < 1e-5);
        assert!((h[(1, 1)] - 2.0 * 1.3).abs() < 1e-5);
    }
}
