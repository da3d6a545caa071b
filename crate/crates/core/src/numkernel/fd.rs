use super::Matrix;

/// Central-difference gradient of `f` at `x`:
/// `(f(x + step e_k) - f(x - step e_k)) / (2 step)` for every coordinate `k`.
pub fn finite_difference_gradient(f: impl Fn(&Matrix) -> f64, x: &Matrix, step: f64) -> Matrix {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for k in 0..x.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - step;
        let down = f(&probe);
        probe.as_mut_slice()[k] = orig;
        grad.as_mut_slice()[k] = (up - down) / (2.0 * step);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_difference_gradient(|m| m[(0, 0)] * m[(0, 0)], &Matrix::scalar(3.0), 1e-4);
        assert!((g[(0, 0)] - 6.0).abs() < 1e-7);
    }

    #[test]
    fn constant_and_linear() {
        let x = Matrix::from_vec(2, 3, vec![0.5, -1.0, 2.0, 7.0, 0.0, -3.0]).unwrap();
        let g = finite_difference_gradient(|_| 4.2, &x, 1e-4);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        let g = finite_difference_gradient(|m| m.sum(), &x, 1e-4);
        assert!(g.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }
}
