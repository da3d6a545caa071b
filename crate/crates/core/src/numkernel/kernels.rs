//! Pure dense kernels. Every function here is side-effect free; the tape in
//! [`super::tape`] reuses them for its forward values.

use super::Matrix;
use crate::error::{Error, Result};

/// Rows with a Euclidean norm at or below this are left untouched by
/// [`l2_normalize_rows`] and score 0 in [`cosine_similarity_matrix`].
pub const NORM_EPS: f64 = 1e-12;

/// Lower bound applied to predicted probabilities inside [`kl_rows`].
pub const PRED_FLOOR: f64 = 1e-12;

/// Row-sum tolerance for distributions accepted by [`kl_rows`].
pub const DIST_TOL: f64 = 1e-6;

/// General product `op(a) * op(b)` where `op` optionally transposes.
pub(crate) fn gemm(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Matrix {
    let (m, k) = if ta { (a.cols(), a.rows()) } else { a.shape() };
    let (k2, n) = if tb { (b.cols(), b.rows()) } else { b.shape() };
    debug_assert_eq!(k, k2);
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    let (rsa, csa) = if ta { (1, a.cols() as isize) } else { (a.cols() as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols() as isize) } else { (b.cols() as isize, 1) };
    // SAFETY: strides describe exactly the buffers of `a`, `b` and `out`,
    // whose lengths match the (m, k), (k, n) and (m, n) shapes checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_slice().as_ptr(),
            rsa,
            csa,
            b.as_slice().as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_slice().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(gemm(a, false, b, false))
}

/// `a * b^T`.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::shape(
            "matmul_nt",
            format!("{:?} x {:?}^T", a.shape(), b.shape()),
        ));
    }
    Ok(gemm(a, false, b, true))
}

/// Adds a `1 x n` bias row to every row of `m`.
pub fn add_bias(m: &Matrix, bias: &Matrix) -> Result<Matrix> {
    if bias.rows() != 1 || bias.cols() != m.cols() {
        return Err(Error::shape(
            "add_bias",
            format!("bias {:?} for input {:?}", bias.shape(), m.shape()),
        ));
    }
    let mut out = m.clone();
    let b = bias.as_slice();
    for i in 0..out.rows() {
        for (x, bj) in out.row_mut(i).iter_mut().zip(b) {
            *x += bj;
        }
    }
    Ok(out)
}

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|x| x.max(0.0))
}

pub fn leaky_relu(m: &Matrix, slope: f64) -> Matrix {
    m.map(|x| if x > 0.0 { x } else { slope * x })
}

pub fn concat_cols(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::shape(
            "concat_cols",
            format!("{:?} | {:?}", a.shape(), b.shape()),
        ));
    }
    let cols = a.cols() + b.cols();
    let mut data = Vec::with_capacity(a.rows() * cols);
    for i in 0..a.rows() {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Ok(Matrix::from_raw(a.rows(), cols, data))
}

/// Softmax of `m / temperature` along each row, max-subtracted.
pub fn row_softmax(m: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut out = m.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i), temperature);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = ((*x - max) / temperature).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

pub fn l2_normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > NORM_EPS {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    out
}

/// `B x C` matrix of cosine similarities between the rows of `a` and `b`.
/// A zero-norm row on either side scores 0.
pub fn cosine_similarity_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::shape(
            "cosine_similarity_matrix",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let sim = gemm(&l2_normalize_rows(a), false, &l2_normalize_rows(b), true);
    Ok(sim.map(|x| x.clamp(-1.0, 1.0)))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid for `x > 0`, `gamma * exp(gamma * x)` for `x <= 0`.
///
/// The two branches do not meet: the left value at 0 is `gamma` while the
/// right limit is 0.5.
#[inline]
pub fn leaky_sigmoid(x: f64, gamma: f64) -> f64 {
    if x > 0.0 {
        sigmoid(x)
    } else {
        gamma * (gamma * x).exp()
    }
}

#[inline]
pub fn leaky_sigmoid_grad(x: f64, gamma: f64) -> f64 {
    if x > 0.0 {
        let s = sigmoid(x);
        s * (1.0 - s)
    } else {
        gamma * gamma * (gamma * x).exp()
    }
}

fn check_distribution(m: &Matrix, what: &str) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > DIST_TOL || row.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{what} row {i} is not a distribution (sum {s})"
            )));
        }
    }
    Ok(())
}

/// Mean over rows of `KL(target_i || pred_i)`, with `0 log 0 = 0` and the
/// prediction floored at [`PRED_FLOOR`].
pub fn kl_rows(target: &Matrix, pred: &Matrix) -> Result<f64> {
    target.check_same_shape(pred, "kl_rows")?;
    check_distribution(target, "target")?;
    check_distribution(pred, "prediction")?;
    if target.rows() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (t, p) in target.as_slice().iter().zip(pred.as_slice()) {
        if *t > 0.0 {
            total += t * (t / p.max(PRED_FLOOR)).ln();
        }
    }
    Ok(total / target.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn softmax_uniform_and_closed_form() {
        let s = row_softmax(&m(&[&[0.0, 0.0, 0.0]]), 1.0).unwrap();
        for &x in s.as_slice() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let s = row_softmax(&m(&[&[0.0, 3f64.ln()]]), 1.0).unwrap();
        assert_abs_diff_eq!(s[(0, 0)], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(s[(0, 1)], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn softmax_shift_invariant() {
        let base = row_softmax(&m(&[&[0.0, 5.0]]), 1.0).unwrap();
        for c in [-300.0, -1.5, 0.0, 42.0, 700.0] {
            let s = row_softmax(&m(&[&[c, c + 5.0]]), 1.0).unwrap();
            assert_abs_diff_eq!(s[(0, 0)], base[(0, 0)], epsilon = 1e-12);
            assert_abs_diff_eq!(s[(0, 1)], base[(0, 1)], epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        let x = m(&[&[1.0]]);
        assert!(matches!(row_softmax(&x, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(row_softmax(&x, -0.1), Err(Error::InvalidArgument(_))));
        assert!(matches!(row_softmax(&x, f64::NAN), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn normalize_examples() {
        let n = l2_normalize_rows(&m(&[&[3.0, 4.0], &[0.0, 0.0]]));
        assert_abs_diff_eq!(n[(0, 0)], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(n[(0, 1)], 0.8, epsilon = 1e-15);
        assert_eq!(n.row(1), &[0.0, 0.0]);
        let u = l2_normalize_rows(&m(&[&[1.0, 0.0, 0.0]]));
        assert_eq!(u.row(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn cosine_examples() {
        let a = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let b = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let s = cosine_similarity_matrix(&a, &b).unwrap();
        assert_abs_diff_eq!(s[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[(0, 1)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[(0, 2)], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_eq!(s.row(1), &[0.0, 0.0, 0.0]);
        assert!(matches!(
            cosine_similarity_matrix(&a, &m(&[&[1.0, 2.0, 3.0]])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn leaky_sigmoid_branches() {
        assert_abs_diff_eq!(leaky_sigmoid(10.0, 0.01), 0.999_954_602_131_297_6, epsilon = 1e-15);
        assert_eq!(leaky_sigmoid(0.0, 0.01), 0.01);
        assert_abs_diff_eq!(leaky_sigmoid(-100.0, 0.01), 0.01 * (-1f64).exp(), epsilon = 1e-17);
        assert_abs_diff_eq!(0.01 * (-1f64).exp(), 0.003_678_8, epsilon = 1e-7);
    }

    #[test]
    fn kl_examples() {
        let t = m(&[&[1.0, 0.0]]);
        assert_eq!(kl_rows(&t, &t).unwrap(), 0.0);
        let p = m(&[&[0.5, 0.5]]);
        assert_abs_diff_eq!(kl_rows(&t, &p).unwrap(), 2f64.ln(), epsilon = 1e-15);
        let t4 = m(&[&[0.5, 0.5, 0.0, 0.0]]);
        let p4 = m(&[&[0.25; 4]]);
        assert_abs_diff_eq!(kl_rows(&t4, &p4).unwrap(), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn kl_errors() {
        let t = m(&[&[1.0, 0.0]]);
        assert!(matches!(kl_rows(&t, &m(&[&[1.0, 0.0, 0.0]])), Err(Error::Shape { .. })));
        assert!(matches!(kl_rows(&t, &m(&[&[0.7, 0.7]])), Err(Error::InvalidArgument(_))));
        assert!(matches!(kl_rows(&m(&[&[0.2, 0.2]]), &t), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn dense_kernel_examples() {
        let x = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &x).unwrap(), x);
        assert!(matches!(matmul(&x, &x), Err(Error::Shape { .. })));
        assert_eq!(relu(&m(&[&[-1.0, 2.0]])).as_slice(), &[0.0, 2.0]);
        assert_eq!(leaky_relu(&m(&[&[-1.0, 2.0]]), 0.01).as_slice(), &[-0.01, 2.0]);
        let c = concat_cols(&x, &m(&[&[7.0], &[8.0]])).unwrap();
        assert_eq!(c.shape(), (2, 4));
        assert_eq!(c.row(1), &[4.0, 5.0, 6.0, 8.0]);
        assert!(matches!(concat_cols(&x, &m(&[&[7.0]])), Err(Error::Shape { .. })));
        let b = add_bias(&x, &m(&[&[1.0, 1.0, 1.0]])).unwrap();
        assert_eq!(b.row(0), &[2.0, 3.0, 4.0]);
        assert!(matches!(add_bias(&x, &m(&[&[1.0]])), Err(Error::Shape { .. })));
        let nt = matmul_nt(&x, &x).unwrap();
        assert_eq!(nt.as_slice(), &[14.0, 32.0, 32.0, 77.0]);
    }
}
