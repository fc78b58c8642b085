use nalgebra::DMatrix;

use super::{Rng, Scalar, Tensor};

fn fan_in(shape: &[usize]) -> usize {
    shape[1..].iter().product::<usize>().max(1)
}

/// I.i.d. uniform on `[-√(6/fan_in), √(6/fan_in)]`, with `fan_in` the product
/// of all extents but the first.
pub fn he_uniform_init<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in(shape) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.uniform(-bound, bound))).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

/// Semi-orthogonal matrix (gain 1) from the QR factorization of a Gaussian
/// draw, viewed as `rows = shape[0]`, `cols = product(shape[1..])`.
///
/// The signs of Q's columns are flipped so that R has a positive diagonal,
/// which makes the factorization, and hence the result, unique.
pub fn orthogonal_init<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    let rows = shape[0];
    let cols = fan_in(shape);
    let draw: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
    let a = DMatrix::from_row_slice(rows, cols, &draw);
    let tall = rows >= cols;
    let a = if tall { a } else { a.transpose() };

    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let w = if tall { q } else { q.transpose() };

    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            data.push(T::lit(w[(i, j)]));
        }
    }
    Tensor::from_vec(shape, data).expect("init shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matmul_t;

    fn assert_identity(m: &Tensor<f64>, tol: f64) {
        let (n, _) = m.dims2().unwrap();
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((m.data()[i * n + j] - want).abs() < tol, "({i},{j})");
            }
        }
    }

    #[test]
    fn he_bounds_and_mean() {
        let mut rng = Rng::new(0);
        let w: Tensor<f64> = he_uniform_init(&[4, 6], &mut rng);
        assert!(w.data().iter().all(|v| v.abs() <= 1.0));
        let big: Tensor<f64> = he_uniform_init(&[100_000, 6], &mut rng);
        let mean = big.sum() / big.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn he_is_deterministic() {
        let a: Tensor<f32> = he_uniform_init(&[8, 3, 3, 3], &mut Rng::new(4));
        let b: Tensor<f32> = he_uniform_init(&[8, 3, 3, 3], &mut Rng::new(4));
        assert_eq!(a, b);
    }

    #[test]
    fn square_orthogonal() {
        let w: Tensor<f64> = orthogonal_init(&[4, 4], &mut Rng::new(1));
        assert_identity(&matmul_t(&w, true, &w, false).unwrap(), 1e-5);
    }

    #[test]
    fn wide_semi_orthogonal() {
        let w: Tensor<f64> = orthogonal_init(&[2, 5], &mut Rng::new(2));
        assert_identity(&matmul_t(&w, false, &w, true).unwrap(), 1e-5);
    }

    #[test]
    fn tall_semi_orthogonal_f32() {
        let w: Tensor<f32> = orthogonal_init(&[7, 3], &mut Rng::new(2));
        let w = w.cast::<f64>();
        assert_identity(&matmul_t(&w, true, &w, false).unwrap(), 1e-5);
    }

    #[test]
    fn singular_values_are_one() {
        let w: Tensor<f64> = orthogonal_init(&[8, 8], &mut Rng::new(8));
        let m = DMatrix::from_row_slice(8, 8, w.data());
        let svd = m.svd(false, false);
        for s in svd.singular_values.iter() {
            assert!((s - 1.0).abs() < 1e-4, "{s}");
        }
    }
}
