use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

/// The three ELBO terms of one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub total: f64,
    pub mse: f64,
    pub kld: f64,
}

/// Gradients of `total` with respect to the decoder mean, posterior mean and
/// posterior log-variance.
pub struct ElboGrads<T: Scalar> {
    pub mu_hat: Tensor<T>,
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
}

fn check_shapes<T: Scalar>(
    x: &Tensor<T>,
    mu_hat: &Tensor<T>,
    mu: &Tensor<T>,
    logvar: &Tensor<T>,
) -> Result<(usize, usize)> {
    let (b, _) = x.dims2()?;
    let (bm, c) = mu.dims2()?;
    if x.shape() != mu_hat.shape() || mu.shape() != logvar.shape() || bm != b {
        return Err(Error::dim(format!(
            "elbo: x {:?}, mu_hat {:?}, mu {:?}, logvar {:?}",
            x.shape(),
            mu_hat.shape(),
            mu.shape(),
            logvar.shape()
        )));
    }
    if b == 0 || c == 0 {
        return Err(Error::dim("elbo: empty batch or latent"));
    }
    for (name, t) in [("x", x), ("mu_hat", mu_hat), ("mu", mu), ("logvar", logvar)] {
        t.ensure_finite(name)?;
    }
    Ok((b, c))
}

/// `mse = (1/B) Σ (μ̂ − x)²`, `kld = −0.5/(B·C) Σ (1 + log σ² − μ² − σ²)`,
/// `total = mse + β·kld`. Sums are accumulated in f64.
pub fn elbo_loss<T: Scalar>(
    x: &Tensor<T>,
    mu_hat: &Tensor<T>,
    mu: &Tensor<T>,
    logvar: &Tensor<T>,
    beta: f64,
) -> Result<ElboTerms> {
    let (b, c) = check_shapes(x, mu_hat, mu, logvar)?;
    let sq: f64 = x
        .data()
        .iter()
        .zip(mu_hat.data())
        .map(|(&xi, &yi)| {
            let d = yi.as_f64() - xi.as_f64();
            d * d
        })
        .sum();
    let kl: f64 = mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(&m, &lv)| {
            let (m, lv) = (m.as_f64(), lv.as_f64());
            1.0 + lv - m * m - lv.exp()
        })
        .sum();
    let mse = sq / b as f64;
    // each summand is ≤ 0 analytically; clamp rounding noise
    let kld = (-0.5 * kl / (b * c) as f64).max(0.0);
    let total = mse + beta * kld;
    if !total.is_finite() {
        return Err(Error::NonFinite("elbo loss".into()));
    }
    Ok(ElboTerms { total, mse, kld })
}

pub fn elbo_backward<T: Scalar>(
    x: &Tensor<T>,
    mu_hat: &Tensor<T>,
    mu: &Tensor<T>,
    logvar: &Tensor<T>,
    beta: f64,
) -> Result<ElboGrads<T>> {
    let (b, c) = check_shapes(x, mu_hat, mu, logvar)?;
    let rec = 2.0 / b as f64;
    let reg = beta / (b * c) as f64;
    Ok(ElboGrads {
        mu_hat: mu_hat.zip_map(x, |y, xi| T::lit(rec * (y.as_f64() - xi.as_f64())))?,
        mu: mu.map(|m| T::lit(reg * m.as_f64())),
        logvar: logvar.map(|lv| T::lit(0.5 * reg * (lv.as_f64().exp() - 1.0))),
    })
}

/// `z = μ + exp(0.5·logvar) ⊙ ε` for a given noise tensor.
pub fn reparameterize_with<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    if mu.shape() != logvar.shape() || mu.shape() != eps.shape() {
        return Err(Error::dim("reparameterize: mu, logvar and eps shapes differ"));
    }
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(eps.data())
        .map(|((&m, &lv), &e)| T::lit(m.as_f64() + (0.5 * lv.as_f64()).exp() * e.as_f64()))
        .collect();
    Tensor::from_vec(mu.shape(), data)
}

/// Draws `ε ~ N(0, I)` and returns `(z, ε)`.
pub fn reparameterize<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>, rng: &mut Rng) -> Result<(Tensor<T>, Tensor<T>)> {
    let eps = Tensor::from_vec(mu.shape(), (0..mu.len()).map(|_| T::lit(rng.normal())).collect())?;
    let z = reparameterize_with(mu, logvar, &eps)?;
    Ok((z, eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{compare, numeric_gradient};

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn perfect_prior_match_is_zero() {
        let x = t(&[2, 3], vec![0.1, 0.5, 0.9, 0.0, 1.0, 0.3]);
        let z = Tensor::zeros(&[2, 4]);
        let e = elbo_loss(&x, &x, &z, &z, 0.7).unwrap();
        assert_eq!((e.total, e.mse, e.kld), (0.0, 0.0, 0.0));
    }

    #[test]
    fn unit_mean_single_sample() {
        let x = t(&[1, 2], vec![0.2, 0.4]);
        let e = elbo_loss(&x, &x, &t(&[1, 1], vec![1.0]), &t(&[1, 1], vec![0.0]), 0.3).unwrap();
        assert!((e.kld - 0.5).abs() < 1e-9);
        assert!((e.total - 0.15).abs() < 1e-12);
    }

    #[test]
    fn kld_permutation_invariant() {
        let x = t(&[1, 1], vec![0.5]);
        let mu = t(&[1, 3], vec![0.3, -1.2, 2.0]);
        let lv = t(&[1, 3], vec![0.1, -0.5, 0.7]);
        let mu_p = t(&[1, 3], vec![2.0, 0.3, -1.2]);
        let lv_p = t(&[1, 3], vec![0.7, 0.1, -0.5]);
        let a = elbo_loss(&x, &x, &mu, &lv, 1.0).unwrap().kld;
        let b = elbo_loss(&x, &x, &mu_p, &lv_p, 1.0).unwrap().kld;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let x = t(&[1, 1], vec![f64::NAN]);
        let z = Tensor::zeros(&[1, 1]);
        assert!(matches!(elbo_loss(&x, &z, &z, &z, 1.0), Err(Error::NonFinite(_))));
        assert!(elbo_loss(&z, &z, &Tensor::zeros(&[2, 1]), &Tensor::zeros(&[2, 1]), 1.0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        let (b, d, c) = (3, 5, 4);
        let rand = |rng: &mut Rng, n| (0..n).map(|_| rng.normal()).collect::<Vec<_>>();
        let x = t(&[b, d], (0..b * d).map(|_| rng.uniform01()).collect());
        let y = t(&[b, d], (0..b * d).map(|_| rng.uniform01()).collect());
        let mu = t(&[b, c], rand(&mut rng, b * c));
        let lv = t(&[b, c], rand(&mut rng, b * c));
        let beta = 0.37;
        let g = elbo_backward(&x, &y, &mu, &lv, beta).unwrap();
        let n = numeric_gradient(&y, 1e-5, |p| elbo_loss(&x, p, &mu, &lv, beta).unwrap().total);
        let mut r = compare("mu_hat", &g.mu_hat, &n);
        let n = numeric_gradient(&mu, 1e-5, |p| elbo_loss(&x, &y, p, &lv, beta).unwrap().total);
        r.merge(compare("mu", &g.mu, &n));
        let n = numeric_gradient(&lv, 1e-5, |p| elbo_loss(&x, &y, &mu, p, beta).unwrap().total);
        r.merge(compare("logvar", &g.logvar, &n));
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn zero_noise_limit() {
        let mu = t(&[2, 2], vec![0.3, -0.7, 1.5, 2.0]);
        let lv = Tensor::full(&[2, 2], -60.0);
        let (z, _) = reparameterize(&mu, &lv, &mut Rng::new(1)).unwrap();
        for (a, b) in z.data().iter().zip(mu.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_noise_is_deterministic_and_scaled() {
        let mu = t(&[1, 2], vec![1.0, -1.0]);
        let lv = t(&[1, 2], vec![2f64.ln() * 2.0, 0.0]);
        let eps = t(&[1, 2], vec![0.5, -2.0]);
        let z = reparameterize_with(&mu, &lv, &eps).unwrap();
        assert!((z.data()[0] - 2.0).abs() < 1e-12);
        assert!((z.data()[1] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn sample_mean_approaches_mu() {
        let n = 100_000;
        let mu = Tensor::full(&[n, 1], 0.8);
        let lv = Tensor::full(&[n, 1], 0.5f64.ln());
        let (z, _) = reparameterize(&mu, &lv, &mut Rng::new(9)).unwrap();
        let mean = z.sum() / n as f64;
        assert!((mean - 0.8).abs() < 0.01 * 0.5f64.sqrt(), "{mean}");
    }
}
