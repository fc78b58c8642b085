use serde::{Deserialize, Serialize};

use super::loss::{elbo_backward, elbo_loss, reparameterize, ElboTerms};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{restore_module, restore_sequential, Checkpoint};
use crate::nn::{Affine, BatchNorm, BatchNormConfig, Mode, Module, Param, Relu, Sequential, Sigmoid};
use crate::tensor::{Rng, Scalar, Tensor};

/// Layer sizes of the VAE. Every hidden block is affine + batchnorm + ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeArch {
    pub input_dim: usize,
    pub hidden: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub latent: usize,
    pub batchnorm: BatchNormConfig,
}

impl VaeArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.latent == 0 {
            return Err(Error::Config("vae widths and latent dimension must be positive".into()));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::Config(
                "encoder and decoder need at least one hidden layer".into(),
            ));
        }
        Ok(())
    }
}

pub struct VaeModel<T: Scalar = f32> {
    arch: VaeArch,
    encoder: Sequential<T>,
    mu_head: Affine<T>,
    logvar_head: Affine<T>,
    decoder: Sequential<T>,
    cache: Option<Tensor<T>>,
}

/// Result of a train-mode forward pass.
pub struct VaeForward<T: Scalar> {
    pub mu_hat: Tensor<T>,
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
}

fn hidden_stack<T: Scalar>(seq: &mut Sequential<T>, d_in: usize, arch: &VaeArch, layers: usize, rng: &mut Rng) {
    let mut d = d_in;
    for _ in 0..layers {
        seq.push(Affine::orthogonal(d, arch.hidden, rng))
            .push(BatchNorm::new_1d(arch.hidden, arch.batchnorm))
            .push(Relu::new());
        d = arch.hidden;
    }
}

impl<T: Scalar> VaeModel<T> {
    /// Builds the model with orthogonal initialization for every affine layer.
    pub fn new(arch: &VaeArch, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut encoder = Sequential::new();
        hidden_stack(&mut encoder, arch.input_dim, arch, arch.encoder_layers, rng);
        let mu_head = Affine::orthogonal(arch.hidden, arch.latent, rng);
        let logvar_head = Affine::orthogonal(arch.hidden, arch.latent, rng);
        let mut decoder = Sequential::new();
        hidden_stack(&mut decoder, arch.latent, arch, arch.decoder_layers, rng);
        decoder
            .push(Affine::orthogonal(arch.hidden, arch.input_dim, rng))
            .push(Sigmoid::new());
        Ok(Self {
            arch: arch.clone(),
            encoder,
            mu_head,
            logvar_head,
            decoder,
            cache: None,
        })
    }

    pub fn arch(&self) -> &VaeArch {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.encoder.set_mode(mode);
        self.mu_head.set_mode(mode);
        self.logvar_head.set_mode(mode);
        self.decoder.set_mode(mode);
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|p| p.value.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.encoder
            .params()
            .chain(self.mu_head.params())
            .chain(self.logvar_head.params())
            .chain(self.decoder.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.encoder
            .params_mut()
            .chain(self.mu_head.params_mut().iter_mut())
            .chain(self.logvar_head.params_mut().iter_mut())
            .chain(self.decoder.params_mut())
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.mu_head.zero_grad();
        self.logvar_head.zero_grad();
        self.decoder.zero_grad();
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, d) = x.dims2()?;
        if d != self.arch.input_dim {
            return Err(Error::dim(format!(
                "vae expects {} inputs, got {d}",
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    /// Eval-mode posterior parameters `(μ, log σ²)`.
    pub fn encode(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_input(x)?;
        let h = self.encoder.infer(x)?;
        Ok((self.mu_head.infer(&h)?, self.logvar_head.infer(&h)?))
    }

    /// Eval-mode decoder mean `μ̂(z)`.
    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.decoder.infer(z)
    }

    /// Posterior mean, the representation scored by the metrics.
    pub fn represent(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.encode(x)?.0)
    }

    /// Train-mode forward with one reparameterized sample per row.
    pub fn forward_train(&mut self, x: &Tensor<T>, rng: &mut Rng) -> Result<VaeForward<T>> {
        self.check_input(x)?;
        let h = self.encoder.forward(x, rng)?;
        let mu = self.mu_head.forward(&h, rng)?;
        let logvar = self.logvar_head.forward(&h, rng)?;
        let (z, eps) = reparameterize(&mu, &logvar, rng)?;
        let mu_hat = self.decoder.forward(&z, rng)?;
        self.cache = Some(eps);
        Ok(VaeForward { mu_hat, mu, logvar })
    }

    /// Accumulates parameter gradients given the loss gradients with respect
    /// to the outputs of the last [`forward_train`](Self::forward_train).
    pub fn backward(
        &mut self,
        out: &VaeForward<T>,
        d_mu_hat: &Tensor<T>,
        d_mu: &Tensor<T>,
        d_logvar: &Tensor<T>,
    ) -> Result<()> {
        let eps = self.cache.take().ok_or_else(|| crate::nn::missing_cache("vae"))?;
        let dz = self.decoder.backward(d_mu_hat)?;
        let dmu = d_mu.zip_map(&dz, |a, b| a + b)?;
        let mut dlv = d_logvar.clone();
        for (i, g) in dlv.data_mut().iter_mut().enumerate() {
            let s = (T::lit(0.5) * out.logvar.data()[i]).exp();
            *g += dz.data()[i] * eps.data()[i] * T::lit(0.5) * s;
        }
        let mut dh = self.mu_head.backward(&dmu)?;
        dh.add_assign(&self.logvar_head.backward(&dlv)?)?;
        self.encoder.backward(&dh)?;
        Ok(())
    }

    /// One forward/backward pass on the ELBO; gradients are accumulated.
    pub fn loss_and_grad(&mut self, x: &Tensor<T>, beta: f64, rng: &mut Rng) -> Result<ElboTerms> {
        let out = self.forward_train(x, rng)?;
        let terms = elbo_loss(x, &out.mu_hat, &out.mu, &out.logvar, beta)?;
        let g = elbo_backward(x, &out.mu_hat, &out.mu, &out.logvar, beta)?;
        self.backward(&out, &g.mu_hat, &g.mu, &g.logvar)?;
        Ok(terms)
    }

    pub(crate) fn snapshot(&self) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = Vec::new();
        for seq in [&self.encoder, &self.decoder] {
            for l in seq.layers() {
                out.extend(l.params().iter().map(|p| p.value.clone()));
                out.extend(l.buffers().into_iter().map(|(_, t)| t.clone()));
            }
        }
        for h in [&self.mu_head, &self.logvar_head] {
            out.extend(h.params().iter().map(|p| p.value.clone()));
        }
        out
    }

    pub(crate) fn restore(&mut self, snap: &[Tensor<T>]) {
        let mut it = snap.iter();
        for seq in [&mut self.encoder, &mut self.decoder] {
            for l in seq.layers_mut() {
                for p in l.params_mut() {
                    p.value = it.next().expect("snapshot").clone();
                }
                for (_, b) in l.buffers_mut() {
                    *b = it.next().expect("snapshot").clone();
                }
            }
        }
        for h in [&mut self.mu_head, &mut self.logvar_head] {
            for p in h.params_mut() {
                p.value = it.next().expect("snapshot").clone();
            }
        }
    }
}

impl VaeModel<f32> {
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({
            "model": "vae",
            "arch": self.arch,
            "run": meta,
        }));
        ck.add_sequential("encoder", &self.encoder);
        ck.add_module("mu_head", &self.mu_head);
        ck.add_module("logvar_head", &self.logvar_head);
        ck.add_sequential("decoder", &self.decoder);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta["model"] != "vae" {
            return Err(Error::header("model", "checkpoint does not hold a vae"));
        }
        let arch: VaeArch = serde_json::from_value(ck.meta["arch"].clone()).map_err(|e| Error::header("arch", e))?;
        let mut m = Self::new(&arch, &mut Rng::new(0))?;
        let map = ck.tensor_map();
        restore_sequential(&map, "encoder", &mut m.encoder)?;
        restore_module(&map, "mu_head", &mut m.mu_head)?;
        restore_module(&map, "logvar_head", &mut m.logvar_head)?;
        restore_sequential(&map, "decoder", &mut m.decoder)?;
        m.set_mode(Mode::Eval);
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{compare, numeric_gradient};

    fn arch(d: usize, h: usize, c: usize) -> VaeArch {
        VaeArch {
            input_dim: d,
            hidden: h,
            encoder_layers: 1,
            decoder_layers: 2,
            latent: c,
            batchnorm: BatchNormConfig::default(),
        }
    }

    fn input(b: usize, d: usize, rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_vec(&[b, d], (0..b * d).map(|_| rng.uniform01()).collect()).unwrap()
    }

    #[test]
    fn shapes_and_determinism() {
        let mut rng = Rng::new(2);
        let mut m = VaeModel::<f64>::new(&arch(6, 8, 3), &mut rng).unwrap();
        m.set_mode(Mode::Eval);
        let mut x = input(4, 6, &mut rng);
        let row: Vec<f64> = x.row(0).to_vec();
        x.data_mut()[6..12].copy_from_slice(&row);
        let (mu, lv) = m.encode(&x).unwrap();
        assert_eq!(mu.shape(), &[4, 3]);
        assert_eq!(lv.shape(), &[4, 3]);
        assert_eq!(mu.row(0), mu.row(1));
        assert_eq!(m.encode(&x).unwrap().0, mu);
        assert_eq!(m.represent(&x).unwrap(), mu);
        let y = m.decode(&mu).unwrap();
        assert!(y.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(m.encode(&input(2, 5, &mut rng)).is_err());
    }

    /// End-to-end finite-difference check of the ELBO through the whole
    /// model, with the sampling noise fixed by re-seeding.
    #[test]
    fn end_to_end_gradient() {
        let mut rng = Rng::new(3);
        let mut m = VaeModel::<f64>::new(&arch(5, 6, 2), &mut rng).unwrap();
        let x = input(4, 5, &mut rng);
        let beta = 0.3;
        m.zero_grad();
        m.loss_and_grad(&x, beta, &mut Rng::new(11)).unwrap();
        let analytic: Vec<Tensor<f64>> = m.params().map(|p| p.grad.clone()).collect();
        let values: Vec<Tensor<f64>> = m.params().map(|p| p.value.clone()).collect();
        let mut report = None;
        for (i, (a, v)) in analytic.iter().zip(&values).enumerate() {
            let n = numeric_gradient(v, 1e-5, |p| {
                m.params_mut().nth(i).unwrap().value = p.clone();
                let out = m.forward_train(&x, &mut Rng::new(11)).unwrap();
                m.cache = None;
                elbo_loss(&x, &out.mu_hat, &out.mu, &out.logvar, beta).unwrap().total
            });
            m.params_mut().nth(i).unwrap().value = v.clone();
            let r = compare(&format!("param {i}"), a, &n);
            match report.as_mut() {
                None => report = Some(r),
                Some(acc) => crate::nn::gradcheck::GradCheckReport::merge(acc, r),
            }
        }
        let r = report.unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = Rng::new(4);
        let mut m = VaeModel::<f32>::new(&arch(6, 8, 3), &mut rng).unwrap();
        let x = Tensor::from_vec(&[4, 6], (0..24).map(|_| rng.uniform01() as f32).collect()).unwrap();
        m.loss_and_grad(&x, 0.1, &mut rng).unwrap();
        m.set_mode(Mode::Eval);
        let mut buf = Vec::new();
        m.to_checkpoint(serde_json::Value::Null).write_to(&mut buf).unwrap();
        let back = VaeModel::from_checkpoint(&Checkpoint::read_from(&mut &buf[..]).unwrap()).unwrap();
        assert_eq!(back.represent(&x).unwrap(), m.represent(&x).unwrap());
    }
}
