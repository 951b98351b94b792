//! Deterministic synthetic classification task and a small dense network
//! trained on it, used to exercise the full compress/evaluate path.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::matrix::DenseMatrix;
use crate::model_io::{Tensor, TensorFile};
use crate::pipeline::{DenseNetwork, LabeledData, ACTIVATIONS_SUFFIX};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub seed: u64,
    pub classes: usize,
    pub latent_dim: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub calib_samples: usize,
    /// Spread of the class centers relative to the within-class noise.
    pub separation: f64,
    pub pixel_noise: f64,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            classes: 10,
            latent_dim: 12,
            input_dim: 784,
            hidden: 32,
            train_samples: 6000,
            test_samples: 2000,
            calib_samples: 1000,
            separation: 1.5,
            pixel_noise: 0.5,
            epochs: 12,
            batch: 50,
            learning_rate: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    /// `fc1.weight`, `fc1.bias`, `fc2.weight`, `fc2.bias`.
    pub model: TensorFile,
    /// `<layer>.activations` for both weight matrices.
    pub calib: TensorFile,
    pub train: LabeledData,
    pub test: LabeledData,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Gaussian class clusters in a low-dimensional latent space, mapped linearly
/// to `input_dim` features plus isotropic feature noise.
pub fn synthetic_dataset(cfg: &FixtureConfig, rng: &mut ChaCha8Rng) -> (LabeledData, LabeledData) {
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let centers: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..cfg.latent_dim).map(|_| cfg.separation * normal(rng)).collect())
        .collect();
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let projection: Vec<f64> = (0..cfg.input_dim * cfg.latent_dim)
        .map(|_| scale * normal(rng))
        .collect();
    let sample = |n: usize, rng: &mut ChaCha8Rng| {
        let mut features = vec![0.0; n * cfg.input_dim];
        let mut labels = Vec::with_capacity(n);
        let mut z = vec![0.0; cfg.latent_dim];
        for r in 0..n {
            let c = r % cfg.classes;
            labels.push(c);
            for (zi, &mu) in z.iter_mut().zip(&centers[c]) {
                *zi = mu + normal(rng);
            }
            let row = &mut features[r * cfg.input_dim..(r + 1) * cfg.input_dim];
            for (d, x) in row.iter_mut().enumerate() {
                let p = &projection[d * cfg.latent_dim..(d + 1) * cfg.latent_dim];
                let v = p.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + cfg.pixel_noise * normal(rng);
                // Stored as f32, so keep exactly what a reload sees.
                *x = f64::from(v as f32);
            }
        }
        LabeledData {
            features: DenseMatrix::new(n, cfg.input_dim, features).expect("finite samples"),
            labels,
        }
    };
    let train = sample(cfg.train_samples, rng);
    let test = sample(cfg.test_samples, rng);
    (train, test)
}

struct Mlp {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    d: usize,
    h: usize,
    c: usize,
}

impl Mlp {
    fn init(d: usize, h: usize, c: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut he = |fan_in: usize, len: usize| -> Vec<f64> {
            let s = (2.0 / fan_in as f64).sqrt();
            (0..len).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        Self {
            w1: he(d, h * d),
            b1: vec![0.0; h],
            w2: he(h, c * h),
            b2: vec![0.0; c],
            d,
            h,
            c,
        }
    }

    fn hidden(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let w = &self.w1[j * self.d..(j + 1) * self.d];
            *o = (w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b1[j]).max(0.0);
        }
    }

    fn logits(&self, hid: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let w = &self.w2[k * self.h..(k + 1) * self.h];
            *o = w.iter().zip(hid).map(|(a, b)| a * b).sum::<f64>() + self.b2[k];
        }
    }

    /// One epoch of minibatch SGD with momentum on softmax cross-entropy.
    fn epoch(&mut self, data: &LabeledData, order: &[usize], batch: usize, lr: f64, vel: &mut Mlp) {
        let (d, h, c) = (self.d, self.h, self.c);
        let mut g = Mlp {
            w1: vec![0.0; h * d],
            b1: vec![0.0; h],
            w2: vec![0.0; c * h],
            b2: vec![0.0; c],
            d,
            h,
            c,
        };
        let mut hid = vec![0.0; h];
        let mut logit = vec![0.0; c];
        let mut dh = vec![0.0; h];
        for chunk in order.chunks(batch) {
            for v in [&mut g.w1, &mut g.b1, &mut g.w2, &mut g.b2] {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
            for &r in chunk {
                let x = data.features.row(r);
                self.hidden(x, &mut hid);
                self.logits(&hid, &mut logit);
                let max = logit.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = logit.iter().map(|l| (l - max).exp()).sum();
                dh.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..c {
                    let p = (logit[k] - max).exp() / sum;
                    let dz = p - f64::from(u8::from(k == data.labels[r]));
                    g.b2[k] += dz;
                    let w = &self.w2[k * h..(k + 1) * h];
                    for j in 0..h {
                        g.w2[k * h + j] += dz * hid[j];
                        dh[j] += dz * w[j];
                    }
                }
                for j in 0..h {
                    if hid[j] <= 0.0 {
                        continue;
                    }
                    g.b1[j] += dh[j];
                    let gw = &mut g.w1[j * d..(j + 1) * d];
                    for (gv, &xv) in gw.iter_mut().zip(x) {
                        *gv += dh[j] * xv;
                    }
                }
            }
            let step = lr / chunk.len() as f64;
            let params = [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2];
            let vels = [&mut vel.w1, &mut vel.b1, &mut vel.w2, &mut vel.b2];
            let grads = [&g.w1, &g.b1, &g.w2, &g.b2];
            for ((p, v), gr) in params.into_iter().zip(vels).zip(grads) {
                for ((pi, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(gr.iter()) {
                    *vi = 0.9 * *vi - step * gi;
                    *pi += *vi;
                }
            }
        }
    }

    fn to_tensors(&self) -> Result<TensorFile> {
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        let mut f = TensorFile::new();
        f.insert("fc1.weight", Tensor::f32(vec![self.h, self.d], f32s(&self.w1))?);
        f.insert("fc1.bias", Tensor::f32(vec![self.h], f32s(&self.b1))?);
        f.insert("fc2.weight", Tensor::f32(vec![self.c, self.h], f32s(&self.w2))?);
        f.insert("fc2.bias", Tensor::f32(vec![self.c], f32s(&self.b2))?);
        Ok(f)
    }
}

/// Generates the data, trains the network and records calibration inputs of
/// both layers on the first `calib_samples` training examples, scaled by
/// `1/√calib_samples`.
pub fn build_fixture(cfg: &FixtureConfig) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train, test) = synthetic_dataset(cfg, &mut rng);
    let mut mlp = Mlp::init(cfg.input_dim, cfg.hidden, cfg.classes, &mut rng);
    let mut vel = Mlp {
        w1: vec![0.0; mlp.w1.len()],
        b1: vec![0.0; mlp.b1.len()],
        w2: vec![0.0; mlp.w2.len()],
        b2: vec![0.0; mlp.b2.len()],
        d: mlp.d,
        h: mlp.h,
        c: mlp.c,
    };
    let mut order: Vec<usize> = (0..train.labels.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        mlp.epoch(&train, &order, cfg.batch, cfg.learning_rate, &mut vel);
    }

    let model = mlp.to_tensors()?;
    let net = DenseNetwork::from_tensors(&model)?;

    let p = cfg.calib_samples.min(train.labels.len());
    // Columns scaled by 1/√p: the Hessian becomes a per-sample average and the
    // useful λ range no longer depends on the calibration set size.
    let norm = 1.0 / (p as f64).sqrt();
    let mut x1 = DenseMatrix::zeros(cfg.input_dim, p);
    let mut x2 = DenseMatrix::zeros(cfg.hidden, p);
    let (w1, b1) = &net.layers[0];
    for s in 0..p {
        let x = train.features.row(s);
        for (d, &v) in x.iter().enumerate() {
            x1[(d, s)] = v * norm;
        }
        for j in 0..cfg.hidden {
            let a: f64 = w1.row(j).iter().zip(x).map(|(w, v)| w * v).sum();
            x2[(j, s)] = (a + b1[j]).max(0.0) * norm;
        }
    }
    let mut calib = TensorFile::new();
    calib.insert(format!("fc1.weight{ACTIVATIONS_SUFFIX}"), Tensor::from_matrix(&x1));
    calib.insert(format!("fc2.weight{ACTIVATIONS_SUFFIX}"), Tensor::from_matrix(&x2));

    let train_accuracy = net.accuracy(&train)?;
    let test_accuracy = net.accuracy(&test)?;
    Ok(Fixture {
        model,
        calib,
        train,
        test,
        train_accuracy,
        test_accuracy,
    })
}
