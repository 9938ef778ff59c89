//! Language discriminators and the adversarial losses.
//!
//! A discriminator is a two-hidden-layer leaky-ReLU MLP that outputs
//! `P(src = 1 | v)`, the probability that `v` is a genuine embedding of its
//! language rather than a mapped one. The discriminator minimizes
//!
//! ```text
//! disc_loss = −[ mean_real ((1−s)·log p + s·log(1−p))
//!              + mean_mapped (s·log p + (1−s)·log(1−p)) ]
//! ```
//!
//! (the negated game value with labels smoothed by `s`), and the mapping
//! minimizes the non-saturating `gen_loss = −mean_mapped log p`.
//!
//! Gradients are written out by hand; `tests/gradients.rs` checks them
//! against central finite differences.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::textmat;

/// Probabilities are clamped to `[LOG_CLAMP, 1 − LOG_CLAMP]` before taking
/// logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorConfig {
    pub hidden_dim: usize,
    pub leaky_slope: f64,
    pub input_dropout: f64,
    pub hidden_dropout: f64,
    pub smoothing: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            hidden_dim: 2048,
            leaky_slope: 0.2,
            input_dropout: 0.1,
            hidden_dropout: 0.0,
            smoothing: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.hidden_dim == 0 {
            return bad("discriminator hidden_dim must be positive".into());
        }
        for (name, p) in [("input_dropout", self.input_dropout), ("hidden_dropout", self.hidden_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        if !(0.0..0.5).contains(&self.smoothing) {
            return bad(format!("smoothing must be in [0, 0.5), got {}", self.smoothing));
        }
        if !self.leaky_slope.is_finite() {
            return bad("leaky_slope must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array1<f64>,
    pub b3: f64,
    pub config: DiscriminatorConfig,
}

/// Gradients with the same layout as [`Discriminator`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array1<f64>,
    pub b3: f64,
}

impl DiscGrads {
    fn add_assign(&mut self, other: &DiscGrads) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
        self.w3 += &other.w3;
        self.b3 += other.b3;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvBatchLoss {
    pub disc_loss: f64,
    pub gen_loss: f64,
    pub disc_accuracy: f64,
    /// True when some probability hit the log clamp.
    pub clamped: bool,
}

/// Activations kept from the forward pass for backpropagation.
struct Forward {
    input: Array2<f64>,
    input_mask: Option<Array2<f64>>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    mask1: Option<Array2<f64>>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    mask2: Option<Array2<f64>>,
    logits: Array1<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverted dropout mask: kept entries scaled by `1/(1−p)`.
fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// Per-row loss terms for a target label `t`:
/// `−t·log p − (1−t)·log(1−p)` and its derivative with respect to the logit,
/// both respecting the clamp.
fn labelled_term(z: f64, t: f64, clamp: f64) -> (f64, f64, bool) {
    let p = sigmoid(z);
    let mut clamped = false;
    let mut loss = 0.0;
    let mut dz = 0.0;
    if t != 0.0 {
        if p >= clamp {
            loss += t * softplus(-z);
            dz -= t * (1.0 - p);
        } else {
            clamped = true;
            loss -= t * clamp.ln();
        }
    }
    if t != 1.0 {
        if 1.0 - p >= clamp {
            loss += (1.0 - t) * softplus(z);
            dz += (1.0 - t) * p;
        } else {
            clamped = true;
            loss -= (1.0 - t) * clamp.ln();
        }
    }
    (loss, dz, clamped)
}

impl Discriminator {
    /// Uniform(−1/√fan_in, 1/√fan_in) initialization for weights and biases.
    pub fn new(input_dim: usize, config: DiscriminatorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input dimension must be positive".into()));
        }
        let h = config.hidden_dim;
        let uniform = |fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            move |rng: &mut ChaCha8Rng| rng.random_range(-bound..bound)
        };
        let u1 = uniform(input_dim);
        let u2 = uniform(h);
        let w1 = Array2::from_shape_simple_fn((input_dim, h), || u1(rng));
        let b1 = Array1::from_shape_simple_fn(h, || u1(rng));
        let w2 = Array2::from_shape_simple_fn((h, h), || u2(rng));
        let b2 = Array1::from_shape_simple_fn(h, || u2(rng));
        let w3 = Array1::from_shape_simple_fn(h, || u2(rng));
        let b3 = u2(rng);
        Ok(Discriminator {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            config,
        })
    }

    /// All-zero parameters; outputs 0.5 everywhere.
    pub fn zeros(input_dim: usize, config: DiscriminatorConfig) -> Self {
        let h = config.hidden_dim;
        Discriminator {
            w1: Array2::zeros((input_dim, h)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((h, h)),
            b2: Array1::zeros(h),
            w3: Array1::zeros(h),
            b3: 0.0,
            config,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn zero_grads(&self) -> DiscGrads {
        DiscGrads {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
            w3: Array1::zeros(self.w3.raw_dim()),
            b3: 0.0,
        }
    }

    fn check_rows(&self, rows: ArrayView2<f64>) -> Result<()> {
        if rows.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "discriminator expects {} columns, got {}",
                self.input_dim(),
                rows.ncols()
            )));
        }
        Ok(())
    }

    fn leaky(&self, z: &Array2<f64>) -> Array2<f64> {
        let a = self.config.leaky_slope;
        z.mapv(|v| if v > 0.0 { v } else { a * v })
    }

    fn forward_cached(&self, rows: ArrayView2<f64>, dropout: Option<&mut ChaCha8Rng>) -> Result<Forward> {
        self.check_rows(rows)?;
        let (n, h) = (rows.nrows(), self.hidden_dim());
        let mut rng = dropout;
        let mut mask = |shape: (usize, usize), p: f64| match rng.as_deref_mut() {
            Some(r) if p > 0.0 => Some(dropout_mask(shape, p, r)),
            _ => None,
        };

        let input_mask = mask(rows.dim(), self.config.input_dropout);
        let input = match &input_mask {
            Some(m) => &rows * m,
            None => rows.to_owned(),
        };
        let z1 = input.dot(&self.w1) + &self.b1;
        let mask1 = mask((n, h), self.config.hidden_dropout);
        let mut a1 = self.leaky(&z1);
        if let Some(m) = &mask1 {
            a1 *= m;
        }
        let z2 = a1.dot(&self.w2) + &self.b2;
        let mask2 = mask((n, h), self.config.hidden_dropout);
        let mut a2 = self.leaky(&z2);
        if let Some(m) = &mask2 {
            a2 *= m;
        }
        let logits = a2.dot(&self.w3) + self.b3;
        Ok(Forward {
            input,
            input_mask,
            z1,
            a1,
            mask1,
            z2,
            a2,
            mask2,
            logits,
        })
    }

    /// `P(src = 1 | row)` for every row. Dropout is applied only when an RNG
    /// is supplied (training mode).
    pub fn forward(&self, rows: ArrayView2<f64>, dropout: Option<&mut ChaCha8Rng>) -> Result<Array1<f64>> {
        Ok(self.forward_cached(rows, dropout)?.logits.mapv(sigmoid))
    }

    /// Backpropagates `d loss / d logits`; returns parameter gradients and,
    /// if requested, the gradient with respect to the input rows.
    fn backward(&self, fwd: &Forward, dlogits: &Array1<f64>, want_input: bool) -> (DiscGrads, Option<Array2<f64>>) {
        let slope = self.config.leaky_slope;
        let leaky_grad = |d: &mut Array2<f64>, z: &Array2<f64>, mask: &Option<Array2<f64>>| {
            if let Some(m) = mask {
                *d *= m;
            }
            Zip::from(d).and(z).for_each(|d, &z| {
                if z <= 0.0 {
                    *d *= slope;
                }
            });
        };

        let w3 = fwd.a2.t().dot(dlogits);
        let b3 = dlogits.sum();
        let mut dz2 = dlogits
            .view()
            .insert_axis(Axis(1))
            .dot(&self.w3.view().insert_axis(Axis(0)));
        leaky_grad(&mut dz2, &fwd.z2, &fwd.mask2);
        let w2 = fwd.a1.t().dot(&dz2);
        let b2 = dz2.sum_axis(Axis(0));
        let mut dz1 = dz2.dot(&self.w2.t());
        leaky_grad(&mut dz1, &fwd.z1, &fwd.mask1);
        let w1 = fwd.input.t().dot(&dz1);
        let b1 = dz1.sum_axis(Axis(0));
        let dinput = want_input.then(|| {
            let mut g = dz1.dot(&self.w1.t());
            if let Some(m) = &fwd.input_mask {
                g *= m;
            }
            g
        });
        (DiscGrads { w1, b1, w2, b2, w3, b3 }, dinput)
    }

    /// Discriminator loss and its parameter gradients on one real and one
    /// mapped batch.
    pub fn disc_loss_grads(
        &self,
        real: ArrayView2<f64>,
        mapped: ArrayView2<f64>,
        smoothing: f64,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(AdvBatchLoss, DiscGrads)> {
        check_batches(real, mapped)?;
        let mut loss = 0.0;
        let mut gen_loss = 0.0;
        let mut correct = 0usize;
        let mut clamped = false;
        let mut grads = self.zero_grads();
        for (rows, label, is_real) in [(real, 1.0 - smoothing, true), (mapped, smoothing, false)] {
            let fwd = self.forward_cached(rows, dropout.as_deref_mut())?;
            let n = rows.nrows() as f64;
            let mut dl = Array1::zeros(rows.nrows());
            let mut part = 0.0;
            let mut gen_part = 0.0;
            for (i, &z) in fwd.logits.iter().enumerate() {
                let (l, dz, c) = labelled_term(z, label, LOG_CLAMP);
                part += l;
                dl[i] = dz / n;
                clamped |= c;
                let p = sigmoid(z);
                if is_real {
                    correct += usize::from(p > 0.5);
                } else {
                    correct += usize::from(p < 0.5);
                    let (g, _, c) = labelled_term(z, 1.0, LOG_CLAMP);
                    gen_part += g;
                    clamped |= c;
                }
            }
            loss += part / n;
            if !is_real {
                gen_loss = gen_part / n;
            }
            grads.add_assign(&self.backward(&fwd, &dl, false).0);
        }
        Ok((
            AdvBatchLoss {
                disc_loss: loss,
                gen_loss,
                disc_accuracy: correct as f64 / (real.nrows() + mapped.nrows()) as f64,
                clamped,
            },
            grads,
        ))
    }

    /// Generator loss `−mean log p(mapped)` and its gradient with respect to
    /// the mapped rows. Discriminator parameters are treated as constants.
    pub fn gen_loss_input_grad(
        &self,
        mapped: ArrayView2<f64>,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Array2<f64>)> {
        if mapped.nrows() == 0 {
            return Err(Error::InvalidArgument("empty mapped batch".into()));
        }
        let fwd = self.forward_cached(mapped, dropout)?;
        let n = mapped.nrows() as f64;
        let mut loss = 0.0;
        let mut dl = Array1::zeros(mapped.nrows());
        for (i, &z) in fwd.logits.iter().enumerate() {
            let (l, dz, _) = labelled_term(z, 1.0, LOG_CLAMP);
            loss += l;
            dl[i] = dz / n;
        }
        let (_, dinput) = self.backward(&fwd, &dl, true);
        Ok((loss / n, dinput.unwrap()))
    }

    /// Gradient descent on the discriminator loss. Fails without modifying
    /// anything if the update would produce a non-finite parameter.
    pub fn sgd_step(&mut self, grads: &DiscGrads, lr: f64) -> Result<()> {
        let w1 = &self.w1 - &(&grads.w1 * lr);
        let b1 = &self.b1 - &(&grads.b1 * lr);
        let w2 = &self.w2 - &(&grads.w2 * lr);
        let b2 = &self.b2 - &(&grads.b2 * lr);
        let w3 = &self.w3 - &(&grads.w3 * lr);
        let b3 = self.b3 - lr * grads.b3;
        let finite = w1.iter().chain(&b1).chain(&w2).chain(&b2).chain(&w3).all(|v| v.is_finite())
            && b3.is_finite();
        if !finite {
            return Err(Error::NumericalAbort {
                iteration: 0,
                what: "discriminator parameters".into(),
            });
        }
        (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3) = (w1, b1, w2, b2, w3, b3);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .chain(&self.w3)
            .all(|v| v.is_finite())
            && self.b3.is_finite()
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let row = |v: &Array1<f64>| v.view().insert_axis(Axis(0)).to_owned();
        (|| {
            textmat::write_section(&mut out, "layer1.weight", self.w1.view())?;
            textmat::write_section(&mut out, "layer1.bias", row(&self.b1).view())?;
            textmat::write_section(&mut out, "layer2.weight", self.w2.view())?;
            textmat::write_section(&mut out, "layer2.bias", row(&self.b2).view())?;
            textmat::write_section(&mut out, "out.weight", self.w3.view().insert_axis(Axis(1)))?;
            textmat::write_section(&mut out, "out.bias", Array2::from_elem((1, 1), self.b3).view())?;
            out.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    pub fn load_text(path: impl AsRef<Path>, config: DiscriminatorConfig) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let sections = textmat::read_sections(BufReader::new(file), path)?;
        let names = ["layer1.weight", "layer1.bias", "layer2.weight", "layer2.bias", "out.weight", "out.bias"];
        let got: Vec<&str> = sections.iter().map(|(n, _)| n.as_str()).collect();
        if got != names {
            return Err(Error::parse(path, 1, format!("unexpected sections {got:?}")));
        }
        let mut it = sections.into_iter().map(|(_, m)| m);
        let w1 = it.next().unwrap();
        let b1 = it.next().unwrap().row(0).to_owned();
        let w2 = it.next().unwrap();
        let b2 = it.next().unwrap().row(0).to_owned();
        let w3 = it.next().unwrap().column(0).to_owned();
        let b3 = it.next().unwrap()[[0, 0]];
        let h = w1.ncols();
        if b1.len() != h || w2.dim() != (h, h) || b2.len() != h || w3.len() != h {
            return Err(Error::Shape(format!("inconsistent layer shapes in {}", path.display())));
        }
        Ok(Discriminator {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            config: DiscriminatorConfig {
                hidden_dim: h,
                ..config
            },
        })
    }
}

fn check_batches(real: ArrayView2<f64>, mapped: ArrayView2<f64>) -> Result<()> {
    if real.nrows() == 0 || mapped.nrows() == 0 {
        return Err(Error::InvalidArgument("adversarial batches must be non-empty".into()));
    }
    Ok(())
}

/// Discriminator and generator losses on a batch pair (`disc_forward` in eval
/// mode when `dropout` is `None`).
pub fn adv_losses(
    disc: &Discriminator,
    real: ArrayView2<f64>,
    mapped: ArrayView2<f64>,
    smoothing: f64,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<AdvBatchLoss> {
    Ok(disc.disc_loss_grads(real, mapped, smoothing, dropout)?.0)
}

/// Gradients of `disc_loss` with respect to the discriminator parameters and
/// of `gen_loss` with respect to the mapped rows.
pub fn adv_backward(
    disc: &Discriminator,
    real: ArrayView2<f64>,
    mapped: ArrayView2<f64>,
    smoothing: f64,
) -> Result<(DiscGrads, Array2<f64>)> {
    let (_, grads) = disc.disc_loss_grads(real, mapped, smoothing, None)?;
    let (_, dmapped) = disc.gen_loss_input_grad(mapped, None)?;
    Ok((grads, dmapped))
}

/// Loss values with an explicit clamp bound; used to check how the clamp
/// shapes the saturated regime.
pub fn clamped_losses(disc: &Discriminator, real: ArrayView2<f64>, mapped: ArrayView2<f64>, clamp: f64) -> Result<(f64, f64)> {
    check_batches(real, mapped)?;
    let logits = |rows| disc.forward_cached(rows, None).map(|f| f.logits);
    let mean = |v: &Array1<f64>, t: f64| v.iter().map(|&z| labelled_term(z, t, clamp).0).sum::<f64>() / v.len() as f64;
    let lr = logits(real)?;
    let lm = logits(mapped)?;
    Ok((mean(&lr, 1.0) + mean(&lm, 0.0), mean(&lm, 1.0)))
}
