//! Joint training of the forward map `F` (source→target) and the backward
//! map `G` (target→source).
//!
//! Each iteration trains both discriminators, then takes one generator step
//! on
//!
//! ```text
//! gen_loss(F; D_y) + gen_loss(G; D_x) + w·(cycle(X→F→G) + cycle(Y→G→F))
//! ```
//!
//! where `cycle` is the mean `1 − cos` between a word vector and its
//! round-trip reconstruction. With `w = 0` the two directions never interact
//! and each is an independent adversarial aligner.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversarial::{Discriminator, DiscriminatorConfig};
use crate::embeddings::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::linalg::fmt_sig;
use crate::mapping::{procrustes_solve, LinearMapping};
use crate::retrieval::{CslsIndex, DEFAULT_K};
use crate::selection::{criterion_sa, SelectionConfig};

pub const MAPPING_F_FILE: &str = "mapping_f.txt";
pub const MAPPING_G_FILE: &str = "mapping_g.txt";
pub const FINAL_F_FILE: &str = "final_f.txt";
pub const FINAL_G_FILE: &str = "final_g.txt";
pub const DISC_X_FILE: &str = "disc_x.txt";
pub const DISC_Y_FILE: &str = "disc_y.txt";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub rounds: usize,
    pub dict_size: usize,
    pub k: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            rounds: 5,
            dict_size: 15_000,
            k: DEFAULT_K,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub batch_size: usize,
    pub disc_steps_per_gen_step: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_decay: f64,
    pub lr_shrink_on_plateau: f64,
    pub cycle_weight: f64,
    pub orthogonalize_beta: f64,
    pub most_frequent_for_disc: usize,
    pub seed: u64,
    /// Start from a random orthogonal map instead of the identity.
    pub random_init: bool,
    pub discriminator: DiscriminatorConfig,
    pub selection: SelectionConfig,
    pub refine: RefineConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            iterations_per_epoch: 31_250,
            batch_size: 32,
            disc_steps_per_gen_step: 5,
            lr_generator: 0.1,
            lr_discriminator: 0.1,
            lr_decay: 0.98,
            lr_shrink_on_plateau: 0.5,
            cycle_weight: 1.0,
            orthogonalize_beta: 0.01,
            most_frequent_for_disc: 75_000,
            seed: 0,
            random_init: false,
            discriminator: DiscriminatorConfig::default(),
            selection: SelectionConfig::default(),
            refine: RefineConfig::default(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
}

impl TrainConfig {
    /// Every recognised configuration key.
    pub const KEYS: &'static [&'static str] = &[
        "epochs",
        "iterations_per_epoch",
        "batch_size",
        "disc_steps_per_gen_step",
        "lr_generator",
        "lr_discriminator",
        "lr_decay",
        "lr_shrink_on_plateau",
        "cycle_weight",
        "orthogonalize_beta",
        "most_frequent_for_disc",
        "seed",
        "random_init",
        "disc_hidden_dim",
        "disc_leaky_slope",
        "disc_input_dropout",
        "disc_hidden_dropout",
        "disc_smoothing",
        "selection_lambda",
        "selection_eval_vocab",
        "csls_k",
        "refine_rounds",
        "refine_dict_size",
    ];

    /// Sets one `key=value` setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "iterations_per_epoch" => self.iterations_per_epoch = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "disc_steps_per_gen_step" => self.disc_steps_per_gen_step = parse_value(key, value)?,
            "lr_generator" => self.lr_generator = parse_value(key, value)?,
            "lr_discriminator" => self.lr_discriminator = parse_value(key, value)?,
            "lr_decay" => self.lr_decay = parse_value(key, value)?,
            "lr_shrink_on_plateau" => self.lr_shrink_on_plateau = parse_value(key, value)?,
            "cycle_weight" => self.cycle_weight = parse_value(key, value)?,
            "orthogonalize_beta" => self.orthogonalize_beta = parse_value(key, value)?,
            "most_frequent_for_disc" => self.most_frequent_for_disc = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "random_init" => self.random_init = parse_value(key, value)?,
            "disc_hidden_dim" => self.discriminator.hidden_dim = parse_value(key, value)?,
            "disc_leaky_slope" => self.discriminator.leaky_slope = parse_value(key, value)?,
            "disc_input_dropout" => self.discriminator.input_dropout = parse_value(key, value)?,
            "disc_hidden_dropout" => self.discriminator.hidden_dropout = parse_value(key, value)?,
            "disc_smoothing" => self.discriminator.smoothing = parse_value(key, value)?,
            "selection_lambda" => self.selection.lambda = parse_value(key, value)?,
            "selection_eval_vocab" => self.selection.eval_vocab = parse_value(key, value)?,
            "csls_k" => {
                let k = parse_value(key, value)?;
                self.selection.k = k;
                self.refine.k = k;
            }
            "refine_rounds" => self.refine.rounds = parse_value(key, value)?,
            "refine_dict_size" => self.refine.dict_size = parse_value(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// All settings as `(key, value)` pairs in [`Self::KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let d = &self.discriminator;
        let values = [
            self.epochs.to_string(),
            self.iterations_per_epoch.to_string(),
            self.batch_size.to_string(),
            self.disc_steps_per_gen_step.to_string(),
            self.lr_generator.to_string(),
            self.lr_discriminator.to_string(),
            self.lr_decay.to_string(),
            self.lr_shrink_on_plateau.to_string(),
            self.cycle_weight.to_string(),
            self.orthogonalize_beta.to_string(),
            self.most_frequent_for_disc.to_string(),
            self.seed.to_string(),
            self.random_init.to_string(),
            d.hidden_dim.to_string(),
            d.leaky_slope.to_string(),
            d.input_dropout.to_string(),
            d.hidden_dropout.to_string(),
            d.smoothing.to_string(),
            self.selection.lambda.to_string(),
            self.selection.eval_vocab.to_string(),
            self.selection.k.to_string(),
            self.refine.rounds.to_string(),
            self.refine.dict_size.to_string(),
        ];
        Self::KEYS.iter().copied().zip(values).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("iterations_per_epoch", self.iterations_per_epoch),
            ("batch_size", self.batch_size),
            ("disc_steps_per_gen_step", self.disc_steps_per_gen_step),
            ("most_frequent_for_disc", self.most_frequent_for_disc),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        let check = |name: &str, ok: bool, v: f64| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} out of range: {v}")))
            }
        };
        check("lr_generator", self.lr_generator > 0.0 && self.lr_generator.is_finite(), self.lr_generator)?;
        check(
            "lr_discriminator",
            self.lr_discriminator > 0.0 && self.lr_discriminator.is_finite(),
            self.lr_discriminator,
        )?;
        check("lr_decay", self.lr_decay > 0.0 && self.lr_decay <= 1.0, self.lr_decay)?;
        check(
            "lr_shrink_on_plateau",
            self.lr_shrink_on_plateau > 0.0 && self.lr_shrink_on_plateau <= 1.0,
            self.lr_shrink_on_plateau,
        )?;
        check("cycle_weight", self.cycle_weight >= 0.0 && self.cycle_weight.is_finite(), self.cycle_weight)?;
        check(
            "orthogonalize_beta",
            (0.0..=0.1).contains(&self.orthogonalize_beta),
            self.orthogonalize_beta,
        )?;
        self.discriminator.validate()?;
        self.selection.validate()
    }
}

/// Word ids for one batch on each side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepBatch {
    pub src_ids: Vec<usize>,
    pub tgt_ids: Vec<usize>,
}

impl StepBatch {
    /// The same batch seen from the other language.
    pub fn mirrored(&self) -> Self {
        StepBatch {
            src_ids: self.tgt_ids.clone(),
            tgt_ids: self.src_ids.clone(),
        }
    }
}

/// Batches for one training iteration: one per discriminator step, then one
/// shared by the adversarial and cycle terms of the generator step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepBatches {
    pub disc: Vec<StepBatch>,
    pub gen: StepBatch,
}

impl StepBatches {
    pub fn mirrored(&self) -> Self {
        StepBatches {
            disc: self.disc.iter().map(StepBatch::mirrored).collect(),
            gen: self.gen.mirrored(),
        }
    }
}

/// Loss components of one iteration. `total` is the generator objective
/// `gen_loss_f + gen_loss_g + w·(cycle_x + cycle_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub disc_loss_y: f64,
    pub disc_loss_x: f64,
    pub disc_acc_y: f64,
    pub disc_acc_x: f64,
    pub gen_loss_f: f64,
    pub gen_loss_g: f64,
    pub cycle_x: f64,
    pub cycle_y: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-iteration means.
    pub losses: StepLosses,
    pub s_forward: f64,
    pub s_backward: f64,
    pub s_a: f64,
    pub lr_generator: f64,
    pub orthogonality_f: f64,
    pub orthogonality_g: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,disc_loss_y,disc_loss_x,disc_acc_y,disc_acc_x,gen_loss_f,gen_loss_g,cycle_x,cycle_y,total_objective,s_forward,s_backward,s_a,lr_generator,orthogonality_f,orthogonality_g";

    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        let mut row = self.epoch.to_string();
        for v in [
            l.disc_loss_y,
            l.disc_loss_x,
            l.disc_acc_y,
            l.disc_acc_x,
            l.gen_loss_f,
            l.gen_loss_g,
            l.cycle_x,
            l.cycle_y,
            l.total,
            self.s_forward,
            self.s_backward,
            self.s_a,
            self.lr_generator,
            self.orthogonality_f,
            self.orthogonality_g,
        ] {
            write!(row, ",{}", fmt_sig(v, 12)).unwrap();
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestCheckpoint {
    pub epoch: usize,
    pub s_a: f64,
    pub f_map: LinearMapping,
    pub g_map: LinearMapping,
}

pub struct CycleGrads {
    pub loss: f64,
    pub grad_first: Array2<f64>,
    pub grad_second: Array2<f64>,
}

fn cycle_terms(first: &LinearMapping, second: &LinearMapping, rows: ArrayView2<f64>, grads: bool) -> Result<CycleGrads> {
    if rows.nrows() == 0 {
        return Err(Error::InvalidArgument("cycle loss needs at least one row".into()));
    }
    let hidden = first.apply(rows)?;
    let recon = second.apply(hidden.view())?;
    let n = rows.nrows() as f64;
    let mut loss = 0.0;
    let mut drecon = Array2::<f64>::zeros(recon.raw_dim());
    let mut degenerate = 0usize;
    for ((x, r), mut dr) in rows.rows().into_iter().zip(recon.rows()).zip(drecon.rows_mut()) {
        let nx = x.dot(&x).sqrt();
        let nr = r.dot(&r).sqrt();
        if nx == 0.0 || nr == 0.0 {
            degenerate += 1;
            loss += 2.0;
            continue;
        }
        let cos = x.dot(&r) / (nx * nr);
        loss += 1.0 - cos;
        if grads {
            // d(1 − cos)/dr = −x/(|x||r|) + cos·r/|r|²
            Zip::from(&mut dr).and(&x).and(&r).for_each(|d, &xv, &rv| {
                *d = (-xv / (nx * nr) + cos * rv / (nr * nr)) / n;
            });
        }
    }
    if degenerate > 0 {
        warn!("cycle loss: {degenerate} zero-norm reconstruction(s) scored as 2.0");
    }
    let loss = loss / n;
    if !grads {
        return Ok(CycleGrads {
            loss,
            grad_first: Array2::zeros((0, 0)),
            grad_second: Array2::zeros((0, 0)),
        });
    }
    let grad_second = hidden.t().dot(&drecon);
    let dhidden = drecon.dot(&second.weights().t());
    let grad_first = rows.t().dot(&dhidden);
    Ok(CycleGrads {
        loss,
        grad_first,
        grad_second,
    })
}

/// Mean `1 − cos(x, second(first(x)))` over `rows`. `cycle_loss(F, G, X)` is
/// the source side, `cycle_loss(G, F, Y)` the target side. Always in `[0, 2]`.
pub fn cycle_loss(first: &LinearMapping, second: &LinearMapping, rows: ArrayView2<f64>) -> Result<f64> {
    Ok(cycle_terms(first, second, rows, false)?.loss)
}

/// [`cycle_loss`] with its gradients with respect to both weight matrices.
pub fn cycle_backward(first: &LinearMapping, second: &LinearMapping, rows: ArrayView2<f64>) -> Result<CycleGrads> {
    cycle_terms(first, second, rows, true)
}

/// Training state for both directions.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub f_map: LinearMapping,
    pub g_map: LinearMapping,
    pub d_x: Discriminator,
    pub d_y: Discriminator,
    pub history: Vec<EpochRecord>,
    pub best: Option<BestCheckpoint>,
    pub rng: ChaCha8Rng,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    iteration: usize,
}

fn average(acc: &mut StepLosses, s: &StepLosses, n: f64) {
    acc.disc_loss_y += s.disc_loss_y / n;
    acc.disc_loss_x += s.disc_loss_x / n;
    acc.disc_acc_y += s.disc_acc_y / n;
    acc.disc_acc_x += s.disc_acc_x / n;
    acc.gen_loss_f += s.gen_loss_f / n;
    acc.gen_loss_g += s.gen_loss_g / n;
    acc.cycle_x += s.cycle_x / n;
    acc.cycle_y += s.cycle_y / n;
    acc.total += s.total / n;
}

impl TrainRun {
    /// Seeds the run; mappings start at the identity unless `random_init`.
    pub fn new(config: TrainConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (f_map, g_map) = if config.random_init {
            let f = LinearMapping::random_orthogonal(dim, &mut rng);
            let g = LinearMapping::random_orthogonal(dim, &mut rng);
            (f, g)
        } else {
            (LinearMapping::identity(dim), LinearMapping::identity(dim))
        };
        let d_y = Discriminator::new(dim, config.discriminator, &mut rng)?;
        let d_x = Discriminator::new(dim, config.discriminator, &mut rng)?;
        Ok(TrainRun {
            config,
            f_map,
            g_map,
            d_x,
            d_y,
            history: Vec::new(),
            best: None,
            rng,
            lr_generator: config.lr_generator,
            lr_discriminator: config.lr_discriminator,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn check_spaces(&self, src: &EmbeddingSpace, tgt: &EmbeddingSpace) -> Result<()> {
        let d = self.f_map.dim();
        if src.dim() != d || tgt.dim() != d {
            return Err(Error::Shape(format!(
                "embedding dimensions {} and {} do not match mapping dimension {d}",
                src.dim(),
                tgt.dim()
            )));
        }
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::InvalidArgument("training needs non-empty vocabularies".into()));
        }
        Ok(())
    }

    /// Draws the batches for one iteration, uniformly from the
    /// `most_frequent_for_disc` prefix of each vocabulary.
    pub fn sample_batches(&mut self, src_len: usize, tgt_len: usize) -> StepBatches {
        let ns = self.config.most_frequent_for_disc.min(src_len);
        let nt = self.config.most_frequent_for_disc.min(tgt_len);
        let bs = self.config.batch_size;
        let rng = &mut self.rng;
        let mut batch = || StepBatch {
            src_ids: (0..bs).map(|_| rng.random_range(0..ns)).collect(),
            tgt_ids: (0..bs).map(|_| rng.random_range(0..nt)).collect(),
        };
        let disc = (0..self.config.disc_steps_per_gen_step).map(|_| batch()).collect();
        StepBatches { disc, gen: batch() }
    }

    fn abort(&self, what: &str) -> Error {
        Error::NumericalAbort {
            iteration: self.iteration,
            what: what.to_string(),
        }
    }

    fn step_impl<const CYCLE: bool>(
        &mut self,
        src: &EmbeddingSpace,
        tgt: &EmbeddingSpace,
        batches: &StepBatches,
    ) -> Result<StepLosses> {
        let mut out = StepLosses::default();
        let smoothing = self.config.discriminator.smoothing;
        let nd = batches.disc.len() as f64;

        for b in &batches.disc {
            let xb = src.rows(&b.src_ids);
            let yb = tgt.rows(&b.tgt_ids);

            let fx = self.f_map.apply(xb.view())?;
            let (ly, gy) = self
                .d_y
                .disc_loss_grads(yb.view(), fx.view(), smoothing, Some(&mut self.rng))?;
            self.d_y
                .sgd_step(&gy, self.lr_discriminator)
                .map_err(|_| self.abort("discriminator D_y"))?;

            let gyb = self.g_map.apply(yb.view())?;
            let (lx, gx) = self
                .d_x
                .disc_loss_grads(xb.view(), gyb.view(), smoothing, Some(&mut self.rng))?;
            self.d_x
                .sgd_step(&gx, self.lr_discriminator)
                .map_err(|_| self.abort("discriminator D_x"))?;

            out.disc_loss_y += ly.disc_loss / nd;
            out.disc_loss_x += lx.disc_loss / nd;
            out.disc_acc_y += ly.disc_accuracy / nd;
            out.disc_acc_x += lx.disc_accuracy / nd;
        }

        let xb = src.rows(&batches.gen.src_ids);
        let yb = tgt.rows(&batches.gen.tgt_ids);

        let fx = self.f_map.apply(xb.view())?;
        let (gen_f, dfx) = self.d_y.gen_loss_input_grad(fx.view(), Some(&mut self.rng))?;
        let mut grad_f = xb.t().dot(&dfx);

        let gy = self.g_map.apply(yb.view())?;
        let (gen_g, dgy) = self.d_x.gen_loss_input_grad(gy.view(), Some(&mut self.rng))?;
        let mut grad_g = yb.t().dot(&dgy);

        out.gen_loss_f = gen_f;
        out.gen_loss_g = gen_g;
        let mut total = gen_f + gen_g;

        if CYCLE {
            let w = self.config.cycle_weight;
            if w != 0.0 {
                let cx = cycle_backward(&self.f_map, &self.g_map, xb.view())?;
                let cy = cycle_backward(&self.g_map, &self.f_map, yb.view())?;
                grad_f.scaled_add(w, &(&cx.grad_first + &cy.grad_second));
                grad_g.scaled_add(w, &(&cx.grad_second + &cy.grad_first));
                out.cycle_x = cx.loss;
                out.cycle_y = cy.loss;
            } else {
                out.cycle_x = cycle_loss(&self.f_map, &self.g_map, xb.view())?;
                out.cycle_y = cycle_loss(&self.g_map, &self.f_map, yb.view())?;
            }
            total += w * (out.cycle_x + out.cycle_y);
        }
        out.total = total;

        let lr = self.lr_generator;
        self.f_map.weights_mut().scaled_add(-lr, &grad_f);
        self.g_map.weights_mut().scaled_add(-lr, &grad_g);
        let beta = self.config.orthogonalize_beta;
        if beta > 0.0 {
            self.f_map.orthogonalize_step(beta);
            self.g_map.orthogonalize_step(beta);
        }
        if self.f_map.weights().iter().any(|v| !v.is_finite()) {
            return Err(self.abort("mapping F"));
        }
        if self.g_map.weights().iter().any(|v| !v.is_finite()) {
            return Err(self.abort("mapping G"));
        }
        self.iteration += 1;
        Ok(out)
    }

    /// One iteration of the full objective on the given batches.
    pub fn train_step(&mut self, src: &EmbeddingSpace, tgt: &EmbeddingSpace, batches: &StepBatches) -> Result<StepLosses> {
        self.step_impl::<true>(src, tgt, batches)
    }

    /// One iteration with the cycle terms compiled out: two independent
    /// adversarial aligners.
    pub fn train_step_baseline(
        &mut self,
        src: &EmbeddingSpace,
        tgt: &EmbeddingSpace,
        batches: &StepBatches,
    ) -> Result<StepLosses> {
        self.step_impl::<false>(src, tgt, batches)
    }

    fn epoch_impl<const CYCLE: bool>(&mut self, src: &EmbeddingSpace, tgt: &EmbeddingSpace) -> Result<EpochRecord> {
        self.check_spaces(src, tgt)?;
        let iters = self.config.iterations_per_epoch;
        let mut mean = StepLosses::default();
        for _ in 0..iters {
            let batches = self.sample_batches(src.len(), tgt.len());
            let s = self.step_impl::<CYCLE>(src, tgt, &batches)?;
            average(&mut mean, &s, iters as f64);
        }

        let epoch = self.history.len();
        let orthogonality_f = self.f_map.orthogonality_defect();
        let orthogonality_g = self.g_map.orthogonality_defect();
        if self.config.orthogonalize_beta > 0.0 && orthogonality_f.max(orthogonality_g) >= 0.1 {
            warn!("epoch {epoch}: mappings drifted from orthogonal (F {orthogonality_f:.3e}, G {orthogonality_g:.3e})");
        }
        let score = criterion_sa(&self.f_map, &self.g_map, src, tgt, &self.config.selection)?;
        if !score.combined.is_finite() {
            return Err(self.abort("selection criterion"));
        }
        let record = EpochRecord {
            epoch,
            losses: mean,
            s_forward: score.forward,
            s_backward: score.backward,
            s_a: score.combined,
            lr_generator: self.lr_generator,
            orthogonality_f,
            orthogonality_g,
        };
        self.history.push(record);

        let improved = self.best.as_ref().is_none_or(|b| score.combined > b.s_a);
        if improved {
            self.best = Some(BestCheckpoint {
                epoch,
                s_a: score.combined,
                f_map: self.f_map.clone(),
                g_map: self.g_map.clone(),
            });
        }
        self.lr_generator *= self.config.lr_decay;
        if !improved {
            self.lr_generator *= self.config.lr_shrink_on_plateau;
        }
        info!(
            "epoch {epoch}: disc_y {:.4} disc_x {:.4} gen_f {:.4} gen_g {:.4} cycle {:.4}/{:.4} S_a {:.5}{}",
            mean.disc_loss_y,
            mean.disc_loss_x,
            mean.gen_loss_f,
            mean.gen_loss_g,
            mean.cycle_x,
            mean.cycle_y,
            score.combined,
            if improved { " *" } else { "" }
        );
        Ok(record)
    }

    /// Runs `iterations_per_epoch` iterations, then scores the maps with the
    /// selection criterion, updates the best checkpoint and the learning
    /// rate schedule.
    pub fn train_epoch(&mut self, src: &EmbeddingSpace, tgt: &EmbeddingSpace) -> Result<EpochRecord> {
        self.epoch_impl::<true>(src, tgt)
    }

    pub fn train_epoch_baseline(&mut self, src: &EmbeddingSpace, tgt: &EmbeddingSpace) -> Result<EpochRecord> {
        self.epoch_impl::<false>(src, tgt)
    }

    /// Trains for the configured number of epochs, calling `on_epoch` after
    /// each one.
    pub fn fit<F>(&mut self, src: &EmbeddingSpace, tgt: &EmbeddingSpace, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&TrainRun) -> Result<()>,
    {
        while self.history.len() < self.config.epochs {
            self.train_epoch(src, tgt)?;
            on_epoch(self)?;
        }
        Ok(())
    }

    /// The maps with the best selection score so far (the current ones
    /// before any epoch has finished).
    pub fn selected_maps(&self) -> (&LinearMapping, &LinearMapping) {
        match &self.best {
            Some(b) => (&b.f_map, &b.g_map),
            None => (&self.f_map, &self.g_map),
        }
    }

    /// Writes selected and final maps, both discriminators and the history.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (f, g) = self.selected_maps();
        f.save_text(dir.join(MAPPING_F_FILE))?;
        g.save_text(dir.join(MAPPING_G_FILE))?;
        self.f_map.save_text(dir.join(FINAL_F_FILE))?;
        self.g_map.save_text(dir.join(FINAL_G_FILE))?;
        self.d_x.save_text(dir.join(DISC_X_FILE))?;
        self.d_y.save_text(dir.join(DISC_Y_FILE))?;
        write_history(dir.join(HISTORY_FILE), &self.history)
    }
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    (|| {
        writeln!(out, "{}", EpochRecord::CSV_HEADER)?;
        for r in history {
            writeln!(out, "{}", r.csv_row())?;
        }
        out.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Loads the selected `(F, G)` pair from a checkpoint directory.
pub fn load_mappings(dir: impl AsRef<Path>) -> Result<(LinearMapping, LinearMapping)> {
    let dir = dir.as_ref();
    Ok((
        LinearMapping::load_text(dir.join(MAPPING_F_FILE))?,
        LinearMapping::load_text(dir.join(MAPPING_G_FILE))?,
    ))
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub f_map: LinearMapping,
    pub g_map: LinearMapping,
    pub rounds_completed: usize,
    /// Mutual-neighbor dictionary sizes per round, `(forward, backward)`.
    pub dictionary_sizes: Vec<(usize, usize)>,
}

fn induce_dictionary(
    map: &LinearMapping,
    from: &EmbeddingSpace,
    to: &EmbeddingSpace,
    dict_size: usize,
    k: usize,
) -> Result<Vec<(usize, usize)>> {
    let mapped = map.apply(from.prefix(dict_size))?;
    let index = CslsIndex::build(mapped.view(), to.prefix(dict_size), k)?;
    Ok(index.mutual_dictionary(dict_size))
}

fn solve_on(dict: &[(usize, usize)], from: &EmbeddingSpace, to: &EmbeddingSpace) -> Result<LinearMapping> {
    let (a, b): (Vec<usize>, Vec<usize>) = dict.iter().copied().unzip();
    procrustes_solve(from.rows(&a).view(), to.rows(&b).view())
}

/// Iterative Procrustes refinement. Each round induces a mutual CSLS
/// dictionary among the `dict_size` most frequent words for each direction
/// using the current maps, then re-solves both maps in closed form.
pub fn refine_procrustes(
    f_map: &LinearMapping,
    g_map: &LinearMapping,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    let mut f = f_map.clone();
    let mut g = g_map.clone();
    let mut sizes = Vec::new();
    for round in 0..cfg.rounds {
        let dict_f = induce_dictionary(&f, src, tgt, cfg.dict_size, cfg.k)?;
        let dict_g = induce_dictionary(&g, tgt, src, cfg.dict_size, cfg.k)?;
        if dict_f.is_empty() || dict_g.is_empty() {
            warn!(
                "refinement round {round}: empty mutual-neighbor dictionary ({} forward, {} backward); stopping",
                dict_f.len(),
                dict_g.len()
            );
            break;
        }
        f = solve_on(&dict_f, src, tgt)?;
        g = solve_on(&dict_g, tgt, src)?;
        sizes.push((dict_f.len(), dict_g.len()));
        info!("refinement round {round}: dictionaries {} / {}", dict_f.len(), dict_g.len());
    }
    Ok(RefineOutcome {
        f_map: f,
        g_map: g,
        rounds_completed: sizes.len(),
        dictionary_sizes: sizes,
    })
}
