//! Alternating-update training loop: classifier pretraining, per-step
//! batch mixing with a ramped synthetic portion, K critic updates, then
//! one update each for I, C and G.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::games::{self, GameLossReport};
use crate::network::{build_network, one_hot, Head, NetworkParams, NetworkSpec};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{Tape, Tensor};

fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    64
}
fn default_k() -> usize {
    1
}
fn default_lr() -> f64 {
    2e-4
}
fn default_pretrain_lr() -> f64 {
    1e-3
}
fn default_pretrain_epochs() -> usize {
    2000
}
fn default_join() -> usize {
    3
}
fn default_ramp_start() -> usize {
    3
}
fn default_p_gen() -> f64 {
    0.5
}
fn default_p_pseudo() -> f64 {
    0.25
}
fn default_z_dim() -> usize {
    1
}
fn default_z_prior() -> ZPrior {
    ZPrior::Gaussian
}
fn default_true() -> bool {
    true
}

/// Everything the training algorithm leaves open.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Critic updates per training step.
    #[serde(default = "default_k")]
    pub k_critic: usize,
    #[serde(default = "default_lr")]
    pub lr_g: f64,
    #[serde(default = "default_lr")]
    pub lr_i: f64,
    #[serde(default = "default_lr")]
    pub lr_c: f64,
    #[serde(default = "default_lr")]
    pub lr_dxy: f64,
    #[serde(default = "default_lr")]
    pub lr_dxz: f64,
    #[serde(default = "default_pretrain_lr")]
    pub lr_pretrain: f64,
    /// Full-batch supervised epochs on the labeled pool before the games start.
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    /// Epoch at which C starts minimizing the generated term of R_y.
    #[serde(default = "default_join")]
    pub c_join_epoch: usize,
    #[serde(default = "default_ramp_start")]
    pub ramp_start: usize,
    /// Defaults to 60% of `epochs` when absent.
    #[serde(default)]
    pub ramp_end: Option<usize>,
    /// Terminal portion of generated pairs in the mixed batch.
    #[serde(default = "default_p_gen")]
    pub p_gen: f64,
    /// Terminal portion of pseudo-labeled pairs in the mixed batch.
    #[serde(default = "default_p_pseudo")]
    pub p_pseudo: f64,
    #[serde(default)]
    pub saturating_gen_loss: bool,
    /// Include pseudo-labeled rows in C's supervised R_y term.
    #[serde(default)]
    pub pseudo_in_ry: bool,
    /// Ablation switch: when off, the generated term of R_y is dropped
    /// from both C's and G's updates (the supervised term remains).
    #[serde(default = "default_true")]
    pub enable_ry: bool,
    /// Ablation switch: when off, R_z is dropped from I's and G's updates.
    #[serde(default = "default_true")]
    pub enable_rz: bool,
    #[serde(default = "default_z_dim")]
    pub z_dim: usize,
    #[serde(default = "default_z_prior")]
    pub z_prior: ZPrior,
}

impl Default for TrainConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults are valid")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_critic < 1 {
            return Err(Error::Config("k_critic must be >= 1".into()));
        }
        if self.batch_size == 0 || self.batch_size % 4 != 0 {
            return Err(Error::Config(format!("batch_size {} must be a positive multiple of 4", self.batch_size)));
        }
        if !(0.0..=0.75).contains(&(self.p_gen + self.p_pseudo)) || self.p_gen < 0.0 || self.p_pseudo < 0.0 {
            return Err(Error::Config(format!(
                "mixing portions p_gen={} p_pseudo={} must be nonnegative and sum to at most 0.75",
                self.p_gen, self.p_pseudo
            )));
        }
        for (name, lr) in [
            ("lr_g", self.lr_g),
            ("lr_i", self.lr_i),
            ("lr_c", self.lr_c),
            ("lr_dxy", self.lr_dxy),
            ("lr_dxz", self.lr_dxz),
            ("lr_pretrain", self.lr_pretrain),
        ] {
            if lr <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.z_dim == 0 {
            return Err(Error::Config("z_dim must be positive".into()));
        }
        if let Some(end) = self.ramp_end {
            if end < self.ramp_start {
                return Err(Error::Config("ramp_end before ramp_start".into()));
            }
        }
        Ok(())
    }

    pub fn ramp_end_epoch(&self) -> usize {
        self.ramp_end.unwrap_or(self.epochs * 3 / 5).max(self.ramp_start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZPrior {
    /// Isotropic N(0, 1).
    Gaussian,
    /// Elementwise U(-1, 1).
    Uniform,
}

/// Priors over the latent pair: uniform categorical y, configurable z.
#[derive(Debug, Clone, Copy)]
pub struct PriorSpec {
    pub num_classes: usize,
    pub z_dim: usize,
    pub z_prior: ZPrior,
}

impl PriorSpec {
    pub fn sample_y(&self, batch: usize, rng: &mut ChaCha8Rng) -> (Tensor, Vec<usize>) {
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..self.num_classes)).collect();
        let onehot = one_hot(&labels, self.num_classes).expect("labels in range");
        (onehot, labels)
    }

    pub fn sample_z(&self, batch: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data: Vec<f64> = match self.z_prior {
            ZPrior::Gaussian => {
                let normal = Normal::new(0.0, 1.0).expect("valid");
                (0..batch * self.z_dim).map(|_| normal.sample(rng)).collect()
            }
            ZPrior::Uniform => (0..batch * self.z_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        Tensor::matrix(batch, self.z_dim, data).expect("consistent dims")
    }
}

/// Hidden-layer widths of the five networks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelWidths {
    pub g_hidden: Vec<usize>,
    pub i_hidden: Vec<usize>,
    pub c_hidden: Vec<usize>,
    pub dxy_hidden: Vec<usize>,
    pub dxz_hidden: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for ModelWidths {
    fn default() -> Self {
        ModelWidths {
            g_hidden: vec![64, 64],
            i_hidden: vec![64, 64],
            c_hidden: vec![64, 64],
            dxy_hidden: vec![64, 64],
            dxz_hidden: vec![64, 64],
            leaky_slope: 0.2,
        }
    }
}

/// The five networks of one model.
#[derive(Debug, Clone)]
pub struct Networks {
    pub g: NetworkParams,
    pub i: NetworkParams,
    pub c: NetworkParams,
    pub dxy: NetworkParams,
    pub dxz: NetworkParams,
}

impl Networks {
    /// Build all five networks; each gets its own seed offset so they
    /// start from independent initializations.
    pub fn build(
        x_dim: usize,
        num_classes: usize,
        z_dim: usize,
        widths: &ModelWidths,
        g_head: Head,
        init_seed: u64,
    ) -> Result<Self> {
        Ok(Networks {
            g: build_network(
                &NetworkSpec::generator(x_dim, num_classes, z_dim, widths.g_hidden.clone(), g_head),
                init_seed,
            )?,
            i: build_network(&NetworkSpec::inference(x_dim, z_dim, widths.i_hidden.clone()), init_seed.wrapping_add(1))?,
            c: build_network(&NetworkSpec::classifier(x_dim, num_classes, widths.c_hidden.clone()), init_seed.wrapping_add(2))?,
            dxy: build_network(
                &NetworkSpec::critic_xy(x_dim, num_classes, widths.dxy_hidden.clone(), widths.leaky_slope),
                init_seed.wrapping_add(3),
            )?,
            dxz: build_network(
                &NetworkSpec::critic_xz(x_dim, z_dim, widths.dxz_hidden.clone(), widths.leaky_slope),
                init_seed.wrapping_add(4),
            )?,
        })
    }

    pub fn all_finite(&self) -> bool {
        [&self.g, &self.i, &self.c, &self.dxy, &self.dxz].iter().all(|n| n.all_finite())
    }
}

/// Number of optimizer updates applied to each network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateCounts {
    pub g: u64,
    pub i: u64,
    pub c: u64,
    pub dxy: u64,
    pub dxz: u64,
}

/// Draw a generated tuple `(x_g, y_g, z)`; the same tuple feeds both
/// adversarial games and both reconstructions within one step.
pub fn sample_generated(
    g: &NetworkParams,
    priors: &PriorSpec,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (y, _) = priors.sample_y(batch_size, rng);
    let z = priors.sample_z(batch_size, rng);
    let x = crate::network::generator_forward(g, &y, &z)?;
    Ok((x, y, z))
}

/// Pseudo-label a batch: `y` drawn from the classifier's predictive
/// distribution per row, no gradient retained.
pub fn sample_pseudo_labeled(c: &NetworkParams, x_u: &Tensor, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
    let probs = crate::network::classify(c, x_u)?;
    let num_classes = probs.last_dim();
    let mut labels = Vec::with_capacity(probs.rows());
    for r in 0..probs.rows() {
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        let mut picked = num_classes - 1;
        for (k, &p) in probs.row(r).iter().enumerate() {
            acc += p;
            if u < acc {
                picked = k;
                break;
            }
        }
        labels.push(picked);
    }
    Ok((x_u.clone(), one_hot(&labels, num_classes)?))
}

/// Mixed-batch portions `(p_label, p_gen, p_pseudo)` at a given epoch:
/// all-real before the ramp, terminal portions after it, linear in between.
pub fn mixing_schedule(epoch: usize, cfg: &TrainConfig) -> (f64, f64, f64) {
    let start = cfg.ramp_start;
    let end = cfg.ramp_end_epoch();
    let t = if epoch < start {
        0.0
    } else if epoch >= end {
        1.0
    } else {
        (epoch - start) as f64 / (end - start) as f64
    };
    let p_gen = t * cfg.p_gen;
    let p_pseudo = t * cfg.p_pseudo;
    (1.0 - p_gen - p_pseudo, p_gen, p_pseudo)
}

/// Compose the mixed batch `(x_m, y_m)`: `round(portion * batch_size)`
/// rows from the generated and pseudo sources, the remainder from the
/// labeled pool (with replacement), then a deterministic shuffle.
pub fn mix_batch(
    labeled: (&Tensor, &Tensor),
    generated: (&Tensor, &Tensor),
    pseudo: (&Tensor, &Tensor),
    portions: (f64, f64, f64),
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Tensor)> {
    let (p_label, p_gen, p_pseudo) = portions;
    let n_gen = (p_gen * batch_size as f64).round() as usize;
    let n_pseudo = (p_pseudo * batch_size as f64).round() as usize;
    let n_label = batch_size - n_gen - n_pseudo;
    if n_label > 0 && labeled.0.rows() == 0 {
        return Err(Error::Invalid("mix_batch: labeled pool empty with p_label > 0".into()));
    }
    let _ = p_label;
    if n_gen > generated.0.rows() || n_pseudo > pseudo.0.rows() {
        return Err(Error::Invalid("mix_batch: source smaller than requested portion".into()));
    }

    let x_cols = labeled.0.last_dim();
    let y_cols = labeled.1.last_dim();
    let mut x_rows: Vec<&[f64]> = Vec::with_capacity(batch_size);
    let mut y_rows: Vec<&[f64]> = Vec::with_capacity(batch_size);
    for _ in 0..n_label {
        let i = rng.gen_range(0..labeled.0.rows());
        x_rows.push(labeled.0.row(i));
        y_rows.push(labeled.1.row(i));
    }
    for i in 0..n_gen {
        x_rows.push(generated.0.row(i));
        y_rows.push(generated.1.row(i));
    }
    for i in 0..n_pseudo {
        x_rows.push(pseudo.0.row(i));
        y_rows.push(pseudo.1.row(i));
    }
    let mut order: Vec<usize> = (0..batch_size).collect();
    order.shuffle(rng);
    let mut x_data = Vec::with_capacity(batch_size * x_cols);
    let mut y_data = Vec::with_capacity(batch_size * y_cols);
    for &i in &order {
        x_data.extend_from_slice(x_rows[i]);
        y_data.extend_from_slice(y_rows[i]);
    }
    Ok((Tensor::matrix(batch_size, x_cols, x_data)?, Tensor::matrix(batch_size, y_cols, y_data)?))
}

/// Alternating-update trainer holding the networks and optimizer state.
pub struct Trainer {
    pub nets: Networks,
    pub cfg: TrainConfig,
    pub priors: PriorSpec,
    opt_g: AdamState,
    opt_i: AdamState,
    opt_c: AdamState,
    opt_dxy: AdamState,
    opt_dxz: AdamState,
    pub counts: UpdateCounts,
    step: u64,
}

impl Trainer {
    pub fn new(nets: Networks, cfg: TrainConfig, priors: PriorSpec) -> Result<Self> {
        cfg.validate()?;
        let opt_g = AdamState::new(AdamConfig::with_lr(cfg.lr_g), &nets.g.tensors);
        let opt_i = AdamState::new(AdamConfig::with_lr(cfg.lr_i), &nets.i.tensors);
        let opt_c = AdamState::new(AdamConfig::with_lr(cfg.lr_c), &nets.c.tensors);
        let opt_dxy = AdamState::new(AdamConfig::with_lr(cfg.lr_dxy), &nets.dxy.tensors);
        let opt_dxz = AdamState::new(AdamConfig::with_lr(cfg.lr_dxz), &nets.dxz.tensors);
        Ok(Trainer {
            nets,
            cfg,
            priors,
            opt_g,
            opt_i,
            opt_c,
            opt_dxy,
            opt_dxz,
            counts: UpdateCounts::default(),
            step: 0,
        })
    }

    /// Supervised pretraining of C on the labeled pool, full batch.
    pub fn pretrain(&mut self, split: &DatasetSplit) -> Result<()> {
        if split.labeled_y.is_empty() {
            return Err(Error::Invalid("pretrain: labeled set is empty".into()));
        }
        let y = one_hot(&split.labeled_y, split.num_classes)?;
        let mut opt = AdamState::new(AdamConfig::with_lr(self.cfg.lr_pretrain), &self.nets.c.tensors);
        for _ in 0..self.cfg.pretrain_epochs {
            let mut tape = Tape::new();
            let cvars = self.nets.c.insert_into(&mut tape, true);
            let xv = tape.constant(&split.labeled_x);
            let yv = tape.constant(&y);
            let loss = games::ry_term(&mut tape, &self.nets.c, &cvars, xv, yv)?;
            let mut grads = tape.backward(loss)?;
            let gs: Vec<Tensor> = cvars
                .vars
                .iter()
                .zip(&self.nets.c.tensors)
                .map(|(&v, t)| grads.take(v, t.shape()))
                .collect();
            opt.apply(&mut self.nets.c.tensors, &gs)?;
        }
        Ok(())
    }

    fn apply_update(
        net: &mut NetworkParams,
        opt: &mut AdamState,
        count: &mut u64,
        vars: &crate::network::NetVars,
        grads: &mut crate::tensor::Gradients,
    ) -> Result<()> {
        let gs: Vec<Tensor> = vars
            .vars
            .iter()
            .zip(&net.tensors)
            .map(|(&v, t)| grads.take(v, t.shape()))
            .collect();
        opt.apply(&mut net.tensors, &gs)?;
        *count += 1;
        Ok(())
    }

    fn critic_step_xz(&mut self, x_u: &Tensor, z_hat: &Tensor, x_g: &Tensor, z: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let dvars = self.nets.dxz.insert_into(&mut tape, true);
        let real = (tape.constant(x_u), tape.constant(z_hat));
        let fake = (tape.constant(x_g), tape.constant(z));
        let loss = games::critic_loss(&mut tape, &self.nets.dxz, &dvars, real, fake)?;
        let value = tape.value(loss).item()?;
        let mut grads = tape.backward(loss)?;
        Self::apply_update(&mut self.nets.dxz, &mut self.opt_dxz, &mut self.counts.dxz, &dvars, &mut grads)?;
        Ok(value)
    }

    fn critic_step_xy(&mut self, x_m: &Tensor, y_m: &Tensor, x_g: &Tensor, y_g: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let dvars = self.nets.dxy.insert_into(&mut tape, true);
        let real = (tape.constant(x_m), tape.constant(y_m));
        let fake = (tape.constant(x_g), tape.constant(y_g));
        let loss = games::critic_loss(&mut tape, &self.nets.dxy, &dvars, real, fake)?;
        let value = tape.value(loss).item()?;
        let mut grads = tape.backward(loss)?;
        Self::apply_update(&mut self.nets.dxy, &mut self.opt_dxy, &mut self.counts.dxy, &dvars, &mut grads)?;
        Ok(value)
    }

    /// I minimizes its side of `L_xz` on real data plus `R_z` on
    /// generated data; G and the critic are frozen.
    fn i_step(&mut self, x_u: &Tensor, x_g: &Tensor, z: &Tensor) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let ivars = self.nets.i.insert_into(&mut tape, true);
        let dvars = self.nets.dxz.insert_into(&mut tape, false);
        let xv = tape.constant(x_u);
        let z_hat = self.nets.i.forward(&mut tape, &ivars, xv)?;
        let adv = games::gen_side_real_term(
            &mut tape,
            &self.nets.dxz,
            &dvars,
            xv,
            z_hat,
            self.cfg.saturating_gen_loss,
        )?;
        let xg = tape.constant(x_g);
        let zv = tape.constant(z);
        let rz = games::rz_term(&mut tape, &self.nets.i, &ivars, xg, zv)?;
        let loss = if self.cfg.enable_rz { tape.add(adv, rz)? } else { adv };
        let (adv_v, rz_v) = (tape.value(adv).item()?, tape.value(rz).item()?);
        let mut grads = tape.backward(loss)?;
        Self::apply_update(&mut self.nets.i, &mut self.opt_i, &mut self.counts.i, &ivars, &mut grads)?;
        Ok((adv_v, rz_v))
    }

    /// C minimizes R_y: supervised term always, generated term only once
    /// the generator has had a few epochs to produce meaningful samples.
    fn c_step(
        &mut self,
        x_l: &Tensor,
        y_l: &Tensor,
        x_g: &Tensor,
        y_g: &Tensor,
        epoch: usize,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let cvars = self.nets.c.insert_into(&mut tape, true);
        let xl = tape.constant(x_l);
        let yl = tape.constant(y_l);
        let labeled = games::ry_term(&mut tape, &self.nets.c, &cvars, xl, yl)?;
        let xg = tape.constant(x_g);
        let yg = tape.constant(y_g);
        let generated = games::ry_term(&mut tape, &self.nets.c, &cvars, xg, yg)?;
        let r_y = tape.value(labeled).item()? + tape.value(generated).item()?;
        // both R_y terms are off: C stays at its pretrained parameters
        if !self.cfg.enable_ry {
            return Ok(r_y);
        }
        let loss = if epoch >= self.cfg.c_join_epoch {
            tape.add(labeled, generated)?
        } else {
            labeled
        };
        let mut grads = tape.backward(loss)?;
        Self::apply_update(&mut self.nets.c, &mut self.opt_c, &mut self.counts.c, &cvars, &mut grads)?;
        Ok(r_y)
    }

    /// G minimizes the equally weighted sum of its four terms, with I, C
    /// and both critics frozen.
    fn g_step(&mut self, y_g: &Tensor, z: &Tensor) -> Result<(f64, f64, f64, f64)> {
        let mut tape = Tape::new();
        let gvars = self.nets.g.insert_into(&mut tape, true);
        let ivars = self.nets.i.insert_into(&mut tape, false);
        let cvars = self.nets.c.insert_into(&mut tape, false);
        let dxy_vars = self.nets.dxy.insert_into(&mut tape, false);
        let dxz_vars = self.nets.dxz.insert_into(&mut tape, false);
        let yv = tape.constant(y_g);
        let zv = tape.constant(z);
        let input = tape.concat(yv, zv)?;
        let x_hat = self.nets.g.forward(&mut tape, &gvars, input)?;

        let sat = self.cfg.saturating_gen_loss;
        let l_xy = games::gen_side_fake_term(&mut tape, &self.nets.dxy, &dxy_vars, x_hat, yv, sat)?;
        let l_xz = games::gen_side_fake_term(&mut tape, &self.nets.dxz, &dxz_vars, x_hat, zv, sat)?;
        let ry = games::ry_term(&mut tape, &self.nets.c, &cvars, x_hat, yv)?;
        let rz = games::rz_term(&mut tape, &self.nets.i, &ivars, x_hat, zv)?;
        let mut loss = tape.add(l_xy, l_xz)?;
        if self.cfg.enable_ry {
            loss = tape.add(loss, ry)?;
        }
        if self.cfg.enable_rz {
            loss = tape.add(loss, rz)?;
        }
        let values = (
            tape.value(l_xy).item()?,
            tape.value(l_xz).item()?,
            tape.value(ry).item()?,
            tape.value(rz).item()?,
        );
        let mut grads = tape.backward(loss)?;
        Self::apply_update(&mut self.nets.g, &mut self.opt_g, &mut self.counts.g, &gvars, &mut grads)?;
        Ok(values)
    }

    /// One full training step over an unlabeled batch.
    pub fn train_step(&mut self, x_u: &Tensor, split: &DatasetSplit, epoch: usize, rng: &mut ChaCha8Rng) -> Result<GameLossReport> {
        self.step += 1;
        let batch = self.cfg.batch_size;

        let (x_g, y_g, z) = sample_generated(&self.nets.g, &self.priors, batch, rng)?;

        // pseudo-labeled pairs come from a fresh unlabeled draw
        let pseudo_idx: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..split.unlabeled_x.rows())).collect();
        let x_pseudo_src = split.unlabeled_x.gather_rows(&pseudo_idx)?;
        let (x_c, y_c) = sample_pseudo_labeled(&self.nets.c, &x_pseudo_src, rng)?;

        let labeled_y = one_hot(&split.labeled_y, split.num_classes)?;
        let portions = mixing_schedule(epoch, &self.cfg);
        let (x_m, y_m) = mix_batch(
            (&split.labeled_x, &labeled_y),
            (&x_g, &y_g),
            (&x_c, &y_c),
            portions,
            batch,
            rng,
        )?;

        // supervised batch for R_y's labeled term
        let label_idx: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..split.labeled_x.rows())).collect();
        let mut x_l = split.labeled_x.gather_rows(&label_idx)?;
        let mut y_l = labeled_y.gather_rows(&label_idx)?;
        if self.cfg.pseudo_in_ry {
            let mut xd = x_l.into_data();
            xd.extend_from_slice(x_c.data());
            let mut yd = y_l.into_data();
            yd.extend_from_slice(y_c.data());
            x_l = Tensor::matrix(2 * batch, split.x_dim, xd)?;
            y_l = Tensor::matrix(2 * batch, split.num_classes, yd)?;
        }

        let mut l_xz_critic = 0.0;
        let mut l_xy_critic = 0.0;
        let z_hat = crate::network::infer_z(&self.nets.i, x_u)?;
        for _ in 0..self.cfg.k_critic {
            l_xz_critic = self.critic_step_xz(x_u, &z_hat, &x_g, &z)?;
            l_xy_critic = self.critic_step_xy(&x_m, &y_m, &x_g, &y_g)?;
        }

        let (i_adv, r_z) = self.i_step(x_u, &x_g, &z)?;
        let r_y = self.c_step(&x_l, &y_l, &x_g, &y_g, epoch)?;
        let (l_xy_gen, l_xz_gen, _ry_gen, _rz_gen) = self.g_step(&y_g, &z)?;

        let report = GameLossReport {
            step: self.step,
            l_xz_critic,
            l_xz_geninf: i_adv + l_xz_gen,
            l_xy_critic,
            l_xy_gen,
            r_y,
            r_z,
        };
        if let Some(game) = report.first_non_finite() {
            return Err(Error::NonFiniteLoss { game, step: self.step });
        }
        Ok(report)
    }

    /// One epoch over the shuffled unlabeled pool; returns the mean loss
    /// report over the epoch's steps.
    pub fn train_epoch(&mut self, split: &DatasetSplit, epoch: usize, rng: &mut ChaCha8Rng) -> Result<GameLossReport> {
        let n = split.unlabeled_x.rows();
        let batch = self.cfg.batch_size;
        let steps = n / batch;
        if steps == 0 {
            return Err(Error::Invalid(format!("unlabeled pool ({n}) smaller than batch size ({batch})")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut sum = GameLossReport {
            step: 0,
            l_xz_critic: 0.0,
            l_xz_geninf: 0.0,
            l_xy_critic: 0.0,
            l_xy_gen: 0.0,
            r_y: 0.0,
            r_z: 0.0,
        };
        for s in 0..steps {
            let idx = &order[s * batch..(s + 1) * batch];
            let x_u = split.unlabeled_x.gather_rows(idx)?;
            let r = self.train_step(&x_u, split, epoch, rng)?;
            sum.step = r.step;
            sum.l_xz_critic += r.l_xz_critic;
            sum.l_xz_geninf += r.l_xz_geninf;
            sum.l_xy_critic += r.l_xy_critic;
            sum.l_xy_gen += r.l_xy_gen;
            sum.r_y += r.r_y;
            sum.r_z += r.r_z;
        }
        let k = steps as f64;
        sum.l_xz_critic /= k;
        sum.l_xz_geninf /= k;
        sum.l_xy_critic /= k;
        sum.l_xy_gen /= k;
        sum.r_y /= k;
        sum.r_z /= k;
        Ok(sum)
    }

    /// Pretraining followed by the full epoch loop. `on_epoch` runs after
    /// every epoch with the current networks and that epoch's mean losses.
    pub fn train<F>(&mut self, split: &DatasetSplit, train_seed: u64, mut on_epoch: F) -> Result<Vec<GameLossReport>>
    where
        F: FnMut(usize, &Networks, &GameLossReport) -> Result<()>,
    {
        self.pretrain(split)?;
        let mut rng = ChaCha8Rng::seed_from_u64(train_seed);
        let mut history = Vec::with_capacity(self.cfg.epochs);
        for epoch in 0..self.cfg.epochs {
            let report = self.train_epoch(split, epoch, &mut rng)?;
            on_epoch(epoch, &self.nets, &report)?;
            history.push(report);
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_rings_dataset, split_labels, RingsConfig};
    use crate::network::{classify, NetworkSpec};

    fn tiny_widths() -> ModelWidths {
        ModelWidths {
            g_hidden: vec![8],
            i_hidden: vec![8],
            c_hidden: vec![8],
            dxy_hidden: vec![8],
            dxz_hidden: vec![8],
            leaky_slope: 0.2,
        }
    }

    fn tiny_split() -> DatasetSplit {
        let cfg = RingsConfig {
            classes: 4,
            train_size: 144,
            test_size: 40,
            noise: 0.02,
            seed: 0,
        };
        let (train, test) = make_rings_dataset(&cfg).unwrap();
        split_labels(&train, &test, 16, 7).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 16,
            pretrain_epochs: 50,
            ..TrainConfig::default()
        }
    }

    fn tiny_trainer(cfg: TrainConfig) -> Trainer {
        let priors = PriorSpec {
            num_classes: 4,
            z_dim: cfg.z_dim,
            z_prior: cfg.z_prior,
        };
        let nets = Networks::build(2, 4, cfg.z_dim, &tiny_widths(), Head::Linear, 11).unwrap();
        Trainer::new(nets, cfg, priors).unwrap()
    }

    fn hashes(nets: &Networks) -> [u64; 5] {
        [
            nets.g.content_hash(),
            nets.i.content_hash(),
            nets.c.content_hash(),
            nets.dxy.content_hash(),
            nets.dxz.content_hash(),
        ]
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.k_critic = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.batch_size = 6;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.p_gen = 0.6;
        c.p_pseudo = 0.3;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lr_g = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mixing_schedule_endpoints_and_midpoint() {
        let mut cfg = TrainConfig::default();
        cfg.ramp_start = 3;
        cfg.ramp_end = Some(13);
        assert_eq!(mixing_schedule(0, &cfg), (1.0, 0.0, 0.0));
        assert_eq!(mixing_schedule(3, &cfg), (1.0, 0.0, 0.0));
        assert_eq!(mixing_schedule(13, &cfg), (0.25, 0.5, 0.25));
        assert_eq!(mixing_schedule(100, &cfg), (0.25, 0.5, 0.25));
        // midpoint: arithmetic mean of the endpoints
        let (pl, pg, pp) = mixing_schedule(8, &cfg);
        assert_eq!((pl, pg, pp), (0.625, 0.25, 0.125));
    }

    #[test]
    fn mixing_schedule_is_simplex_point() {
        let cfg = TrainConfig::default();
        for epoch in 0..300 {
            let (pl, pg, pp) = mixing_schedule(epoch, &cfg);
            assert!(pl >= 0.0 && pg >= 0.0 && pp >= 0.0);
            assert!((pl + pg + pp - 1.0).abs() < 1e-12);
        }
    }

    fn tagged(rows: usize, cols: usize, tag: f64) -> Tensor {
        Tensor::matrix(rows, cols, vec![tag; rows * cols]).unwrap()
    }

    #[test]
    fn mix_batch_counts_and_determinism() {
        let lab = (tagged(6, 2, 1.0), tagged(6, 4, 1.0));
        let gen = (tagged(16, 2, 2.0), tagged(16, 4, 2.0));
        let pse = (tagged(16, 2, 3.0), tagged(16, 4, 3.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = mix_batch(
            (&lab.0, &lab.1),
            (&gen.0, &gen.1),
            (&pse.0, &pse.1),
            (0.25, 0.5, 0.25),
            16,
            &mut rng,
        )
        .unwrap();
        assert_eq!(x.shape(), &[16, 2]);
        assert_eq!(y.shape(), &[16, 4]);
        let count = |tag: f64| (0..16).filter(|&r| x.row(r)[0] == tag).count();
        assert_eq!((count(1.0), count(2.0), count(3.0)), (4, 8, 4));

        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let (x2, _) = mix_batch(
            (&lab.0, &lab.1),
            (&gen.0, &gen.1),
            (&pse.0, &pse.1),
            (0.25, 0.5, 0.25),
            16,
            &mut rng2,
        )
        .unwrap();
        assert_eq!(x.data(), x2.data());
    }

    #[test]
    fn mix_batch_all_labeled_and_empty_error() {
        let lab = (tagged(3, 2, 1.0), tagged(3, 4, 1.0));
        let gen = (tagged(16, 2, 2.0), tagged(16, 4, 2.0));
        let pse = (tagged(16, 2, 3.0), tagged(16, 4, 3.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, _) = mix_batch(
            (&lab.0, &lab.1),
            (&gen.0, &gen.1),
            (&pse.0, &pse.1),
            (1.0, 0.0, 0.0),
            8,
            &mut rng,
        )
        .unwrap();
        assert!(x.data().iter().all(|&v| v == 1.0));

        let empty = (Tensor::matrix(0, 2, vec![]).unwrap(), Tensor::matrix(0, 4, vec![]).unwrap());
        let err = mix_batch(
            (&empty.0, &empty.1),
            (&gen.0, &gen.1),
            (&pse.0, &pse.1),
            (0.5, 0.25, 0.25),
            8,
            &mut rng,
        );
        assert!(err.is_err());
    }

    #[test]
    fn sample_generated_shapes_and_onehot() {
        let t = tiny_trainer(tiny_cfg());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, y, z) = sample_generated(&t.nets.g, &t.priors, 10, &mut rng).unwrap();
        assert_eq!(x.shape(), &[10, 2]);
        assert_eq!(y.shape(), &[10, 4]);
        assert_eq!(z.shape(), &[10, t.cfg.z_dim]);
        for r in 0..10 {
            let row = y.row(r);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            assert!(row.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn sample_generated_class_frequencies_near_uniform() {
        let priors = PriorSpec {
            num_classes: 4,
            z_dim: 2,
            z_prior: ZPrior::Gaussian,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 4];
        for _ in 0..10 {
            let (y, labels) = priors.sample_y(1000, &mut rng);
            assert_eq!(y.rows(), 1000);
            for l in labels {
                counts[l] += 1;
            }
        }
        // binomial: n=10000, p=1/4, 3 sigma ~= 130
        for &c in &counts {
            assert!((c as f64 - 2500.0).abs() < 130.0, "count {c} outside 3 sigma");
        }
    }

    fn linear_classifier(bias: [f64; 4]) -> NetworkParams {
        let spec = NetworkSpec::classifier(2, 4, vec![]);
        let mut net = build_network(&spec, 0).unwrap();
        for t in &mut net.tensors {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        // last tensor is the output bias
        net.tensors.last_mut().unwrap().data_mut().copy_from_slice(&bias);
        net
    }

    #[test]
    fn pseudo_labels_follow_classifier_distribution() {
        let x = tagged(10_000, 2, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);

        // point mass: huge logit on class 2
        let point = linear_classifier([0.0, 0.0, 100.0, 0.0]);
        let (x_c, y_c) = sample_pseudo_labeled(&point, &x, &mut rng).unwrap();
        assert_eq!(x_c.data(), x.data());
        for r in 0..y_c.rows() {
            assert_eq!(y_c.row(r), &[0.0, 0.0, 1.0, 0.0]);
        }

        // uniform classifier: empirical distribution uniform within 3 sigma
        let uniform = linear_classifier([0.0; 4]);
        let (_, y_u) = sample_pseudo_labeled(&uniform, &x, &mut rng).unwrap();
        let mut counts = [0usize; 4];
        for r in 0..y_u.rows() {
            let k = y_u.row(r).iter().position(|&v| v == 1.0).unwrap();
            counts[k] += 1;
        }
        for &c in &counts {
            assert!((c as f64 - 2500.0).abs() < 130.0, "count {c} outside 3 sigma");
        }
    }

    #[test]
    fn pretrain_zero_epochs_is_noop_and_descends_otherwise() {
        let split = tiny_split();
        let mut cfg = tiny_cfg();
        cfg.pretrain_epochs = 0;
        let mut t = tiny_trainer(cfg);
        let before = t.nets.c.content_hash();
        t.pretrain(&split).unwrap();
        assert_eq!(t.nets.c.content_hash(), before);

        let mut cfg = tiny_cfg();
        cfg.pretrain_epochs = 300;
        let mut t = tiny_trainer(cfg);
        let mean_ce = |c: &NetworkParams| {
            let probs = classify(c, &split.labeled_x).unwrap();
            let total: f64 = split
                .labeled_y
                .iter()
                .enumerate()
                .map(|(r, &l)| -probs.row(r)[l].ln())
                .sum();
            total / split.labeled_y.len() as f64
        };
        let before = mean_ce(&t.nets.c);
        t.pretrain(&split).unwrap();
        let after = mean_ce(&t.nets.c);
        assert!(after <= before, "pretraining did not descend: {before} -> {after}");
    }

    #[test]
    fn pretrain_separable_two_class_reaches_full_accuracy() {
        // clusters at x = -1 and x = +1
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..8 {
            let off = -0.1 + 0.025 * i as f64;
            xs.extend_from_slice(&[-1.0 + off, off]);
            ys.push(0);
            xs.extend_from_slice(&[1.0 + off, -off]);
            ys.push(1);
        }
        let labeled_x = Tensor::matrix(16, 2, xs).unwrap();
        let split = DatasetSplit {
            unlabeled_x: labeled_x.clone(),
            unlabeled_hidden_y: ys.clone(),
            labeled_x: labeled_x.clone(),
            labeled_y: ys.clone(),
            test_x: labeled_x.clone(),
            test_y: ys.clone(),
            test_style: None,
            x_dim: 2,
            num_classes: 2,
        };
        let nets = Networks::build(2, 2, 2, &tiny_widths(), Head::Linear, 3).unwrap();
        let mut cfg = tiny_cfg();
        cfg.pretrain_epochs = 400;
        let priors = PriorSpec { num_classes: 2, z_dim: 2, z_prior: ZPrior::Gaussian };
        let mut t = Trainer::new(nets, cfg, priors).unwrap();
        t.pretrain(&split).unwrap();
        let probs = classify(&t.nets.c, &split.labeled_x).unwrap();
        let preds = crate::network::argmax_rows(&probs);
        assert_eq!(preds, split.labeled_y);
    }

    #[test]
    fn pretrain_empty_labeled_set_errors() {
        let mut split = tiny_split();
        split.labeled_x = Tensor::matrix(0, 2, vec![]).unwrap();
        split.labeled_y.clear();
        let mut t = tiny_trainer(tiny_cfg());
        assert!(t.pretrain(&split).is_err());
    }

    #[test]
    fn sub_steps_touch_only_their_network() {
        let split = tiny_split();
        let mut t = tiny_trainer(tiny_cfg());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x_u = split.unlabeled_x.gather_rows(&(0..16).collect::<Vec<_>>()).unwrap();
        let (x_g, y_g, z) = sample_generated(&t.nets.g, &t.priors, 16, &mut rng).unwrap();
        let z_hat = crate::network::infer_z(&t.nets.i, &x_u).unwrap();
        let y_l = one_hot(&split.labeled_y, 4).unwrap();

        let h0 = hashes(&t.nets);
        t.critic_step_xz(&x_u, &z_hat, &x_g, &z).unwrap();
        let h1 = hashes(&t.nets);
        assert_eq!(&h0[..4], &h1[..4]);
        assert_ne!(h0[4], h1[4]);

        t.critic_step_xy(&x_u, &y_l, &x_g, &y_g).unwrap();
        let h2 = hashes(&t.nets);
        assert_eq!(&h1[..3], &h2[..3]);
        assert_ne!(h1[3], h2[3]);
        assert_eq!(h1[4], h2[4]);

        t.i_step(&x_u, &x_g, &z).unwrap();
        let h3 = hashes(&t.nets);
        assert_ne!(h2[1], h3[1]);
        assert_eq!(h2[0], h3[0]);
        assert_eq!(&h2[2..], &h3[2..]);

        t.c_step(&split.labeled_x, &y_l, &x_g, &y_g, 10).unwrap();
        let h4 = hashes(&t.nets);
        assert_ne!(h3[2], h4[2]);
        assert_eq!(h3[0], h4[0]);
        assert_eq!(h3[1], h4[1]);
        assert_eq!(&h3[3..], &h4[3..]);

        t.g_step(&y_g, &z).unwrap();
        let h5 = hashes(&t.nets);
        assert_ne!(h4[0], h5[0]);
        assert_eq!(&h4[1..], &h5[1..]);

        assert_eq!(t.counts, UpdateCounts { g: 1, i: 1, c: 1, dxy: 1, dxz: 1 });
    }

    #[test]
    fn generated_ry_term_ignored_before_join_epoch() {
        let split = tiny_split();
        let y_l = one_hot(&split.labeled_y, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut t1 = tiny_trainer(tiny_cfg());
        let mut t2 = tiny_trainer(tiny_cfg());
        let (xg1, yg1, _) = sample_generated(&t1.nets.g, &t1.priors, 16, &mut rng).unwrap();
        let (xg2, yg2, _) = sample_generated(&t1.nets.g, &t1.priors, 16, &mut rng).unwrap();
        // epoch 0 < c_join_epoch: different generated batches, same C update
        t1.c_step(&split.labeled_x, &y_l, &xg1, &yg1, 0).unwrap();
        t2.c_step(&split.labeled_x, &y_l, &xg2, &yg2, 0).unwrap();
        assert_eq!(t1.nets.c.content_hash(), t2.nets.c.content_hash());
        // past the join epoch the generated term matters
        let mut t3 = tiny_trainer(tiny_cfg());
        let mut t4 = tiny_trainer(tiny_cfg());
        t3.c_step(&split.labeled_x, &y_l, &xg1, &yg1, 10).unwrap();
        t4.c_step(&split.labeled_x, &y_l, &xg2, &yg2, 10).unwrap();
        assert_ne!(t3.nets.c.content_hash(), t4.nets.c.content_hash());
    }

    #[test]
    fn k_critic_counter_contract() {
        let split = tiny_split();
        let mut cfg = tiny_cfg();
        cfg.k_critic = 2;
        let mut t = tiny_trainer(cfg);
        t.pretrain(&split).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x_u = split.unlabeled_x.gather_rows(&(0..16).collect::<Vec<_>>()).unwrap();
        let report = t.train_step(&x_u, &split, 0, &mut rng).unwrap();
        assert!(report.all_finite());
        assert_eq!(t.counts, UpdateCounts { g: 1, i: 1, c: 1, dxy: 2, dxz: 2 });
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let split = tiny_split();
        let run = || {
            let mut t = tiny_trainer(tiny_cfg());
            let history = t.train(&split, 42, |_, _, _| Ok(())).unwrap();
            (history, hashes(&t.nets))
        };
        let (h1, n1) = run();
        let (h2, n2) = run();
        assert_eq!(n1, n2);
        assert_eq!(h1.len(), 2);
        for (a, b) in h1.iter().zip(&h2) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.l_xz_critic.to_bits(), b.l_xz_critic.to_bits());
            assert_eq!(a.l_xz_geninf.to_bits(), b.l_xz_geninf.to_bits());
            assert_eq!(a.l_xy_critic.to_bits(), b.l_xy_critic.to_bits());
            assert_eq!(a.l_xy_gen.to_bits(), b.l_xy_gen.to_bits());
            assert_eq!(a.r_y.to_bits(), b.r_y.to_bits());
            assert_eq!(a.r_z.to_bits(), b.r_z.to_bits());
            assert!(a.all_finite());
        }
    }

    #[test]
    fn zero_epochs_pretrains_only() {
        let split = tiny_split();
        let mut cfg = tiny_cfg();
        cfg.epochs = 0;
        let mut t = tiny_trainer(cfg);
        let g_before = t.nets.g.content_hash();
        let c_before = t.nets.c.content_hash();
        let history = t.train(&split, 42, |_, _, _| Ok(())).unwrap();
        assert!(history.is_empty());
        assert_eq!(t.nets.g.content_hash(), g_before);
        assert_ne!(t.nets.c.content_hash(), c_before);
    }

    #[test]
    fn saturating_gen_gradient_vanishes_at_flat_half_critics() {
        let mut cfg = tiny_cfg();
        cfg.saturating_gen_loss = true;
        let mut t = tiny_trainer(cfg);
        // flat critics: all weights zero, sigmoid(0) = 0.5 everywhere
        for net in [&mut t.nets.dxy, &mut t.nets.dxz] {
            for tensor in &mut net.tensors {
                for v in tensor.data_mut() {
                    *v = 0.0;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, y_g, z) = sample_generated(&t.nets.g, &t.priors, 8, &mut rng).unwrap();

        let mut tape = Tape::new();
        let gvars = t.nets.g.insert_into(&mut tape, true);
        let dxy_vars = t.nets.dxy.insert_into(&mut tape, false);
        let dxz_vars = t.nets.dxz.insert_into(&mut tape, false);
        let yv = tape.constant(&y_g);
        let zv = tape.constant(&z);
        let input = tape.concat(yv, zv).unwrap();
        let x_hat = t.nets.g.forward(&mut tape, &gvars, input).unwrap();
        let a = games::gen_side_fake_term(&mut tape, &t.nets.dxy, &dxy_vars, x_hat, yv, true).unwrap();
        let b = games::gen_side_fake_term(&mut tape, &t.nets.dxz, &dxz_vars, x_hat, zv, true).unwrap();
        let loss = tape.add(a, b).unwrap();
        // saturating terms: each is mean log(1 - 0.5) = -ln 2
        assert!((tape.value(loss).item().unwrap() + 2.0 * 2.0_f64.ln()).abs() < 1e-12);
        let mut grads = tape.backward(loss).unwrap();
        for (&v, tensor) in gvars.vars.iter().zip(&t.nets.g.tensors) {
            let g = grads.take(v, tensor.shape());
            assert!(g.data().iter().all(|&x| x == 0.0), "nonzero G gradient at flat critic");
        }
    }

    #[test]
    fn epoch_history_length_matches_epochs() {
        let split = tiny_split();
        let mut seen = Vec::new();
        let mut t = tiny_trainer(tiny_cfg());
        let history = t
            .train(&split, 1, |epoch, nets, report| {
                assert!(nets.all_finite());
                assert!(report.all_finite());
                seen.push(epoch);
                Ok(())
            })
            .unwrap();
        assert_eq!(history.len(), 2);
        assert_eq!(seen, vec![0, 1]);
    }
}
