//! The four SGAN objectives, split by role.
//!
//! Adversarial: `L_xz` over pairs `(x, z)` and `L_xy` over pairs `(x, y)`,
//! each split into a critic-side loss (critic minimizes the negated game
//! value) and a generator/inference-side loss. Collaborative: `R_y`
//! (cross-entropy reconstruction of the class code) and `R_z` (l2
//! reconstruction of the style code).
//!
//! Stop-gradient boundaries are expressed by how callers insert networks
//! on the tape: frozen networks enter as constants, trainable ones as
//! leaves, and precomputed batches enter as constant tensors.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{NetVars, NetworkParams};
use crate::tensor::{Tape, Tensor, Var};

/// Scalar values of all four games at one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GameLossReport {
    pub step: u64,
    pub l_xz_critic: f64,
    pub l_xz_geninf: f64,
    pub l_xy_critic: f64,
    pub l_xy_gen: f64,
    pub r_y: f64,
    pub r_z: f64,
}

impl GameLossReport {
    pub fn all_finite(&self) -> bool {
        [self.l_xz_critic, self.l_xz_geninf, self.l_xy_critic, self.l_xy_gen, self.r_y, self.r_z]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Name of the first non-finite game value, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("l_xz_critic", self.l_xz_critic),
            ("l_xz_geninf", self.l_xz_geninf),
            ("l_xy_critic", self.l_xy_critic),
            ("l_xy_gen", self.l_xy_gen),
            ("r_y", self.r_y),
            ("r_z", self.r_z),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Critic score on a concatenated pair.
pub fn critic_score(tape: &mut Tape, d: &NetworkParams, dvars: &NetVars, a: Var, b: Var) -> Result<Var> {
    let input = tape.concat(a, b)?;
    d.forward(tape, dvars, input)
}

fn mean_log(tape: &mut Tape, s: Var) -> Result<Var> {
    let l = tape.log(s)?;
    tape.mean(l)
}

fn mean_log_one_minus(tape: &mut Tape, s: Var) -> Result<Var> {
    let c = tape.one_minus(s)?;
    let l = tape.log(c)?;
    tape.mean(l)
}

/// Critic-side loss `-[mean log D(real) + mean log(1 - D(fake))]`; the
/// critic minimizes this. Shared by both adversarial games.
pub fn critic_loss(
    tape: &mut Tape,
    d: &NetworkParams,
    dvars: &NetVars,
    real: (Var, Var),
    fake: (Var, Var),
) -> Result<Var> {
    let s_real = critic_score(tape, d, dvars, real.0, real.1)?;
    let s_fake = critic_score(tape, d, dvars, fake.0, fake.1)?;
    let t_real = mean_log(tape, s_real)?;
    let t_fake = mean_log_one_minus(tape, s_fake)?;
    let sum = tape.add(t_real, t_fake)?;
    tape.neg(sum)
}

/// Generator/inference-side term on a fake pair: non-saturating
/// `-mean log D(fake)`, or the literal `+mean log(1 - D(fake))` when
/// `saturating` is set.
pub fn gen_side_fake_term(
    tape: &mut Tape,
    d: &NetworkParams,
    dvars: &NetVars,
    a: Var,
    b: Var,
    saturating: bool,
) -> Result<Var> {
    let s = critic_score(tape, d, dvars, a, b)?;
    if saturating {
        mean_log_one_minus(tape, s)
    } else {
        let t = mean_log(tape, s)?;
        tape.neg(t)
    }
}

/// Inference-side term on the real pair of `L_xz`: non-saturating
/// `-mean log(1 - D(x, I(x)))`, or the literal `+mean log D(x, I(x))`.
pub fn gen_side_real_term(
    tape: &mut Tape,
    d: &NetworkParams,
    dvars: &NetVars,
    a: Var,
    b: Var,
    saturating: bool,
) -> Result<Var> {
    let s = critic_score(tape, d, dvars, a, b)?;
    if saturating {
        mean_log(tape, s)
    } else {
        let t = mean_log_one_minus(tape, s)?;
        tape.neg(t)
    }
}

/// One `R_y` term: mean cross-entropy of `C(x)` against one-hot `y`.
pub fn ry_term(tape: &mut Tape, c: &NetworkParams, cvars: &NetVars, x: Var, y: Var) -> Result<Var> {
    let probs = c.forward(tape, cvars, x)?;
    let ce = tape.cross_entropy(probs, y)?;
    tape.mean(ce)
}

///// `R_z`: mean squared error of `I(x)` against the noise `z` that
/// generated `x` (mean over batch and z dimensions).
pub fn rz_term(tape: &mut Tape, i: &NetworkParams, ivars: &NetVars, x: Var, z: Var) -> Result<Var> {
    let z_hat = i.forward(tape, ivars, x)?;
    let sq = tape.squared_error(z_hat, z)?;
    tape.mean(sq)
}

// ---- plain-tensor evaluators (no gradients) -----------------------------

/// `L_xz` critic loss on precomputed pairs `real = (x_u, I(x_u))`,
/// `fake = (G(y, z), z)`.
pub fn loss_xz_critic(dxz: &NetworkParams, real: (&Tensor, &Tensor), fake: (&Tensor, &Tensor)) -> Result<f64> {
    eval_critic_loss(dxz, real, fake)
}

/// `L_xy` critic loss on `real = (x_m, y_m)`, `fake = (x_g, y_g)`.
pub fn loss_xy_critic(dxy: &NetworkParams, real: (&Tensor, &Tensor), fake: (&Tensor, &Tensor)) -> Result<f64> {
    eval_critic_loss(dxy, real, fake)
}

fn eval_critic_loss(d: &NetworkParams, real: (&Tensor, &Tensor), fake: (&Tensor, &Tensor)) -> Result<f64> {
    let mut tape = Tape::new();
    let dvars = d.insert_into(&mut tape, false);
    let r = (tape.constant(real.0), tape.constant(real.1));
    let f = (tape.constant(fake.0), tape.constant(fake.1));
    let loss = critic_loss(&mut tape, d, &dvars, r, f)?;
    tape.value(loss).item()
}

/// Generator/inference-side value of `L_xz` on the same pairs.
pub fn loss_xz_geninf(
    dxz: &NetworkParams,
    real: (&Tensor, &Tensor),
    fake: (&Tensor, &Tensor),
    saturating: bool,
) -> Result<f64> {
    let mut tape = Tape::new();
    let dvars = dxz.insert_into(&mut tape, false);
    let (rx, rz) = (tape.constant(real.0), tape.constant(real.1));
    let (fx, fz) = (tape.constant(fake.0), tape.constant(fake.1));
    let t_fake = gen_side_fake_term(&mut tape, dxz, &dvars, fx, fz, saturating)?;
    let t_real = gen_side_real_term(&mut tape, dxz, &dvars, rx, rz, saturating)?;
    let total = tape.add(t_fake, t_real)?;
    tape.value(total).item()
}

/// Generator-side value of `L_xy` on the fake pair.
pub fn loss_xy_gen(dxy: &NetworkParams, fake: (&Tensor, &Tensor), saturating: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let dvars = dxy.insert_into(&mut tape, false);
    let (fx, fy) = (tape.constant(fake.0), tape.constant(fake.1));
    let t = gen_side_fake_term(&mut tape, dxy, &dvars, fx, fy, saturating)?;
    tape.value(t).item()
}

/// `R_y` value: labeled term plus generated term.
pub fn loss_ry(
    c: &NetworkParams,
    labeled: (&Tensor, &Tensor),
    generated: (&Tensor, &Tensor),
) -> Result<f64> {
    let mut tape = Tape::new();
    let cvars = c.insert_into(&mut tape, false);
    let (xl, yl) = (tape.constant(labeled.0), tape.constant(labeled.1));
    let (xg, yg) = (tape.constant(generated.0), tape.constant(generated.1));
    let t1 = ry_term(&mut tape, c, &cvars, xl, yl)?;
    let t2 = ry_term(&mut tape, c, &cvars, xg, yg)?;
    let total = tape.add(t1, t2)?;
    tape.value(total).item()
}

/// `R_z` value on generated pairs `(x_g, z)`.
pub fn loss_rz(i: &NetworkParams, generated: (&Tensor, &Tensor)) -> Result<f64> {
    let mut tape = Tape::new();
    let ivars = i.insert_into(&mut tape, false);
    let (xg, z) = (tape.constant(generated.0), tape.constant(generated.1));
    let t = rz_term(&mut tape, i, &ivars, xg, z)?;
    tape.value(t).item()
}

// ---- optimal-critic reference -------------------------------------------

/// Two fixed discrete distributions on a shared support.
#[derive(Debug, Clone)]
pub struct DiscreteDistPair {
    p: Vec<f64>,
    q: Vec<f64>,
}

impl DiscreteDistPair {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() || p.is_empty() {
            return Err(Error::Invalid(format!("support mismatch: {} vs {}", p.len(), q.len())));
        }
        for dist in [&p, &q] {
            if dist.iter().any(|&v| v < 0.0) {
                return Err(Error::Invalid("negative probability".into()));
            }
            let s: f64 = dist.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!("distribution sums to {s}, not 1")));
            }
        }
        Ok(DiscreteDistPair { p, q })
    }

    pub fn support_size(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }
}

/// The closed-form optimal critic `D* = P / (P + Q)` and the attained
/// value `sum P log D* + sum Q log(1 - D*)`, with the 0-where-both-0
/// convention and `0 * log 0 = 0`.
pub fn optimal_critic_reference(pair: &DiscreteDistPair) -> (Vec<f64>, f64) {
    let d_star: Vec<f64> = pair
        .p
        .iter()
        .zip(&pair.q)
        .map(|(&p, &q)| if p + q == 0.0 { 0.0 } else { p / (p + q) })
        .collect();
    let mut value = 0.0;
    for ((&p, &q), &d) in pair.p.iter().zip(&pair.q).zip(&d_star) {
        if p > 0.0 {
            value += p * d.ln();
        }
        if q > 0.0 {
            value += q * (1.0 - d).ln();
        }
    }
    (d_star, value)
}

/// Fit a tabular critic (one logit per support point) to the exact game
/// value by gradient ascent. Returns the converged per-point scores and
/// the attained value. Used by the optimal-critic property checks.
pub fn train_tabular_critic(pair: &DiscreteDistPair, iters: usize, lr: f64) -> (Vec<f64>, f64) {
    let n = pair.support_size();
    let mut logits = vec![0.0f64; n];
    for _ in 0..iters {
        for i in 0..n {
            let d = crate::tensor::sigmoid_scalar(logits[i]);
            // d/dt [p log sig(t) + q log(1 - sig(t))] = p(1-d) - q d
            let grad = pair.p[i] * (1.0 - d) - pair.q[i] * d;
            logits[i] += lr * grad;
        }
    }
    let scores: Vec<f64> = logits.iter().map(|&t| crate::tensor::sigmoid_scalar(t)).collect();
    let mut value = 0.0;
    for ((&p, &q), &d) in pair.p.iter().zip(&pair.q).zip(&scores) {
        if p > 0.0 {
            value += p * d.ln();
        }
        if q > 0.0 {
            value += q * (1.0 - d).ln();
        }
    }
    (scores, value)
}
