//! Evaluation protocols: mutual-predictability (MP) disentanglement
//! measure, golden-classifier conditional accuracy and diversity score,
//! semi-supervised test error, style transfer and latent interpolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::games::GameLossReport;
use crate::network::{
    argmax_rows, build_network, classify, generator_forward, infer_z, one_hot, NetworkParams,
    NetworkSpec,
};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{Tape, Tensor};
use crate::trainer::PriorSpec;

/// One evaluation row; loss fields are present only when produced during
/// training (they cannot be recomputed from a checkpoint).
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub test_error: f64,
    pub mp: f64,
    pub conditional_accuracy: f64,
    pub golden_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_xz_critic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_xz_geninf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_xy_critic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_xy_gen: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_z: Option<f64>,
}

impl MetricsRecord {
    pub fn with_losses(mut self, report: &GameLossReport) -> Self {
        self.l_xz_critic = Some(report.l_xz_critic);
        self.l_xz_geninf = Some(report.l_xz_geninf);
        self.l_xy_critic = Some(report.l_xy_critic);
        self.l_xy_gen = Some(report.l_xy_gen);
        self.r_y = Some(report.r_y);
        self.r_z = Some(report.r_z);
        self
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for (name, v) in [
            ("test_error", self.test_error),
            ("mp", self.mp),
            ("conditional_accuracy", self.conditional_accuracy),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        let c = num_classes as f64;
        if !(1.0 - 1e-9..=c + 1e-9).contains(&self.golden_score) {
            return Err(Error::Invalid(format!(
                "golden_score = {} outside [1, {c}]",
                self.golden_score
            )));
        }
        Ok(())
    }
}

/// Fully supervised classifier used only as an evaluation oracle.
#[derive(Debug, Clone)]
pub struct GoldenClassifier {
    pub net: NetworkParams,
    pub test_accuracy: f64,
}

const GOLDEN_ITERS: usize = 600;
const GOLDEN_BATCH: usize = 256;
const GOLDEN_LR: f64 = 5e-3;

/// Train the golden classifier on the full training set (all hidden
/// labels revealed) and record its held-out accuracy.
pub fn train_golden_classifier(split: &DatasetSplit, hidden: &[usize], seed: u64) -> Result<GoldenClassifier> {
    let (x, labels) = split.full_training_set();
    let y = one_hot(&labels, split.num_classes)?;
    let spec = NetworkSpec::classifier(split.x_dim, split.num_classes, hidden.to_vec());
    let mut net = build_network(&spec, seed)?;
    let mut opt = AdamState::new(AdamConfig::with_lr(GOLDEN_LR), &net.tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = GOLDEN_BATCH.min(x.rows());
    for _ in 0..GOLDEN_ITERS {
        let idx: Vec<usize> = (0..batch).map(|_| rand::Rng::gen_range(&mut rng, 0..x.rows())).collect();
        let xb = x.gather_rows(&idx)?;
        let yb = y.gather_rows(&idx)?;
        let mut tape = Tape::new();
        let vars = net.insert_into(&mut tape, true);
        let xv = tape.constant(&xb);
        let yv = tape.constant(&yb);
        let loss = crate::games::ry_term(&mut tape, &net, &vars, xv, yv)?;
        let mut grads = tape.backward(loss)?;
        let gs: Vec<Tensor> = vars
            .vars
            .iter()
            .zip(&net.tensors)
            .map(|(&v, t)| grads.take(v, t.shape()))
            .collect();
        opt.apply(&mut net.tensors, &gs)?;
    }
    let test_accuracy = accuracy(&net, &split.test_x, &split.test_y)?;
    Ok(GoldenClassifier { net, test_accuracy })
}

fn accuracy(c: &NetworkParams, x: &Tensor, y: &[usize]) -> Result<f64> {
    let probs = classify(c, x)?;
    let preds = argmax_rows(&probs);
    let hits = preds.iter().zip(y).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y.len().max(1) as f64)
}

const PROBE_ITERS: usize = 500;
const PROBE_LR: f64 = 0.1;

/// Training accuracy of a multinomial logistic probe `features -> labels`,
/// trained full-batch from a zero initialization.
pub fn linear_probe_accuracy(features: &Tensor, labels: &[usize], num_classes: usize) -> Result<f64> {
    if features.rows() != labels.len() {
        return Err(Error::Invalid(format!(
            "probe: {} feature rows vs {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let d = features.last_dim();
    let y = one_hot(labels, num_classes)?;
    let mut params = vec![Tensor::zeros(vec![d, num_classes]), Tensor::zeros(vec![num_classes])];
    let mut opt = AdamState::new(AdamConfig::with_lr(PROBE_LR), &params);
    for _ in 0..PROBE_ITERS {
        let mut tape = Tape::new();
        let w = tape.leaf(&params[0]);
        let b = tape.leaf(&params[1]);
        let xv = tape.constant(features);
        let yv = tape.constant(&y);
        let logits = tape.matmul(xv, w)?;
        let logits = tape.add(logits, b)?;
        let probs = tape.softmax(logits)?;
        let ce = tape.cross_entropy(probs, yv)?;
        let loss = tape.mean(ce)?;
        let mut grads = tape.backward(loss)?;
        let gs = vec![grads.take(w, params[0].shape()), grads.take(b, params[1].shape())];
        opt.apply(&mut params, &gs)?;
    }
    // final predictions from the converged probe
    let (w, b) = (params[0].data(), params[1].data());
    let mut hits = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let x = features.row(r);
        let logit = |k: usize| b[k] + x.iter().enumerate().map(|(j, &v)| v * w[j * num_classes + k]).sum::<f64>();
        let mut best = 0;
        for k in 1..num_classes {
            if logit(k) > logit(best) {
                best = k;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// MP measure: how predictable y is from the inferred ẑ = I(x).
/// Lower is better disentanglement.
pub fn mp_measure(i: &NetworkParams, x: &Tensor, y: &[usize], num_classes: usize) -> Result<f64> {
    let z_hat = infer_z(i, x)?;
    linear_probe_accuracy(&z_hat, y, num_classes)
}

/// Fraction of generated samples the golden classifier assigns to their
/// conditioning class.
pub fn conditional_accuracy(
    g: &NetworkParams,
    golden: &GoldenClassifier,
    priors: &PriorSpec,
    num_samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, labels) = priors.sample_y(num_samples, &mut rng);
    let z = priors.sample_z(num_samples, &mut rng);
    let x_hat = generator_forward(g, &y, &z)?;
    accuracy(&golden.net, &x_hat, &labels)
}

/// Test error of the semi-supervised classifier: 1 − argmax accuracy.
pub fn semi_sup_error(c: &NetworkParams, test_x: &Tensor, test_y: &[usize]) -> Result<f64> {
    Ok(1.0 - accuracy(c, test_x, test_y)?)
}

/// Diversity/confidence score in [1, C]:
/// exp(mean_x KL(p_golden(y|x̂) ‖ batch marginal)).
pub fn golden_score(
    g: &NetworkParams,
    golden: &GoldenClassifier,
    priors: &PriorSpec,
    num_samples: usize,
    seed: u64,
) -> Result<f64> {
    if num_samples == 0 {
        return Err(Error::Invalid("golden_score: num_samples must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, _) = priors.sample_y(num_samples, &mut rng);
    let z = priors.sample_z(num_samples, &mut rng);
    let x_hat = generator_forward(g, &y, &z)?;
    let probs = classify(&golden.net, &x_hat)?;
    let c = probs.last_dim();
    let mut marginal = vec![0.0; c];
    for r in 0..probs.rows() {
        for (m, &p) in marginal.iter_mut().zip(probs.row(r)) {
            *m += p;
        }
    }
    for m in &mut marginal {
        *m /= probs.rows() as f64;
    }
    let mut mean_kl = 0.0;
    for r in 0..probs.rows() {
        for (k, &p) in probs.row(r).iter().enumerate() {
            if p > 0.0 {
                mean_kl += p * (p / marginal[k]).ln();
            }
        }
    }
    mean_kl /= probs.rows() as f64;
    let score = mean_kl.exp();
    // KL estimate can wobble just past log C in the confident limit
    Ok(score.clamp(1.0, c as f64))
}

/// Re-generate one source sample under each target class, holding its
/// inferred unstructured code z fixed.
pub fn style_transfer(
    g: &NetworkParams,
    i: &NetworkParams,
    x_source: &Tensor,
    target_classes: &[usize],
    num_classes: usize,
) -> Result<Tensor> {
    if x_source.rows() != 1 {
        return Err(Error::Invalid(format!(
            "style_transfer: expected a single source row, got {}",
            x_source.rows()
        )));
    }
    if target_classes.is_empty() {
        return Err(Error::Invalid("style_transfer: no target classes".into()));
    }
    let z = infer_z(i, x_source)?;
    let n = target_classes.len();
    let z_rep = Tensor::matrix(n, z.last_dim(), z.data().repeat(n))?;
    let y = one_hot(target_classes, num_classes)?;
    generator_forward(g, &y, &z_rep)
}

/// Generate along the straight line from `z_start` to `z_end` under a
/// fixed class y.
pub fn interpolate(
    g: &NetworkParams,
    y_class: usize,
    z_start: &[f64],
    z_end: &[f64],
    steps: usize,
    num_classes: usize,
) -> Result<Tensor> {
    if steps < 2 {
        return Err(Error::Invalid(format!("interpolate: steps = {steps}, need at least 2")));
    }
    if z_start.len() != z_end.len() {
        return Err(Error::Invalid("interpolate: z endpoint dimensions differ".into()));
    }
    let d = z_start.len();
    let mut z_data = Vec::with_capacity(steps * d);
    for t in 0..steps {
        let a = t as f64 / (steps - 1) as f64;
        for k in 0..d {
            z_data.push(z_start[k] + a * (z_end[k] - z_start[k]));
        }
    }
    let z = Tensor::matrix(steps, d, z_data)?;
    let y = one_hot(&vec![y_class; steps], num_classes)?;
    generator_forward(g, &y, &z)
}
