//! The five SGAN networks as small MLPs built from declarative specs.
//!
//! Roles: generator `G(y, z) -> x`, inference `I(x) -> z`, classifier
//! `C(x) -> p(y)`, and the two critics `D_xy(x, y)` and `D_xz(x, z)` with
//! scalar sigmoid heads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Generator,
    Inference,
    Classifier,
    CriticXy,
    CriticXz,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Generator => "G",
            Role::Inference => "I",
            Role::Classifier => "C",
            Role::CriticXy => "Dxy",
            Role::CriticXz => "Dxz",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Head {
    Linear,
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub role: Role,
    pub x_dim: usize,
    pub y_dim: usize,
    pub z_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
}

impl NetworkSpec {
    /// `G: (y, z) -> x`. The head is linear for unconstrained data and
    /// sigmoid for data scaled to `[0, 1]`.
    pub fn generator(x_dim: usize, y_dim: usize, z_dim: usize, hidden: Vec<usize>, head: Head) -> Self {
        NetworkSpec { role: Role::Generator, x_dim, y_dim, z_dim, hidden, activation: Activation::Relu, head }
    }

    /// `I: x -> z`, deterministic linear head.
    pub fn inference(x_dim: usize, z_dim: usize, hidden: Vec<usize>) -> Self {
        NetworkSpec { role: Role::Inference, x_dim, y_dim: 0, z_dim, hidden, activation: Activation::Relu, head: Head::Linear }
    }

    /// `C: x -> p(y)`, softmax head.
    pub fn classifier(x_dim: usize, y_dim: usize, hidden: Vec<usize>) -> Self {
        NetworkSpec { role: Role::Classifier, x_dim, y_dim, z_dim: 0, hidden, activation: Activation::Relu, head: Head::Softmax }
    }

    /// `D_xy: (x, y) -> (0, 1)`.
    pub fn critic_xy(x_dim: usize, y_dim: usize, hidden: Vec<usize>, leaky_slope: f64) -> Self {
        NetworkSpec {
            role: Role::CriticXy,
            x_dim,
            y_dim,
            z_dim: 0,
            hidden,
            activation: Activation::LeakyRelu(leaky_slope),
            head: Head::Sigmoid,
        }
    }

    /// `D_xz: (x, z) -> (0, 1)`.
    pub fn critic_xz(x_dim: usize, z_dim: usize, hidden: Vec<usize>, leaky_slope: f64) -> Self {
        NetworkSpec {
            role: Role::CriticXz,
            x_dim,
            y_dim: 0,
            z_dim,
            hidden,
            activation: Activation::LeakyRelu(leaky_slope),
            head: Head::Sigmoid,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.role {
            Role::Generator => self.y_dim + self.z_dim,
            Role::Inference | Role::Classifier => self.x_dim,
            Role::CriticXy => self.x_dim + self.y_dim,
            Role::CriticXz => self.x_dim + self.z_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.role {
            Role::Generator => self.x_dim,
            Role::Inference => self.z_dim,
            Role::Classifier => self.y_dim,
            Role::CriticXy | Role::CriticXz => 1,
        }
    }

    /// Layer widths including input and output.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim());
        dims
    }

    fn validate(&self) -> Result<()> {
        if self.layer_dims().iter().any(|&d| d == 0) {
            return Err(Error::Invalid(format!(
                "{}: zero-width layer in dims {:?}",
                self.role.name(),
                self.layer_dims()
            )));
        }
        Ok(())
    }
}

/// Weights and biases of one network, alternating `[w0, b0, w1, b1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    pub tensors: Vec<Tensor>,
    pub init_seed: u64,
}

impl NetworkParams {
    pub fn num_layers(&self) -> usize {
        self.tensors.len() / 2
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// FNV-1a over the raw parameter bytes; used to assert update isolation.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tensors {
            for v in t.data() {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    /// Insert all parameter tensors on a tape, trainable or frozen.
    pub fn insert_into(&self, tape: &mut Tape, trainable: bool) -> NetVars {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { tape.leaf(t) } else { tape.constant(t) })
            .collect();
        NetVars { vars }
    }

    /// Apply the MLP to `input` on the tape.
    pub fn forward(&self, tape: &mut Tape, vars: &NetVars, input: Var) -> Result<Var> {
        if tape.value(input).last_dim() != self.spec.input_dim() {
            return Err(Error::shape(
                "forward",
                format!(
                    "{} expects input width {}, got {:?}",
                    self.spec.role.name(),
                    self.spec.input_dim(),
                    tape.value(input).shape()
                ),
            ));
        }
        let layers = self.num_layers();
        let mut h = input;
        for l in 0..layers {
            h = tape.matmul(h, vars.vars[2 * l])?;
            h = tape.add(h, vars.vars[2 * l + 1])?;
            if l + 1 < layers {
                h = match self.spec.activation {
                    Activation::Relu => tape.relu(h)?,
                    Activation::LeakyRelu(s) => tape.leaky_relu(h, s)?,
                    Activation::Tanh => tape.tanh(h)?,
                };
            }
        }
        match self.spec.head {
            Head::Linear => Ok(h),
            Head::Sigmoid => tape.sigmoid(h),
            Head::Softmax => tape.softmax(h),
        }
    }

    /// Forward pass on plain tensors, no gradients.
    pub fn eval(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.insert_into(&mut tape, false);
        let x = tape.constant(input);
        let out = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(out).clone())
    }
}

/// Handles of one network's parameters on a tape.
#[derive(Debug, Clone)]
pub struct NetVars {
    pub vars: Vec<Var>,
}

/// Initialize a network: Xavier-uniform weights, zero biases,
/// deterministic in `(spec, seed)`.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = spec.layer_dims();
    let mut tensors = Vec::with_capacity(2 * (dims.len() - 1));
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        tensors.push(Tensor::matrix(fan_in, fan_out, data)?);
        tensors.push(Tensor::zeros(vec![fan_out]));
    }
    Ok(NetworkParams { spec: spec.clone(), tensors, init_seed: seed })
}

fn check_rows(op: &'static str, t: &Tensor, width: usize) -> Result<()> {
    if t.shape().len() != 2 || t.last_dim() != width {
        return Err(Error::shape(op, format!("expected [batch, {width}], got {:?}", t.shape())));
    }
    Ok(())
}

fn check_one_hot(op: &'static str, y: &Tensor) -> Result<()> {
    for r in 0..y.rows() {
        let row = y.row(r);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Invalid(format!("{op}: row {r} is not one-hot: {row:?}")));
        }
    }
    Ok(())
}

/// `x_hat = G(y, z)` for a one-hot class batch and noise batch.
pub fn generator_forward(g: &NetworkParams, y: &Tensor, z: &Tensor) -> Result<Tensor> {
    check_rows("generator_forward", y, g.spec.y_dim)?;
    check_rows("generator_forward", z, g.spec.z_dim)?;
    check_one_hot("generator_forward", y)?;
    if y.rows() != z.rows() {
        return Err(Error::shape(
            "generator_forward",
            format!("batch mismatch: y {:?} vs z {:?}", y.shape(), z.shape()),
        ));
    }
    let mut tape = Tape::new();
    let vars = g.insert_into(&mut tape, false);
    let yv = tape.constant(y);
    let zv = tape.constant(z);
    let input = tape.concat(yv, zv)?;
    let out = g.forward(&mut tape, &vars, input)?;
    Ok(tape.value(out).clone())
}

/// `z_hat = I(x)`.
pub fn infer_z(i: &NetworkParams, x: &Tensor) -> Result<Tensor> {
    check_rows("infer_z", x, i.spec.x_dim)?;
    i.eval(x)
}

/// Class probabilities `C(x)`, one distribution per row.
pub fn classify(c: &NetworkParams, x: &Tensor) -> Result<Tensor> {
    check_rows("classify", x, c.spec.x_dim)?;
    c.eval(x)
}

/// `D_xy(x, y)`, one score in (0, 1) per row.
pub fn critic_xy(d: &NetworkParams, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    check_rows("critic_xy", x, d.spec.x_dim)?;
    check_rows("critic_xy", y, d.spec.y_dim)?;
    if x.rows() != y.rows() {
        return Err(Error::shape("critic_xy", format!("batch mismatch {:?} vs {:?}", x.shape(), y.shape())));
    }
    eval_pair(d, x, y)
}

/// `D_xz(x, z)`, one score in (0, 1) per row.
pub fn critic_xz(d: &NetworkParams, x: &Tensor, z: &Tensor) -> Result<Tensor> {
    check_rows("critic_xz", x, d.spec.x_dim)?;
    check_rows("critic_xz", z, d.spec.z_dim)?;
    if x.rows() != z.rows() {
        return Err(Error::shape("critic_xz", format!("batch mismatch {:?} vs {:?}", x.shape(), z.shape())));
    }
    eval_pair(d, x, z)
}

fn eval_pair(d: &NetworkParams, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = d.insert_into(&mut tape, false);
    let av = tape.constant(a);
    let bv = tape.constant(b);
    let input = tape.concat(av, bv)?;
    let out = d.forward(&mut tape, &vars, input)?;
    Ok(tape.value(out).clone())
}

/// One-hot encode class indices.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * num_classes];
    for (r, &k) in labels.iter().enumerate() {
        if k >= num_classes {
            return Err(Error::Invalid(format!("class {k} out of range (C = {num_classes})")));
        }
        data[r * num_classes + k] = 1.0;
    }
    Tensor::matrix(labels.len(), num_classes, data)
}

/// Row-wise argmax.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            t.row(r)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use approx::assert_relative_eq;

    fn small_gen() -> NetworkParams {
        build_network(&NetworkSpec::generator(2, 4, 3, vec![8], Head::Linear), 7).unwrap()
    }

    #[test]
    fn build_is_deterministic_in_spec_and_seed() {
        let spec = NetworkSpec::classifier(2, 4, vec![16, 16]);
        assert_eq!(build_network(&spec, 42).unwrap(), build_network(&spec, 42).unwrap());
        assert_ne!(
            build_network(&spec, 42).unwrap().tensors,
            build_network(&spec, 43).unwrap().tensors
        );
    }

    #[test]
    fn generator_input_width_is_y_plus_z() {
        let spec = NetworkSpec::generator(784, 10, 64, vec![64, 64], Head::Sigmoid);
        assert_eq!(spec.input_dim(), 74);
        let params = build_network(&spec, 0).unwrap();
        assert_eq!(params.tensors[0].shape(), &[74, 64]);
    }

    #[test]
    fn parameter_count_matches_arithmetic() {
        let x_dim = 5;
        let spec = NetworkSpec::generator(x_dim, 10, 64, vec![32, 32], Head::Linear);
        let params = build_network(&spec, 0).unwrap();
        let expected = 74 * 32 + 32 + 32 * 32 + 32 + 32 * x_dim + x_dim;
        assert_eq!(params.param_count(), expected);
    }

    #[test]
    fn zero_width_layer_is_an_error() {
        let spec = NetworkSpec::classifier(2, 4, vec![16, 0]);
        assert!(build_network(&spec, 0).is_err());
    }

    #[test]
    fn generator_shape_determinism_and_batch_equivariance() {
        let g = small_gen();
        let y = one_hot(&[0, 3, 1], 4).unwrap();
        let z = Tensor::matrix(3, 3, vec![0.1, -0.2, 0.3, 0.5, 0.0, -1.0, 0.2, 0.2, 0.2]).unwrap();
        let x1 = generator_forward(&g, &y, &z).unwrap();
        assert_eq!(x1.shape(), &[3, 2]);
        let x2 = generator_forward(&g, &y, &z).unwrap();
        assert_eq!(x1, x2);

        // permute batch rows -> outputs permute identically
        let perm = [2usize, 0, 1];
        let yp = y.gather_rows(&perm).unwrap();
        let zp = z.gather_rows(&perm).unwrap();
        let xp = generator_forward(&g, &yp, &zp).unwrap();
        assert_eq!(xp, x1.gather_rows(&perm).unwrap());
    }

    #[test]
    fn generator_rejects_non_one_hot() {
        let g = small_gen();
        let y = Tensor::matrix(1, 4, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let z = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        assert!(generator_forward(&g, &y, &z).is_err());
    }

    #[test]
    fn classify_rows_are_distributions() {
        let c = build_network(&NetworkSpec::classifier(2, 4, vec![8]), 3).unwrap();
        let x = Tensor::matrix(5, 2, vec![0.3, -0.7, 1.2, 0.1, -0.4, 0.9, 2.0, -2.0, 0.0, 0.0]).unwrap();
        let p = classify(&c, &x).unwrap();
        for r in 0..5 {
            let row = p.row(r);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_final_layer_classifier_is_uniform() {
        let mut c = build_network(&NetworkSpec::classifier(2, 4, vec![8]), 3).unwrap();
        let last_w = c.tensors.len() - 2;
        for v in c.tensors[last_w].data_mut() {
            *v = 0.0;
        }
        let x = Tensor::matrix(2, 2, vec![0.3, -0.7, 1.2, 0.1]).unwrap();
        let p = classify(&c, &x).unwrap();
        for &v in p.data() {
            assert_relative_eq!(v, 0.25, max_relative = 1e-12);
        }
    }

    #[test]
    fn argmax_invariant_under_logit_shift() {
        let c = build_network(&NetworkSpec::classifier(2, 4, vec![8]), 9).unwrap();
        let x = Tensor::matrix(3, 2, vec![0.3, -0.7, 1.2, 0.1, -0.4, 0.9]).unwrap();
        let base = argmax_rows(&classify(&c, &x).unwrap());
        // shift all output biases by the same constant
        let mut shifted = c.clone();
        let last_b = shifted.tensors.len() - 1;
        for v in shifted.tensors[last_b].data_mut() {
            *v += 5.0;
        }
        assert_eq!(argmax_rows(&classify(&shifted, &x).unwrap()), base);
    }

    #[test]
    fn zero_weight_critic_scores_half() {
        let spec = NetworkSpec::critic_xz(2, 3, vec![8], 0.2);
        let mut d = build_network(&spec, 1).unwrap();
        for t in &mut d.tensors {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let x = Tensor::matrix(2, 2, vec![1.0, -1.0, 0.5, 0.5]).unwrap();
        let z = Tensor::matrix(2, 3, vec![0.1; 6]).unwrap();
        let s = critic_xz(&d, &x, &z).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn critic_scores_stay_in_open_unit_interval() {
        let d = build_network(&NetworkSpec::critic_xy(2, 4, vec![16], 0.2), 5).unwrap();
        let x = Tensor::matrix(4, 2, vec![3.0, -2.0, 0.0, 0.1, -5.0, 4.0, 1.0, 1.0]).unwrap();
        let y = one_hot(&[0, 1, 2, 3], 4).unwrap();
        let s = critic_xy(&d, &x, &y).unwrap();
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn inference_norm_gradient_passes_grad_check() {
        let i = build_network(&NetworkSpec::inference(2, 3, vec![6]), 11).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.4, -0.6, 1.1, 0.2]).unwrap();
        let f = move |tape: &mut Tape, vars: &[Var]| {
            let xv = tape.constant(&x);
            // rebuild the forward pass by hand from the leaf vars
            let h = tape.matmul(xv, vars[0])?;
            let h = tape.add(h, vars[1])?;
            let h = tape.relu(h)?;
            let o = tape.matmul(h, vars[2])?;
            let o = tape.add(o, vars[3])?;
            let sq = tape.mul(o, o)?;
            tape.sum(sq)
        };
        let report = grad_check(&f, &i.tensors, 1e-4, 1e-3).unwrap();
        assert!(report.pass, "max_rel_err = {}", report.max_rel_err);
    }

    #[test]
    fn critic_gradient_wrt_input_passes_grad_check() {
        let d = build_network(&NetworkSpec::critic_xz(2, 2, vec![6], 0.2), 13).unwrap();
        let z = Tensor::matrix(1, 2, vec![0.3, -0.4]).unwrap();
        let d2 = d.clone();
        let f = move |tape: &mut Tape, vars: &[Var]| {
            let dvars = d2.insert_into(tape, false);
            let zv = tape.constant(&z);
            let input = tape.concat(vars[0], zv)?;
            let s = d2.forward(tape, &dvars, input)?;
            tape.sum(s)
        };
        let x = Tensor::matrix(1, 2, vec![0.9, -0.1]).unwrap();
        let report = grad_check(&f, &[x], 1e-4, 1e-3).unwrap();
        assert!(report.pass, "max_rel_err = {}", report.max_rel_err);
    }
}
