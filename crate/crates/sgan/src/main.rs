//! Command-line entry points: training runs, checkpoint evaluation,
//! conditional generation, style transfer, interpolation and the
//! gradient-check suite.
//!
//! Exit codes: 0 success, 1 internal failure (including gradcheck
//! failures), 2 invalid configuration/arguments/checkpoint, 3 training
//! aborted on a non-finite loss.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sgan::checkpoint;
use sgan::config::{DatasetKind, RunConfig};
use sgan::data::DatasetSplit;
use sgan::eval::{
    conditional_accuracy, golden_score, interpolate, mp_measure, semi_sup_error, style_transfer,
    train_golden_classifier, GoldenClassifier, MetricsRecord,
};
use sgan::gradcheck::grad_check;
use sgan::network::one_hot;
use sgan::tensor::{Tape, Tensor, Var};
use sgan::trainer::{Networks, Trainer};
use sgan::{Error, Result};

#[derive(Parser)]
#[command(name = "sgan", version, about = "Structured GAN training laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full training loop and write metrics + checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory from the config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute all evaluation metrics from a checkpoint; prints one JSON object.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Proceed even if the checkpoint was written under a different config.
        #[arg(long)]
        force: bool,
    },
    /// Generate conditional samples from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Generate for one class only.
        #[arg(long, conflicts_with = "all")]
        class: Option<usize>,
        /// Generate for every class.
        #[arg(long)]
        all: bool,
        /// Samples per class.
        #[arg(long, default_value_t = 16)]
        num: usize,
        #[arg(long)]
        out: PathBuf,
        /// Sampling seed; defaults to the config's derived eval seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-generate one input under several target classes with its inferred z.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Source point as comma-separated coordinates.
        #[arg(long)]
        input: String,
        /// Comma-separated target classes.
        #[arg(long)]
        classes: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate along a straight line between two sampled z endpoints.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        class: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Verify analytic gradients of every tape operation against finite differences.
    Gradcheck,
}

fn main() {
    let cli = Cli::parse();
    // SGAN_THREADS caps internal parallelism; the engine is single-threaded,
    // so any value >= 1 is accepted and 1 thread is used.
    if let Ok(v) = std::env::var("SGAN_THREADS") {
        if v.parse::<usize>().map(|n| n == 0).unwrap_or(true) {
            eprintln!("error: SGAN_THREADS must be a positive integer, got {v:?}");
            std::process::exit(2);
        }
    }
    let code = match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Checkpoint(_) => 2,
                Error::NonFiniteLoss { .. } => 3,
                _ => 1,
            }
        }
    };
    std::process::exit(code);
}

fn run(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::Train { config, seed, out } => cmd_train(&config, seed, out).map(|_| 0),
        Cmd::Eval { checkpoint, config, force } => cmd_eval(&checkpoint, &config, force).map(|_| 0),
        Cmd::Generate { checkpoint, config, class, all, num, out, seed } => {
            cmd_generate(&checkpoint, &config, class, all, num, &out, seed).map(|_| 0)
        }
        Cmd::Transfer { checkpoint, config, input, classes, out } => {
            cmd_transfer(&checkpoint, &config, &input, &classes, &out).map(|_| 0)
        }
        Cmd::Interpolate { checkpoint, config, class, steps, out, seed } => {
            cmd_interpolate(&checkpoint, &config, class, steps, &out, seed).map(|_| 0)
        }
        Cmd::Gradcheck => cmd_gradcheck(),
    }
}

fn compute_metrics(
    cfg: &RunConfig,
    nets: &Networks,
    split: &DatasetSplit,
    golden: &GoldenClassifier,
    epoch: usize,
) -> Result<MetricsRecord> {
    let priors = cfg.priors(split);
    let record = MetricsRecord {
        epoch,
        test_error: semi_sup_error(&nets.c, &split.test_x, &split.test_y)?,
        mp: mp_measure(&nets.i, &split.test_x, &split.test_y, split.num_classes)?,
        conditional_accuracy: conditional_accuracy(&nets.g, golden, &priors, cfg.eval.num_samples, cfg.eval_seed())?,
        golden_score: golden_score(&nets.g, golden, &priors, cfg.eval.num_samples, cfg.eval_seed())?,
        l_xz_critic: None,
        l_xz_geninf: None,
        l_xy_critic: None,
        l_xy_gen: None,
        r_y: None,
        r_z: None,
    };
    record.validate(split.num_classes)?;
    Ok(record)
}

const CSV_HEADER: &str = "epoch,l_xz_critic,l_xz_geninf,l_xy_critic,l_xy_gen,r_y,r_z,test_error,mp,cond_acc,golden_score";

fn cmd_train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    cfg.validate()?;
    let hash = cfg.config_hash();
    std::fs::create_dir_all(&cfg.out_dir)?;

    let split = cfg.build_split()?;
    split.validate()?;
    let golden = train_golden_classifier(&split, &cfg.model.c_hidden, cfg.eval_seed())?;
    let nets = cfg.build_networks(&split)?;
    let priors = cfg.priors(&split);
    let mut trainer = Trainer::new(nets, cfg.train.clone(), priors)?;

    let csv_path = cfg.out_dir.join("metrics.csv");
    let mut csv = std::fs::File::create(&csv_path)?;
    writeln!(csv, "{CSV_HEADER}")?;

    let epochs = cfg.train.epochs;
    let eval_every = cfg.eval.eval_every;
    let ckpt_every = cfg.eval.checkpoint_every;
    let mut last: Option<MetricsRecord> = None;
    trainer.train(&split, cfg.train_seed(), |epoch, nets, report| {
        let due = (epoch + 1) % eval_every == 0 || epoch + 1 == epochs || last.is_none();
        if due {
            last = Some(compute_metrics(&cfg, nets, &split, &golden, epoch)?);
        }
        let m = last.as_ref().expect("metrics computed at least once");
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            epoch,
            report.l_xz_critic,
            report.l_xz_geninf,
            report.l_xy_critic,
            report.l_xy_gen,
            report.r_y,
            report.r_z,
            m.test_error,
            m.mp,
            m.conditional_accuracy,
            m.golden_score
        )?;
        csv.flush()?;
        if (epoch + 1) % ckpt_every == 0 && epoch + 1 != epochs {
            checkpoint::save(&cfg.out_dir.join(format!("checkpoint_{epoch}.ckpt")), hash, nets)?;
        }
        Ok(())
    })?;
    checkpoint::save(&cfg.out_dir.join("final.ckpt"), hash, &trainer.nets)?;
    Ok(())
}

/// Load a checkpoint and rebuild the networks it was trained with.
fn load_model(ckpt: &Path, cfg: &RunConfig, force: bool) -> Result<(DatasetSplit, Networks)> {
    let loaded = checkpoint::load(ckpt)?;
    if loaded.config_hash != cfg.config_hash() && !force {
        return Err(Error::Checkpoint(format!(
            "checkpoint config hash {:#018x} does not match this config ({:#018x}); pass --force to override",
            loaded.config_hash,
            cfg.config_hash()
        )));
    }
    let split = cfg.build_split()?;
    let mut nets = cfg.build_networks(&split)?;
    checkpoint::restore(&loaded, &mut nets)?;
    Ok((split, nets))
}

fn cmd_eval(ckpt: &Path, config: &Path, force: bool) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (split, nets) = load_model(ckpt, &cfg, force)?;
    let golden = train_golden_classifier(&split, &cfg.model.c_hidden, cfg.eval_seed())?;
    let record = compute_metrics(&cfg, &nets, &split, &golden, cfg.train.epochs.saturating_sub(1))?;
    println!("{}", serde_json::to_string(&record).expect("record serializes"));
    Ok(())
}

/// Write samples as CSV (`x0,..,y`) for point data or a PGM grid for
/// square image data, grouped one row of the grid per class.
fn write_samples(cfg: &RunConfig, x: &Tensor, labels: &[usize], per_class: usize, out: &Path) -> Result<()> {
    match cfg.dataset.kind {
        DatasetKind::Rings => {
            let mut text = String::new();
            for d in 0..x.last_dim() {
                text.push_str(&format!("x{d},"));
            }
            text.push_str("y\n");
            for (r, &label) in labels.iter().enumerate() {
                for v in x.row(r) {
                    text.push_str(&format!("{v},"));
                }
                text.push_str(&format!("{label}\n"));
            }
            std::fs::write(out, text)?;
        }
        DatasetKind::Idx => {
            let side = (x.last_dim() as f64).sqrt() as usize;
            if side * side != x.last_dim() {
                return Err(Error::Invalid(format!("cannot render non-square images of dim {}", x.last_dim())));
            }
            let rows = x.rows() / per_class;
            let (w, h) = (per_class * side, rows * side);
            let mut pixels = vec![0u8; w * h];
            for r in 0..x.rows() {
                let (grid_row, grid_col) = (r / per_class, r % per_class);
                for (p, &v) in x.row(r).iter().enumerate() {
                    let (py, px) = (p / side, p % side);
                    let gy = grid_row * side + py;
                    let gx = grid_col * side + px;
                    pixels[gy * w + gx] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
            let mut f = std::fs::File::create(out)?;
            write!(f, "P5\n{w} {h}\n255\n")?;
            f.write_all(&pixels)?;
        }
    }
    Ok(())
}

fn cmd_generate(
    ckpt: &Path,
    config: &Path,
    class: Option<usize>,
    all: bool,
    num: usize,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (split, nets) = load_model(ckpt, &cfg, false)?;
    let c = split.num_classes;
    let labels: Vec<usize> = match (class, all) {
        (Some(k), false) => {
            if k >= c {
                return Err(Error::Config(format!("class {k} out of range (dataset has {c} classes)")));
            }
            vec![k; num]
        }
        (None, true) => (0..c).flat_map(|k| std::iter::repeat(k).take(num)).collect(),
        _ => return Err(Error::Config("pass exactly one of --class or --all".into())),
    };
    if num == 0 {
        return Err(Error::Config("--num must be positive".into()));
    }
    let priors = cfg.priors(&split);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or_else(|| cfg.eval_seed()));
    let y = one_hot(&labels, c)?;
    let z = priors.sample_z(labels.len(), &mut rng);
    let x = sgan::network::generator_forward(&nets.g, &y, &z)?;
    write_samples(&cfg, &x, &labels, num, out)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| Error::Config(format!("cannot parse {what} entry {p:?}"))))
        .collect()
}

fn cmd_transfer(ckpt: &Path, config: &Path, input: &str, classes: &str, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (split, nets) = load_model(ckpt, &cfg, false)?;
    let coords: Vec<f64> = parse_list(input, "--input")?;
    if coords.len() != split.x_dim {
        return Err(Error::Config(format!(
            "--input has {} coordinates, dataset dimension is {}",
            coords.len(),
            split.x_dim
        )));
    }
    let targets: Vec<usize> = parse_list(classes, "--classes")?;
    if targets.is_empty() {
        return Err(Error::Config("--classes is empty".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&k| k >= split.num_classes) {
        return Err(Error::Config(format!(
            "class {bad} out of range (dataset has {} classes)",
            split.num_classes
        )));
    }
    let source = Tensor::matrix(1, split.x_dim, coords)?;
    let x = style_transfer(&nets.g, &nets.i, &source, &targets, split.num_classes)?;
    write_samples(&cfg, &x, &targets, 1, out)
}

fn cmd_interpolate(
    ckpt: &Path,
    config: &Path,
    class: usize,
    steps: usize,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    if steps < 2 {
        return Err(Error::Config(format!("--steps {steps} is below the minimum of 2")));
    }
    let (split, nets) = load_model(ckpt, &cfg, false)?;
    if class >= split.num_classes {
        return Err(Error::Config(format!(
            "class {class} out of range (dataset has {} classes)",
            split.num_classes
        )));
    }
    let priors = cfg.priors(&split);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or_else(|| cfg.eval_seed()));
    let z0 = priors.sample_z(1, &mut rng);
    let z1 = priors.sample_z(1, &mut rng);
    let x = interpolate(&nets.g, class, z0.data(), z1.data(), steps, split.num_classes)?;
    let labels = vec![class; steps];
    write_samples(&cfg, &x, &labels, steps, out)
}

// ---- gradient-check suite ----------------------------------------------

type CheckFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, data.to_vec()).expect("fixture shapes are valid")
}

/// One fixture per tape operation plus composite network losses.
fn gradcheck_catalog() -> Vec<(&'static str, Vec<Tensor>, CheckFn)> {
    let a = m(2, 3, &[0.3, -0.7, 0.5, 1.1, -0.2, 0.4]);
    let b = m(3, 2, &[0.6, -0.4, 0.2, 0.9, -0.8, 0.1]);
    let c = m(2, 2, &[0.5, -0.3, 0.7, 0.2]);
    let bias = Tensor::new(vec![2], vec![0.25, -0.15]).expect("valid");
    let probs_logits = m(2, 3, &[0.4, -0.6, 1.2, -0.3, 0.8, 0.1]);
    let onehot = m(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    // positive entries, away from relu/log kinks
    let pos = m(2, 2, &[0.8, 0.3, 1.4, 0.6]);

    let mut cat: Vec<(&'static str, Vec<Tensor>, CheckFn)> = Vec::new();
    cat.push((
        "matmul",
        vec![a.clone(), b.clone()],
        Box::new(|t, v| {
            let p = t.matmul(v[0], v[1])?;
            t.sum(p)
        }),
    ));
    cat.push((
        "add",
        vec![c.clone(), c.clone()],
        Box::new(|t, v| {
            let s = t.add(v[0], v[1])?;
            let sq = t.mul(s, s)?;
            t.sum(sq)
        }),
    ));
    cat.push((
        "add_bias",
        vec![c.clone(), bias.clone()],
        Box::new(|t, v| {
            let s = t.add(v[0], v[1])?;
            let sq = t.mul(s, s)?;
            t.sum(sq)
        }),
    ));
    cat.push((
        "sub",
        vec![c.clone(), pos.clone()],
        Box::new(|t, v| {
            let s = t.sub(v[0], v[1])?;
            let sq = t.mul(s, s)?;
            t.sum(sq)
        }),
    ));
    cat.push((
        "mul",
        vec![c.clone(), pos.clone()],
        Box::new(|t, v| {
            let p = t.mul(v[0], v[1])?;
            t.sum(p)
        }),
    ));
    cat.push((
        "concat",
        vec![c.clone(), pos.clone()],
        Box::new(|t, v| {
            let j = t.concat(v[0], v[1])?;
            let sq = t.mul(j, j)?;
            t.sum(sq)
        }),
    ));
    cat.push((
        "relu",
        vec![c.clone()],
        Box::new(|t, v| {
            let r = t.relu(v[0])?;
            t.sum(r)
        }),
    ));
    cat.push((
        "leaky_relu",
        vec![c.clone()],
        Box::new(|t, v| {
            let r = t.leaky_relu(v[0], 0.2)?;
            t.sum(r)
        }),
    ));
    cat.push((
        "sigmoid",
        vec![c.clone()],
        Box::new(|t, v| {
            let s = t.sigmoid(v[0])?;
            t.sum(s)
        }),
    ));
    cat.push((
        "tanh",
        vec![c.clone()],
        Box::new(|t, v| {
            let s = t.tanh(v[0])?;
            t.sum(s)
        }),
    ));
    cat.push((
        "softmax",
        vec![probs_logits.clone()],
        Box::new(|t, v| {
            let p = t.softmax(v[0])?;
            let sq = t.mul(p, p)?;
            t.sum(sq)
        }),
    ));
    cat.push((
        "log",
        vec![pos.clone()],
        Box::new(|t, v| {
            let l = t.log(v[0])?;
            t.sum(l)
        }),
    ));
    cat.push((
        "mean",
        vec![c.clone()],
        Box::new(|t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.mean(sq)
        }),
    ));
    cat.push((
        "sum",
        vec![c.clone()],
        Box::new(|t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.sum(sq)
        }),
    ));
    cat.push((
        "squared_error",
        vec![c.clone(), pos.clone()],
        Box::new(|t, v| {
            let e = t.squared_error(v[0], v[1])?;
            t.mean(e)
        }),
    ));
    cat.push((
        "cross_entropy",
        vec![probs_logits.clone()],
        Box::new(move |t, v| {
            let target = m(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
            let tv = t.constant(&target);
            let p = t.softmax(v[0])?;
            let ce = t.cross_entropy(p, tv)?;
            t.mean(ce)
        }),
    ));
    cat.push((
        "affine",
        vec![c.clone()],
        Box::new(|t, v| {
            let s = t.affine(v[0], 1.7, -0.3)?;
            let sq = t.mul(s, s)?;
            t.sum(sq)
        }),
    ));
    // composite losses through a small critic / classifier / inference stack
    let dw1 = m(4, 3, &[0.3, -0.2, 0.5, 0.1, 0.4, -0.6, -0.3, 0.2, 0.1, 0.5, -0.1, 0.3]);
    let db1 = Tensor::new(vec![3], vec![0.1, -0.05, 0.2]).expect("valid");
    let dw2 = m(3, 1, &[0.7, -0.4, 0.5]);
    let db2 = Tensor::new(vec![1], vec![0.05]).expect("valid");
    let real = m(2, 4, &[0.5, -0.3, 0.8, 0.1, -0.6, 0.4, 0.2, -0.1]);
    let fake = m(2, 4, &[-0.2, 0.7, -0.5, 0.3, 0.9, -0.8, 0.4, 0.6]);
    {
        let (real, fake) = (real.clone(), fake.clone());
        cat.push((
            "critic_loss",
            vec![dw1.clone(), db1.clone(), dw2.clone(), db2.clone()],
            Box::new(move |t, v| {
                let score = |t: &mut Tape, x: Var, v: &[Var]| -> Result<Var> {
                    let h = t.matmul(x, v[0])?;
                    let h = t.add(h, v[1])?;
                    let h = t.leaky_relu(h, 0.2)?;
                    let s = t.matmul(h, v[2])?;
                    let s = t.add(s, v[3])?;
                    t.sigmoid(s)
                };
                let xr = t.constant(&real);
                let xf = t.constant(&fake);
                let sr = score(t, xr, v)?;
                let sf = score(t, xf, v)?;
                let lr = t.log(sr)?;
                let lr = t.mean(lr)?;
                let omf = t.one_minus(sf)?;
                let lf = t.log(omf)?;
                let lf = t.mean(lf)?;
                let s = t.add(lr, lf)?;
                t.neg(s)
            }),
        ));
    }
    {
        let fake = fake.clone();
        cat.push((
            "gen_loss",
            vec![dw1.clone(), db1.clone(), dw2.clone(), db2.clone()],
            Box::new(move |t, v| {
                let xf = t.constant(&fake);
                let h = t.matmul(xf, v[0])?;
                let h = t.add(h, v[1])?;
                let h = t.leaky_relu(h, 0.2)?;
                let s = t.matmul(h, v[2])?;
                let s = t.add(s, v[3])?;
                let s = t.sigmoid(s)?;
                let l = t.log(s)?;
                let l = t.mean(l)?;
                t.neg(l)
            }),
        ));
    }
    {
        let x = real.clone();
        let target = onehot.clone();
        cat.push((
            "reconstruction_y",
            vec![m(4, 3, &[0.2, 0.5, -0.3, 0.7, -0.1, 0.4, -0.5, 0.3, 0.2, 0.1, -0.6, 0.8]), Tensor::new(vec![3], vec![0.0, 0.1, -0.1]).expect("valid")],
            Box::new(move |t, v| {
                let xv = t.constant(&x);
                let tv = t.constant(&target);
                let logits = t.matmul(xv, v[0])?;
                let logits = t.add(logits, v[1])?;
                let p = t.softmax(logits)?;
                let ce = t.cross_entropy(p, tv)?;
                t.mean(ce)
            }),
        ));
    }
    {
        let x = real.clone();
        let z = m(2, 2, &[0.3, -0.4, 0.8, 0.2]);
        cat.push((
            "reconstruction_z",
            vec![m(4, 2, &[0.4, -0.2, 0.3, 0.6, -0.5, 0.1, 0.2, -0.3]), Tensor::new(vec![2], vec![0.1, 0.0]).expect("valid")],
            Box::new(move |t, v| {
                let xv = t.constant(&x);
                let zv = t.constant(&z);
                let zh = t.matmul(xv, v[0])?;
                let zh = t.add(zh, v[1])?;
                let e = t.squared_error(zh, zv)?;
                t.mean(e)
            }),
        ));
    }
    // the five real network forward passes, through build_network weights
    let net_checks: [(&'static str, sgan::network::NetworkSpec); 5] = [
        ("net_G", sgan::network::NetworkSpec::generator(2, 3, 2, vec![4], sgan::network::Head::Linear)),
        ("net_I", sgan::network::NetworkSpec::inference(2, 2, vec![4])),
        ("net_C", sgan::network::NetworkSpec::classifier(2, 3, vec![4])),
        ("net_Dxy", sgan::network::NetworkSpec::critic_xy(2, 3, vec![4], 0.2)),
        ("net_Dxz", sgan::network::NetworkSpec::critic_xz(2, 2, vec![4], 0.2)),
    ];
    for (name, spec) in net_checks {
        let in_dim = spec.input_dim();
        let net = sgan::network::build_network(&spec, 17).expect("valid spec");
        let params = net.tensors.clone();
        let is_classifier = matches!(name, "net_C");
        let input = Tensor::matrix(
            2,
            in_dim,
            (0..2 * in_dim).map(|i| 0.3 + 0.17 * i as f64).collect(),
        )
        .expect("valid");
        cat.push((
            name,
            params,
            Box::new(move |t, v| {
                let vars = sgan::network::NetVars { vars: v.to_vec() };
                let xv = t.constant(&input);
                let out = net.forward(t, &vars, xv)?;
                if is_classifier {
                    // probe through the softmax head with a fixed target
                    let target = m(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
                    let tv = t.constant(&target);
                    let ce = t.cross_entropy(out, tv)?;
                    t.mean(ce)
                } else {
                    let sq = t.mul(out, out)?;
                    t.sum(sq)
                }
            }),
        ));
    }
    cat
}

fn cmd_gradcheck() -> Result<i32> {
    let mut all_pass = true;
    for (name, params, f) in gradcheck_catalog() {
        let report = grad_check(&f, &params, 1e-5, 1e-6)?;
        let verdict = if report.pass { "PASS" } else { "FAIL" };
        println!("{name}: max_rel_err = {:.3e} {verdict}", report.max_rel_err);
        all_pass &= report.pass;
    }
    Ok(if all_pass { 0 } else { 1 })
}
