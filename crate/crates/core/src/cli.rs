//! The `fpn` command line: the pipeline train-ae → encode → train-flow and the
//! tasks that consume its artifacts.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on runtime failures (the
//! message goes to standard error).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::autoencoder::{train_autoencoder, AeEpoch, AutoencoderConfig};
use crate::diagnostics::flow_diagnostics;
use crate::error::{Error, Result};
use crate::flow::{one_hot, one_hot_repeated, FlowModel, FlowSpec};
use crate::io::{self, synth, DataConfig, ExperimentConfig, PriorChoice};
use crate::numerics::{DenseMatrix, Rng};
use crate::tasks::{accuracy, argmax_rows, classify, conditional_generate, confusion_matrix, manipulate_attributes, ClassPrior};
use crate::trainer::{build_latent_dataset, history_csv, train_flow, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "fpn", version, about = "Conditional flow plugins for frozen autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Validation,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DataKind {
    /// Two Gaussian latent classes embedded as 16-d objects.
    TwoGaussian,
    /// 8×8 digit glyphs, ten classes.
    Digits,
    /// Two independent binary attributes embedded as 16-d objects.
    Attributes,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the base autoencoder and save it frozen.
    TrainAe { config: PathBuf },
    /// Encode the objects with the frozen base model and save the latent dataset.
    Encode { config: PathBuf },
    /// Train the flow plugin on the latent dataset; writes the model and loss CSV.
    TrainFlow { config: PathBuf },
    /// Generate objects conditioned on one class.
    Sample {
        config: PathBuf,
        #[arg(long)]
        class: usize,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output matrix file (default: `<output_dir>/samples.fpnm`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a PGM grid when objects are square images.
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Bayes-classify latents; prints accuracy and the confusion matrix as CSV.
    Classify {
        config: PathBuf,
        /// Latent dataset (default: the one written by `encode`).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "validation")]
        split: Split,
    },
    /// Edit objects by swapping their attributes in the flow's base space.
    Manipulate {
        config: PathBuf,
        /// Objects to edit (default: the configured objects).
        #[arg(long)]
        objects: Option<PathBuf>,
        /// Source attributes, matrix file or label CSV. Defaults to the configured
        /// attributes for the configured objects, otherwise to predicted classes.
        #[arg(long)]
        src_attrs: Option<PathBuf>,
        /// Target attributes, matrix file or label CSV.
        #[arg(long, required_unless_present = "dst_class", conflicts_with = "dst_class")]
        dst_attrs: Option<PathBuf>,
        /// Target class for every row.
        #[arg(long)]
        dst_class: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Invertibility and log-determinant diagnostics of a saved flow.
    Eval {
        config: PathBuf,
        #[arg(long)]
        flow: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a bundled synthetic dataset and a config that trains on it.
    GenData {
        #[arg(value_enum)]
        kind: DataKind,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing results to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                eprint!("{}", e.render());
                2
            } else {
                let _ = write!(out, "{}", e.render());
                0
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::TrainAe { config } => train_ae_cmd(&ExperimentConfig::load(config)?, out),
        Command::Encode { config } => encode_cmd(&ExperimentConfig::load(config)?, out),
        Command::TrainFlow { config } => train_flow_cmd(&ExperimentConfig::load(config)?, out),
        Command::Sample { config, class, count, seed, out: path, pgm } => {
            let cfg = ExperimentConfig::load(config)?;
            sample_cmd(&cfg, class, count, seed, path, pgm, out)
        }
        Command::Classify { config, dataset, split } => classify_cmd(&ExperimentConfig::load(config)?, dataset, split, out),
        Command::Manipulate { config, objects, src_attrs, dst_attrs, dst_class, out: path, pgm } => {
            let cfg = ExperimentConfig::load(config)?;
            manipulate_cmd(&cfg, objects, src_attrs, dst_attrs, dst_class, path, pgm, out)
        }
        Command::Eval { config, flow, rows, seed } => eval_cmd(&ExperimentConfig::load(config)?, flow, rows, seed, out),
        Command::GenData { kind, out_dir, count, seed } => gen_data_cmd(kind, &out_dir, count, seed, out),
    }
}

fn emit(out: &mut dyn Write, text: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(text).map_err(|e| Error::io("<stdout>", e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    io::write_atomic(path, text.as_bytes())
}

/// Configured attribute matrix and, for label data, the integer labels.
fn load_attributes(data: &DataConfig, rows: usize) -> Result<(DenseMatrix, Option<Vec<usize>>)> {
    let (y, labels) = match (&data.labels, &data.attributes) {
        (Some(path), _) => {
            let labels = io::load_labels(path)?;
            let classes = data.classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
            (one_hot(&labels, classes)?, Some(labels))
        }
        (None, Some(path)) => (io::load_matrix(path)?, None),
        (None, None) => return Err(Error::Config("no attribute source configured".into())),
    };
    if y.rows() != rows {
        return Err(Error::Config(format!("{rows} objects but {} attribute rows", y.rows())));
    }
    Ok((y, labels))
}

/// Attribute file: `.csv` label lists become one-hot rows over `classes`.
fn read_attribute_file(path: &Path, classes: usize) -> Result<DenseMatrix> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        one_hot(&io::load_labels(path)?, classes)
    } else {
        io::load_matrix(path)
    }
}

fn ae_history_csv(history: &[AeEpoch]) -> String {
    let mut s = String::from("epoch,reconstruction_mse,kl\n");
    for e in history {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.reconstruction_mse, e.kl));
    }
    s
}

fn train_ae_cmd(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let x = io::load_matrix(&cfg.data.objects)?;
    let (mut ae, history) = train_autoencoder(&x, &cfg.autoencoder, cfg.seed)?;
    ae.freeze();
    ensure_dir(&cfg.output_dir)?;
    io::save_autoencoder(cfg.autoencoder_path(), &ae)?;
    write_text(&cfg.autoencoder_loss_path(), &ae_history_csv(&history))?;
    let last = history.last().map_or(f64::NAN, |e| e.reconstruction_mse);
    emit(out, format_args!("final reconstruction mse,{last}\nautoencoder checksum,{:016x}\n", ae.checksum()))
}

fn encode_cmd(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let ae = io::load_autoencoder(cfg.autoencoder_path())?;
    let x = io::load_matrix(&cfg.data.objects)?;
    let (y, _) = load_attributes(&cfg.data, x.rows())?;
    let ds = build_latent_dataset(&ae, &x, &y, cfg.train.validation_fraction, cfg.seed)?;
    ensure_dir(&cfg.output_dir)?;
    io::save_dataset(cfg.dataset_path(), &ds)?;
    emit(out, format_args!(
        "rows,{}\ntrain,{}\nvalidation,{}\n",
        ds.len(),
        ds.train_indices().len(),
        ds.validation_indices().len()
    ))
}

fn train_flow_cmd(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let ds = io::load_dataset(cfg.dataset_path())?;
    let mut rng = Rng::seed_from(cfg.seed);
    let flow = FlowModel::build(ds.latent_dim(), ds.context_dim(), &cfg.flow, &mut rng)?;
    let outcome = train_flow(flow, &ds, &cfg.train)?;
    ensure_dir(&cfg.output_dir)?;
    io::save_flow(cfg.flow_path(), &outcome.model)?;
    write_text(&cfg.flow_loss_path(), &history_csv(&outcome.history))?;
    emit(out, format_args!(
        "epochs,{}\nbest epoch,{}\nbest validation nll,{}\n",
        outcome.history.len(),
        outcome.best_epoch,
        outcome.best_val_nll
    ))
}

fn save_objects(path: &Path, pgm: Option<&Path>, x: &DenseMatrix, columns: usize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    io::save_matrix(path, x)?;
    if let Some(pgm) = pgm {
        let side = io::square_side(x.cols()).ok_or_else(|| {
            Error::Config(format!("{}-d objects cannot be shown as square images", x.cols()))
        })?;
        io::save_pgm_grid(pgm, x, side, side, columns)?;
    }
    Ok(())
}

fn sample_cmd(
    cfg: &ExperimentConfig,
    class: usize,
    count: usize,
    seed: u64,
    path: Option<PathBuf>,
    pgm: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<()> {
    let ae = io::load_autoencoder(cfg.autoencoder_path())?;
    let flow = io::load_flow(cfg.flow_path())?;
    if class >= flow.context_dim() {
        return Err(Error::Config(format!("class {class} out of range for {} classes", flow.context_dim())));
    }
    let y = one_hot_repeated(class, flow.context_dim(), count)?;
    let x = conditional_generate(&flow, &ae, &y, &mut Rng::seed_from(seed))?;
    let path = path.unwrap_or_else(|| cfg.output_dir.join("samples.fpnm"));
    save_objects(&path, pgm.as_deref(), &x, cfg.tasks.grid_columns)?;
    emit(out, format_args!("wrote {} samples of class {class} to {}\n", x.rows(), path.display()))
}

fn prior_for(cfg: &ExperimentConfig, flow: &FlowModel) -> Result<ClassPrior> {
    match cfg.tasks.prior {
        PriorChoice::Uniform => ClassPrior::uniform(flow.context_dim()),
        PriorChoice::Empirical => flow.class_prior().cloned().ok_or_else(|| {
            Error::Config("the flow carries no class prior; it was not trained on one-hot labels".into())
        }),
    }
}

fn classify_cmd(cfg: &ExperimentConfig, dataset: Option<PathBuf>, split: Split, out: &mut dyn Write) -> Result<()> {
    let flow = io::load_flow(cfg.flow_path())?;
    let ds = io::load_dataset(dataset.unwrap_or_else(|| cfg.dataset_path()))?;
    if !ds.is_one_hot() {
        return Err(Error::Config("classification needs one-hot class attributes".into()));
    }
    let prior = prior_for(cfg, &flow)?;
    let rows: Vec<usize> = match split {
        Split::Train => ds.train_indices().to_vec(),
        Split::Validation => ds.validation_indices().to_vec(),
        Split::All => (0..ds.len()).collect(),
    };
    let z = ds.z().select_rows(&rows);
    let truth = argmax_rows(&ds.y().select_rows(&rows));
    let predicted = classify(&flow, &prior, &z)?;
    let k = prior.classes();
    let mut text = format!("accuracy,{}\ntrue", accuracy(&truth, &predicted));
    for c in 0..k {
        text.push_str(&format!(",pred_{c}"));
    }
    text.push('\n');
    for (c, row) in confusion_matrix(&truth, &predicted, k).iter().enumerate() {
        text.push_str(&c.to_string());
        for n in row {
            text.push_str(&format!(",{n}"));
        }
        text.push('\n');
    }
    emit(out, format_args!("{text}"))
}

#[allow(clippy::too_many_arguments)]
fn manipulate_cmd(
    cfg: &ExperimentConfig,
    objects: Option<PathBuf>,
    src_attrs: Option<PathBuf>,
    dst_attrs: Option<PathBuf>,
    dst_class: Option<usize>,
    path: Option<PathBuf>,
    pgm: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<()> {
    let ae = io::load_autoencoder(cfg.autoencoder_path())?;
    let flow = io::load_flow(cfg.flow_path())?;
    let k = flow.context_dim();
    let x = io::load_matrix(objects.as_deref().unwrap_or(&cfg.data.objects))?;
    let y_src = match (src_attrs, objects.is_none()) {
        (Some(p), _) => read_attribute_file(&p, k)?,
        (None, true) => load_attributes(&cfg.data, x.rows())?.0,
        (None, false) => {
            let prior = prior_for(cfg, &flow)?;
            one_hot(&classify(&flow, &prior, &ae.encode(&x)?)?, k)?
        }
    };
    let y_dst = match (dst_attrs, dst_class) {
        (Some(p), _) => read_attribute_file(&p, k)?,
        (None, Some(c)) if c < k => one_hot_repeated(c, k, x.rows())?,
        (None, Some(c)) => return Err(Error::Config(format!("class {c} out of range for {k} classes"))),
        (None, None) => return Err(Error::Config("no target attributes given".into())),
    };
    let edited = manipulate_attributes(&flow, &ae, &x, &y_src, &y_dst)?;
    let path = path.unwrap_or_else(|| cfg.output_dir.join("manipulated.fpnm"));
    save_objects(&path, pgm.as_deref(), &edited, cfg.tasks.grid_columns)?;
    emit(out, format_args!("wrote {} edited objects to {}\n", edited.rows(), path.display()))
}

fn eval_cmd(cfg: &ExperimentConfig, flow: Option<PathBuf>, rows: usize, seed: u64, out: &mut dyn Write) -> Result<()> {
    let flow = io::load_flow(flow.unwrap_or_else(|| cfg.flow_path()))?;
    let d = flow_diagnostics(&flow, rows, 8, 1e-5, &mut Rng::seed_from(seed))?;
    let fd = d.fd_logdet_max_abs.map_or("skipped".to_string(), |v| v.to_string());
    emit(out, format_args!(
        "rows,{}\nroundtrip_max_abs,{}\nlogdet_sum_max_abs,{}\nfd_logdet_max_abs,{fd}\n",
        d.rows, d.roundtrip_max_abs, d.logdet_sum_max_abs
    ))
}

fn gen_data_cmd(kind: DataKind, dir: &Path, count: usize, seed: u64, out: &mut dyn Write) -> Result<()> {
    ensure_dir(dir)?;
    let mut rng = Rng::seed_from(seed);
    let mut cfg = ExperimentConfig {
        seed,
        output_dir: PathBuf::from("run"),
        data: DataConfig { objects: PathBuf::from("objects.fpnm"), ..DataConfig::default() },
        autoencoder: AutoencoderConfig::default(),
        flow: FlowSpec::c_maf_5(),
        train: TrainConfig { seed, ..TrainConfig::default() },
        tasks: Default::default(),
    };
    let x = match kind {
        DataKind::TwoGaussian | DataKind::Attributes => {
            let (z, y, labels) = match kind {
                DataKind::TwoGaussian => {
                    let (z, labels) = synth::TwoGaussian::default().sample(count, &mut rng);
                    (z, None, Some(labels))
                }
                _ => {
                    let (z, y) = synth::binary_attribute_latents(count, 2, 2, 2.0, 0.5, &mut rng);
                    (z, Some(y), None)
                }
            };
            io::save_matrix(dir.join("latents_true.fpnm"), &z)?;
            if let Some(labels) = labels {
                io::write_labels(dir.join("labels.csv"), &labels)?;
                cfg.data.labels = Some(PathBuf::from("labels.csv"));
            }
            if let Some(y) = y {
                io::save_matrix(dir.join("attributes.fpnm"), &y)?;
                cfg.data.attributes = Some(PathBuf::from("attributes.fpnm"));
            }
            cfg.autoencoder.latent_dim = 2;
            cfg.autoencoder.hidden = vec![32, 32];
            synth::ObjectEmbedding::new(2, 16, &mut rng).apply(&z)
        }
        DataKind::Digits => {
            let (x, labels) = synth::digit_glyphs(count, &synth::GlyphJitter::default(), &mut rng);
            io::write_labels(dir.join("labels.csv"), &labels)?;
            cfg.data.labels = Some(PathBuf::from("labels.csv"));
            x
        }
    };
    io::save_matrix(dir.join("objects.fpnm"), &x)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    emit(out, format_args!("wrote {} objects and {}\n", x.rows(), dir.join("config.toml").display()))
}
