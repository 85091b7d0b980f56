use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::mpsc::RecvTimeoutError;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gestop::config::{gestop_home, DaemonConfig, HomeLayout, DEFAULT_CONTROL_PORT};
use gestop::training::{load_dynamic, save_trained, train_dynamic, train_static, TrainOptions};
use gestop::DaemonHandle;
use gestop_core::datasets::{
    dynamic_feature_set, read_static_csv, record_dynamic, record_static, save_sequence, split,
    static_features, write_static_csv, DEFAULT_SPLIT_SEED, DEFAULT_VAL_FRACTION,
};
use gestop_core::executor::LoggingSink;
use gestop_core::ingress::{send_replay, Ingress, DEFAULT_INGRESS_PORT};
use gestop_core::model::KeypointFrame;
use gestop_core::nn::{
    load_model, peek_header, CalibrationConfig, DynamicNet, EpochMetrics, Model, Network,
    Optimizer, StaticNet, DEFAULT_NONE_SCALE,
};
use gestop_core::recognizer::RecognizerConfig;
use gestop_core::synth;
use gestop_core::wire::{ReplayFile, Speed};

#[derive(Parser)]
#[command(
    name = "gestop",
    version,
    about = "Hand-gesture recognition daemon and tooling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the daemon: ingress, recognizer, executor and control plane.
    Serve(ServeArgs),
    /// Train the static (single-frame) classifier from a CSV dataset.
    TrainStatic(TrainArgs),
    /// Train the dynamic (sequence) classifier from a replay tree or SHREC root.
    TrainDynamic(TrainArgs),
    /// Evaluate a model on a dataset and print its confusion matrix.
    Eval(EvalArgs),
    /// Record labelled samples from live ingress or a replay file.
    Record(RecordArgs),
    /// Stream a replay file to a running daemon.
    Replay(ReplayArgs),
    /// Generate synthetic datasets and streams.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = DEFAULT_INGRESS_PORT)]
    ingress_port: u16,
    #[arg(long, default_value_t = DEFAULT_CONTROL_PORT)]
    control_port: u16,
    /// Address both listeners bind to.
    #[arg(long, default_value_t = Ipv4Addr::LOCALHOST)]
    bind: Ipv4Addr,
    /// Defaults to $GESTOP_HOME/static.model.
    #[arg(long)]
    static_model: Option<PathBuf>,
    #[arg(long)]
    dynamic_model: Option<PathBuf>,
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    dispatch_log: Option<PathBuf>,
    /// Where recordings go and retraining reads from.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Multiplier applied to the `none` score; 1 disables calibration.
    #[arg(long, default_value_t = DEFAULT_NONE_SCALE)]
    none_scale: f64,
    #[arg(long, default_value_t = 5)]
    stability_frames: usize,
    #[arg(long, default_value_t = 10)]
    min_segment_frames: usize,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_SPLIT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    val_fraction: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value = "adam")]
    optimizer: Optimizer,
    /// Hidden width: the static MLP layer, or the GRU state per direction.
    #[arg(long)]
    hidden: Option<usize>,
    /// Dynamic encoder width.
    #[arg(long)]
    embed: Option<usize>,
}

impl TrainFlags {
    fn options(&self) -> TrainOptions {
        let mut opts = TrainOptions::default()
            .with_epochs(self.epochs)
            .with_seed(self.seed);
        opts.val_fraction = self.val_fraction;
        opts.train.batch_size = self.batch_size;
        opts.train.learning_rate = self.lr;
        opts.train.optimizer = self.optimizer;
        if let Some(h) = self.hidden {
            opts.static_hidden = h;
            opts.dynamic_hidden = h;
        }
        if let Some(e) = self.embed {
            opts.dynamic_embed = e;
        }
        opts
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Static: CSV file. Dynamic: replay tree or SHREC'17 root.
    #[arg(long)]
    data: PathBuf,
    /// Output model path; metrics go to `<stem>.metrics.csv` beside it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitPart {
    All,
    Train,
    Val,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Which part of the seeded split to evaluate on.
    #[arg(long, value_enum, default_value = "all")]
    split: SplitPart,
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    val_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_SPLIT_SEED)]
    seed: u64,
    /// Apply `none` calibration with this factor (static models only).
    #[arg(long)]
    none_scale: Option<f64>,
    /// Write the confusion matrix here instead of stdout.
    #[arg(long)]
    confusion: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Static,
    Dynamic,
}

#[derive(Args)]
struct RecordArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    label: String,
    /// Static: CSV to append to. Dynamic: dataset root directory.
    #[arg(long)]
    out: PathBuf,
    /// Read frames from this replay file instead of live ingress.
    #[arg(long)]
    from_file: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_INGRESS_PORT)]
    ingress_port: u16,
    /// Static: number of frames to take (default: all available).
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 10)]
    min_segment_frames: usize,
    /// Live recording ends after this many idle seconds.
    #[arg(long, default_value_t = 2.0)]
    idle_secs: f64,
}

#[derive(Args)]
struct ReplayArgs {
    file: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long = "ingress-port", alias = "port", default_value_t = DEFAULT_INGRESS_PORT)]
    port: u16,
    /// `max` or a playback-rate factor such as `1` or `0.5`.
    #[arg(long, default_value = "1")]
    speed: Speed,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Labelled CSV of every canonical pose plus random clutter (`none`).
    Static {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        per_class: usize,
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Replay tree with sequences of every motion template.
    Dynamic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 20)]
        min_len: usize,
        #[arg(long, default_value_t = 40)]
        max_len: usize,
        #[arg(long, default_value_t = 0.005)]
        sigma: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// A single replay file of one pose or motion template.
    Stream {
        #[arg(long)]
        out: PathBuf,
        /// Pose name (e.g. `open_palm`) or template (e.g. `swipe_up`).
        #[arg(long)]
        gesture: String,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 0.005)]
        sigma: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Serve(args) => serve(args),
        Command::TrainStatic(args) => cmd_train_static(args),
        Command::TrainDynamic(args) => cmd_train_dynamic(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Record(args) => cmd_record(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Synth(cmd) => cmd_synth(cmd),
    }
}

fn serve(args: ServeArgs) -> Result<()> {
    let home = HomeLayout::new(gestop_home());
    let mut cfg = DaemonConfig::from_home(&home.root);
    cfg.ingress_addr = SocketAddr::from((args.bind, args.ingress_port));
    cfg.control_addr = SocketAddr::from((args.bind, args.control_port));
    cfg.static_model = args.static_model.unwrap_or(cfg.static_model);
    cfg.dynamic_model = args.dynamic_model.unwrap_or(cfg.dynamic_model);
    cfg.mapping = args.mapping.unwrap_or(cfg.mapping);
    cfg.dispatch_log = Some(args.dispatch_log.unwrap_or_else(|| home.dispatch_log()));
    cfg.data_dir = args.data_dir.unwrap_or(cfg.data_dir);
    cfg.none_scale = (args.none_scale != 1.0).then_some(args.none_scale);
    cfg.recognizer = RecognizerConfig {
        stability_frames: args.stability_frames,
        min_segment_frames: args.min_segment_frames,
        ..RecognizerConfig::default()
    };
    cfg.training = args.train.options();
    if let Some(log) = &cfg.dispatch_log {
        if let Some(parent) = log.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
    }

    let sink = Arc::new(LoggingSink::new().without_cursor_history());
    let daemon = DaemonHandle::start(cfg, sink)?;
    println!(
        "gestop serving: ingress {} control http://{}",
        daemon.ingress_addr(),
        daemon.control_addr()
    );
    daemon.wait_for_signal();
    daemon.shutdown()?;
    log::info!("stopped cleanly");
    Ok(())
}

fn report_training(
    out: &Path,
    metrics: &Path,
    train_size: usize,
    val_size: usize,
    val: Option<f64>,
) {
    println!("model: {}", out.display());
    println!("metrics: {}", metrics.display());
    println!("samples: {train_size} train / {val_size} val");
    match val {
        Some(acc) => println!("val_accuracy: {acc:.4}"),
        None => println!("val_accuracy: n/a"),
    }
}

fn log_epoch(m: &EpochMetrics) {
    match m.val_accuracy {
        Some(acc) => log::info!("epoch {} loss {:.5} val {acc:.4}", m.epoch, m.loss),
        None => log::info!("epoch {} loss {:.5}", m.epoch, m.loss),
    }
}

/// Creates the parent directory of an output file.
fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn cmd_train_static(args: TrainArgs) -> Result<()> {
    let samples =
        read_static_csv(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let trained = train_static(&samples, &args.train.options(), log_epoch)?;
    let metrics = save_trained(&trained, &args.out)?;
    report_training(
        &args.out,
        &metrics,
        trained.train_size,
        trained.val_size,
        trained.val_accuracy(),
    );
    Ok(())
}

fn cmd_train_dynamic(args: TrainArgs) -> Result<()> {
    let samples =
        load_dynamic(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let trained = train_dynamic(&samples, &args.train.options(), log_epoch)?;
    let metrics = save_trained(&trained, &args.out)?;
    report_training(
        &args.out,
        &metrics,
        trained.train_size,
        trained.val_size,
        trained.val_accuracy(),
    );
    Ok(())
}

fn pick<T: Clone>(samples: Vec<(T, String)>, args: &EvalArgs) -> Result<Vec<(T, String)>> {
    Ok(match args.split {
        SplitPart::All => samples,
        SplitPart::Train => split(&samples, args.val_fraction, args.seed)?.0,
        SplitPart::Val => split(&samples, args.val_fraction, args.seed)?.1,
    })
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let header =
        peek_header(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    // Static models also report the other calibration setting, so both
    // numbers are visible without a second run.
    let mut extra = None;
    let cm = if header.arch == StaticNet::ARCH {
        let model: Model<StaticNet> = load_model(&args.model)?;
        let samples = pick(read_static_csv(&args.data)?, &args)?;
        let feats = static_features(&samples);
        let xs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let truths: Vec<&str> = samples.iter().map(|(_, l)| l.as_str()).collect();
        let k = args.none_scale.unwrap_or(DEFAULT_NONE_SCALE);
        let cal = model
            .index_of(gestop_core::model::NONE_LABEL)
            .and_then(|i| CalibrationConfig::new(i, k))
            .context("calibration needs a 'none' class and k >= 1")?;
        let calibrated = gestop_core::datasets::evaluate(&model, &xs, &truths, Some(&cal))?;
        let plain = gestop_core::datasets::evaluate(&model, &xs, &truths, None)?;
        if args.none_scale.is_some() {
            extra = Some(format!("uncalibrated accuracy: {:.4}", plain.accuracy()));
            calibrated
        } else {
            extra = Some(format!(
                "calibrated accuracy (k={k}): {:.4}",
                calibrated.accuracy()
            ));
            plain
        }
    } else if header.arch == DynamicNet::ARCH {
        let model: Model<DynamicNet> = load_model(&args.model)?;
        let samples = pick(load_dynamic(&args.data)?, &args)?;
        let feats = dynamic_feature_set(&samples)?;
        let xs: Vec<_> = feats.iter().collect();
        let truths: Vec<&str> = samples.iter().map(|(_, l)| l.as_str()).collect();
        gestop_core::datasets::evaluate(&model, &xs, &truths, None)?
    } else {
        bail!("unknown model architecture '{}'", header.arch);
    };
    println!(
        "accuracy: {:.4} ({} of {})",
        cm.accuracy(),
        cm.trace(),
        cm.total()
    );
    if let Some(line) = extra {
        println!("{line}");
    }
    match &args.confusion {
        Some(path) => {
            std::fs::write(path, cm.to_csv())?;
            println!("confusion matrix: {}", path.display());
        }
        None => print!("{}", cm.to_csv()),
    }
    Ok(())
}

/// Frames from live ingress until `limit` arrive or the stream goes idle.
fn live_frames(port: u16, limit: Option<usize>, idle: Duration) -> Result<Vec<KeypointFrame>> {
    let (mut ingress, rx) = Ingress::bind((Ipv4Addr::LOCALHOST, port))?;
    println!("waiting for frames on {}", ingress.local_addr());
    let mut frames = Vec::new();
    let mut last = None::<Instant>;
    loop {
        if limit.is_some_and(|n| frames.len() >= n) {
            break;
        }
        match rx.recv_timeout(Duration::from_millis(100)) {
            Ok(f) => {
                frames.push(f);
                last = Some(Instant::now());
            }
            Err(RecvTimeoutError::Timeout) => {
                if last.is_some_and(|t| t.elapsed() >= idle) {
                    break;
                }
            }
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    ingress.shutdown();
    Ok(frames)
}

fn cmd_record(args: RecordArgs) -> Result<()> {
    if args.label.trim().is_empty() {
        bail!("label must not be empty");
    }
    let frames = match &args.from_file {
        Some(path) => {
            ReplayFile::read(path)
                .with_context(|| format!("reading {}", path.display()))?
                .frames
        }
        None => live_frames(
            args.ingress_port,
            args.n,
            Duration::from_secs_f64(args.idle_secs),
        )?,
    };
    match args.kind {
        Kind::Static => {
            let n = args.n.unwrap_or(frames.len());
            let written = record_static(&args.out, &args.label, frames, n)?;
            println!(
                "appended {written} '{}' rows to {}",
                args.label,
                args.out.display()
            );
        }
        Kind::Dynamic => {
            let files = record_dynamic(&args.out, &args.label, frames, args.min_segment_frames)?;
            println!(
                "stored {} '{}' sequences under {}",
                files.len(),
                args.label,
                args.out.display()
            );
        }
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let file =
        ReplayFile::read(&args.file).with_context(|| format!("reading {}", args.file.display()))?;
    let addr = format!("{}:{}", args.host, args.port);
    let start = Instant::now();
    let sent = send_replay(addr.as_str(), &file, args.speed)?;
    println!(
        "sent {sent} frames to {addr} in {:.3}s",
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_synth(cmd: SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Static {
            out,
            per_class,
            sigma,
            seed,
        } => {
            let data = synth::static_dataset(per_class, sigma, seed)?;
            ensure_parent(&out)?;
            write_static_csv(&out, &data).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} rows to {}", data.len(), out.display());
        }
        SynthCommand::Dynamic {
            out,
            per_class,
            min_len,
            max_len,
            sigma,
            seed,
        } => {
            if min_len == 0 || min_len > max_len {
                bail!("need 1 <= min-len <= max-len");
            }
            let data = synth::dynamic_dataset(per_class, min_len..=max_len, sigma, seed)?;
            for (frames, label) in &data {
                save_sequence(&out, label, frames)
                    .with_context(|| format!("writing under {}", out.display()))?;
            }
            println!("wrote {} sequences under {}", data.len(), out.display());
        }
        SynthCommand::Stream {
            out,
            gesture,
            frames,
            sigma,
            seed,
        } => {
            let file = if synth::TEMPLATES.contains(&gesture.as_str()) {
                synth::synth_dynamic(&gesture, frames, sigma, seed)?
            } else {
                synth::synth_static(&gesture, frames, sigma, seed)?
            };
            ensure_parent(&out)?;
            file.save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} frames to {}", file.len(), out.display());
        }
    }
    Ok(())
}
