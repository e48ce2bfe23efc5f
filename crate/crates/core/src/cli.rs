//! The `rfscope` command line.
//!
//! Exit codes: 0 success, 1 I/O, 2 usage or invalid configuration,
//! 3 weights or checksum, 4 numeric or shape error.

use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backproject::{
    backproject, backproject_many, sweep, Position, SparseSeed, UnpoolMode, DEFAULT_SWEEP,
};
use crate::error::Error;
use crate::nn::{forward, vgg19_plan, Architecture, Layer, LayerPlan, NetworkSpec, DEFAULT_RESOLUTION};
use crate::tensor::Tensor;
use crate::validation::{report_csv, validate, PatternInput};
use crate::viz::{self, Normalization};
use crate::weights;

pub const THREADS_ENV: &str = "RFSCOPE_THREADS";

pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_WEIGHTS: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Weights(_) => EXIT_WEIGHTS,
            Error::Io { .. } => EXIT_IO,
            _ => EXIT_NUMERIC,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "rfscope", version, about = "Visualize what deep CNN neurons respond to")]
pub struct Cli {
    /// Worker threads (default: all cores, or $RFSCOPE_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the architecture, per-layer shapes and payload checksum.
    Info(InfoArgs),
    /// Back-project a range of channels and write a pattern grid.
    Visualize(VisualizeArgs),
    /// Back-project one neuron for several clamp constants.
    Sweep(SweepArgs),
    /// Feed a pattern forward and report per-channel pooled sums as CSV.
    Validate(ValidateArgs),
    /// Write a random network in manifest + payload form.
    InitWeights(InitArgs),
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    /// Weight manifest; the payload defaults to the same path with `.bin`.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub payload: Option<PathBuf>,
}

impl WeightsArgs {
    fn load(&self) -> CliResult<NetworkSpec> {
        let payload = self
            .payload
            .clone()
            .unwrap_or_else(|| weights::payload_path_for(&self.weights));
        weights::load(&self.weights, &payload).map_err(|e| CliError {
            code: EXIT_WEIGHTS,
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    #[command(flatten)]
    pub weights: WeightsArgs,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Repeat,
    Index,
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    #[command(flatten)]
    pub weights: WeightsArgs,
    /// Pooling checkpoint, e.g. `pool5`.
    #[arg(long)]
    pub layer: String,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    pub resolution: usize,
    /// Seed position `row,col` in the pooled map (default: center).
    #[arg(long)]
    pub position: Option<PositionArg>,
    #[arg(long, value_enum, default_value_t = ModeArg::Repeat)]
    pub mode: ModeArg,
    /// Input image (PPM) for `--mode index`; its size sets the resolution.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[command(flatten)]
    pub seed: SeedArgs,
    /// Half-open channel range `a..b` or a single channel.
    #[arg(long)]
    pub channels: Option<ChannelRange>,
    #[arg(long, default_value_t = 1.0)]
    pub c: f32,
    /// Also write one image per channel.
    #[arg(long)]
    pub per_channel: bool,
    /// Normalize all tiles with one shared min/max.
    #[arg(long)]
    pub global_norm: bool,
    #[arg(long, default_value_t = viz::DEFAULT_PADDING)]
    pub padding: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
    /// Comma-separated positive ascending constants.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP.to_vec())]
    pub c: Vec<f32>,
    /// Also write each unnormalized panel as an RFT1 tensor file.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long)]
    pub channel: usize,
    /// Pattern to feed (RFT1, PGM or PPM). Generated from the seed if absent.
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub c: f32,
    /// Feed the display-normalized pattern stretched to [0, 255].
    #[arg(long)]
    pub normalized_input: bool,
    /// Report path (default: `<out>/<layer>_ch<k>_activation.csv`).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Vgg19,
    Toy,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long, value_enum, default_value_t = ArchArg::Vgg19)]
    pub arch: ArchArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest path to write; the payload goes next to it as `.bin`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelRange(pub Range<usize>);

impl FromStr for ChannelRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad channel `{v}`: {e}"))
        };
        let range = match s.split_once("..") {
            Some((a, b)) => parse(a)?..parse(b)?,
            None => {
                let k = parse(s)?;
                k..k + 1
            }
        };
        if range.is_empty() {
            return Err(format!("empty channel range `{s}`"));
        }
        Ok(ChannelRange(range))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionArg(pub usize, pub usize);

impl FromStr for PositionArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (r, c) = s
            .split_once(',')
            .ok_or_else(|| format!("position must be `row,col`, got `{s}`"))?;
        let p = |v: &str| v.trim().parse::<usize>().map_err(|e| e.to_string());
        Ok(PositionArg(p(r)?, p(c)?))
    }
}

/// Resolved, validated inputs shared by the seed-based commands.
struct SeedContext {
    net: NetworkSpec,
    layer: String,
    resolution: usize,
    position: Position,
    image: Option<Tensor>,
    out: PathBuf,
}

impl SeedContext {
    /// Loads weights, then checks every option, reporting all problems at once.
    fn resolve(args: &SeedArgs, problems: &mut Vec<String>) -> CliResult<Self> {
        let net = args.weights.load()?;
        let mut resolution = args.resolution;
        let image = match (args.mode, &args.image) {
            (ModeArg::Index, None) => {
                problems.push("--mode index requires --image".into());
                None
            }
            (ModeArg::Index, Some(path)) => match viz::read_image(path) {
                Ok(img) => {
                    resolution = img.height();
                    Some(img)
                }
                Err(e) => {
                    problems.push(format!("cannot read --image: {e}"));
                    None
                }
            },
            (ModeArg::Repeat, Some(_)) => {
                problems.push("--image is only used with --mode index".into());
                None
            }
            (ModeArg::Repeat, None) => None,
        };
        match net.pooled_shape(&args.layer, resolution) {
            Ok(shape) => {
                if let Some(PositionArg(r, c)) = args.position {
                    if r >= shape.height || c >= shape.width {
                        problems.push(format!(
                            "--position {r},{c} outside the {}x{} map of {}",
                            shape.height, shape.width, args.layer
                        ));
                    }
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
        if args.out.exists() && !args.out.is_dir() {
            problems.push(format!("--out {} is not a directory", args.out.display()));
        }
        Ok(SeedContext {
            net,
            layer: args.layer.clone(),
            resolution,
            position: args
                .position
                .map(|PositionArg(row, col)| Position::At { row, col })
                .unwrap_or_default(),
            image,
            out: args.out.clone(),
        })
    }

    fn layer_channels(&self) -> Option<usize> {
        self.net
            .pooled_shape(&self.layer, self.resolution)
            .ok()
            .map(|s| s.channels)
    }

    fn seed(&self, channel: usize, c: f32) -> SparseSeed {
        SparseSeed {
            pool_layer: self.layer.clone(),
            channel,
            position: self.position,
            c,
        }
    }

    fn with_mode<T>(&self, f: impl FnOnce(UnpoolMode<'_>) -> crate::Result<T>) -> CliResult<T> {
        match &self.image {
            Some(img) => {
                let trace = forward(&self.net, img, &self.layer)?;
                Ok(f(UnpoolMode::Index(&trace))?)
            }
            None => Ok(f(UnpoolMode::Repeat)?),
        }
    }

    fn create_out(&self) -> CliResult<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e).into())
    }
}

fn check_problems(problems: Vec<String>) -> CliResult<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        let mut msg = String::from("invalid configuration:");
        for p in problems {
            msg.push_str("\n  - ");
            msg.push_str(&p);
        }
        Err(CliError::usage(msg))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn write_image(path: &Path, t: &Tensor) -> CliResult<()> {
    Ok(viz::write_image(t, path)?)
}

/// Grid geometry for `n` tiles: at most 8 columns, at most 64 tiles.
pub fn grid_dims(n: usize) -> (usize, usize) {
    let (rows, cols) = viz::DEFAULT_GRID;
    let n = n.min(rows * cols);
    let c = n.min(cols);
    (n.div_ceil(c), c)
}

pub fn run(cli: Cli) -> CliResult<Vec<String>> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Info(a) => cmd_info(&a),
        Command::Visualize(a) => cmd_visualize(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::InitWeights(a) => cmd_init(&a),
    }
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if v.trim() == "auto" || v.trim().is_empty() => None,
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                CliError::usage(format!("{THREADS_ENV} must be a number or `auto`, got `{v}`"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        // Fails only if a pool already exists, e.g. when called twice in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn cmd_info(args: &InfoArgs) -> CliResult<Vec<String>> {
    let net = args.weights.load()?;
    let payload = args
        .weights
        .payload
        .clone()
        .unwrap_or_else(|| weights::payload_path_for(&args.weights.weights));
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let convs: Vec<_> = net.convs().collect();
    let pools = net.checkpoints().count();
    let mut lines = vec![
        format!("architecture: {}", net.architecture().tag()),
        format!("payload: {} ({} bytes)", payload.display(), bytes.len()),
        format!("sha256: {}", weights::sha256_hex(&bytes)),
        format!("convs: {}", convs.len()),
        format!("pools: {pools}"),
        format!(
            "channels: {}",
            std::iter::once(crate::nn::INPUT_CHANNELS)
                .chain(convs.iter().map(|c| c.out_channels))
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join("->")
        ),
        format!("layers at {}x{}:", args.resolution, args.resolution),
    ];
    for (idx, layer) in net.layers().iter().enumerate() {
        let shape = net
            .shape_at(idx, args.resolution)
            .map(|s| s.to_string())
            .unwrap_or_else(|_| "(resolution not divisible)".into());
        let kind = match layer {
            Layer::Conv(c) => format!("conv {}->{}", c.in_channels, c.out_channels),
            Layer::Relu { .. } => "relu".into(),
            Layer::Pool(_) => "maxpool 2x2".into(),
        };
        lines.push(format!("  {:<8} {:<14} {shape}", layer.name(), kind));
    }
    Ok(lines)
}

pub fn cmd_visualize(args: &VisualizeArgs) -> CliResult<Vec<String>> {
    let mut problems = Vec::new();
    let ctx = SeedContext::resolve(&args.seed, &mut problems)?;
    let width = ctx.layer_channels();
    let channels = args
        .channels
        .clone()
        .map(|r| r.0)
        .unwrap_or(0..width.unwrap_or(0).min(64));
    if let Some(width) = width {
        if channels.end > width {
            problems.push(format!(
                "--channels {}..{} exceeds the {width} channels of {}",
                channels.start, channels.end, ctx.layer
            ));
        }
    }
    if !(args.c.is_finite() && args.c > 0.0) {
        problems.push(format!("--c must be > 0, got {}", args.c));
    }
    check_problems(problems)?;

    let seeds: Vec<_> = channels.clone().map(|ch| ctx.seed(ch, args.c)).collect();
    let patterns = ctx.with_mode(|mode| backproject_many(&ctx.net, &seeds, mode, ctx.resolution))?;
    let norm = if args.global_norm {
        Normalization::Global
    } else {
        Normalization::PerTile
    };
    let (rows, cols) = grid_dims(patterns.len());
    let shown = &patterns[..patterns.len().min(rows * cols)];
    let grid = viz::pattern_grid(shown, rows, cols, args.padding, norm)?;

    ctx.create_out()?;
    let grid_path = ctx.out.join(format!("{}_grid.ppm", ctx.layer));
    write_image(&grid_path, &grid)?;
    let mut lines = vec![format!(
        "{}: channels {}..{} -> {}x{} grid {}",
        ctx.layer,
        channels.start,
        channels.end,
        rows,
        cols,
        grid_path.display()
    )];
    if args.per_channel {
        for (ch, tile) in channels.zip(viz::normalize_all(&patterns, norm)) {
            let path = ctx.out.join(format!("{}_ch{ch}.ppm", ctx.layer));
            write_image(&path, &tile)?;
        }
        lines.push(format!("wrote {} per-channel images", patterns.len()));
    }
    Ok(lines)
}

fn fmt_c(c: f32) -> String {
    format!("{c:?}")
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<Vec<String>> {
    let mut problems = Vec::new();
    let ctx = SeedContext::resolve(&args.seed, &mut problems)?;
    if let Some(width) = ctx.layer_channels() {
        if args.channel >= width {
            problems.push(format!(
                "--channel {} exceeds the {width} channels of {}",
                args.channel, ctx.layer
            ));
        }
    }
    if args.c.is_empty() {
        problems.push("--c needs at least one value".into());
    }
    if let Some(c) = args.c.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        problems.push(format!("--c values must be > 0, got {c}"));
    }
    if args.c.windows(2).any(|w| w[1] <= w[0]) {
        problems.push("--c values must be strictly ascending".into());
    }
    check_problems(problems)?;

    let template = ctx.seed(args.channel, 1.0);
    let panels = ctx.with_mode(|mode| sweep(&ctx.net, &template, &args.c, mode, ctx.resolution))?;
    ctx.create_out()?;
    let stem = format!("{}_ch{}", ctx.layer, args.channel);
    let normalized = viz::normalize_all(&panels, Normalization::PerTile);
    for ((c, raw), norm) in args.c.iter().zip(&panels).zip(&normalized) {
        write_image(&ctx.out.join(format!("{stem}_c{}.ppm", fmt_c(*c))), norm)?;
        if args.raw {
            write_file(
                &ctx.out.join(format!("{stem}_c{}.rft", fmt_c(*c))),
                &viz::to_raw_bytes(raw),
            )?;
        }
    }
    let cols = panels.len().min(3);
    let rows = panels.len().div_ceil(cols);
    let sheet = viz::montage(&normalized, rows, cols, viz::DEFAULT_PADDING)?;
    let sheet_path = ctx.out.join(format!("{stem}_sweep.ppm"));
    write_image(&sheet_path, &sheet)?;
    Ok(vec![format!(
        "{} panels ({rows}x{cols}) -> {}",
        panels.len(),
        sheet_path.display()
    )])
}

pub fn cmd_validate(args: &ValidateArgs) -> CliResult<Vec<String>> {
    let mut problems = Vec::new();
    let ctx = SeedContext::resolve(&args.seed, &mut problems)?;
    if let Some(width) = ctx.layer_channels() {
        if args.channel >= width {
            problems.push(format!(
                "--channel {} exceeds the {width} channels of {}",
                args.channel, ctx.layer
            ));
        }
    }
    if !(args.c.is_finite() && args.c > 0.0) {
        problems.push(format!("--c must be > 0, got {}", args.c));
    }
    let pattern = match &args.pattern {
        Some(path) => match viz::read_pattern(path) {
            Ok(p) => Some(p),
            Err(e) => {
                return Err(CliError {
                    code: if matches!(e, Error::Io { .. }) { EXIT_IO } else { EXIT_NUMERIC },
                    message: format!("cannot read --pattern: {e}"),
                })
            }
        },
        None => None,
    };
    check_problems(problems)?;

    let pattern = match pattern {
        Some(p) => p,
        None => {
            let seed = ctx.seed(args.channel, args.c);
            ctx.with_mode(|mode| backproject(&ctx.net, &seed, mode, ctx.resolution))?
        }
    };
    let input = if args.normalized_input {
        PatternInput::Normalized
    } else {
        PatternInput::Raw
    };
    let report = validate(&ctx.net, &pattern, &ctx.layer, args.channel, input)?;
    let csv_path = args.csv.clone().unwrap_or_else(|| {
        ctx.out
            .join(format!("{}_ch{}_activation.csv", ctx.layer, args.channel))
    });
    if let Some(parent) = csv_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_file(&csv_path, &report_csv(&report))?;
    Ok(vec![report.summary(), format!("report: {}", csv_path.display())])
}

/// Toy topology used by the shipped fixture: two blocks, 3 -> 4 -> 4 channels.
pub fn toy_plan() -> Vec<LayerPlan> {
    let conv = |name: &str, i, o| LayerPlan::Conv {
        name: name.into(),
        in_channels: i,
        out_channels: o,
    };
    vec![
        conv("conv1_1", 3, 4),
        LayerPlan::Relu("relu1_1".into()),
        LayerPlan::Pool("pool1".into()),
        conv("conv2_1", 4, 4),
        LayerPlan::Relu("relu2_1".into()),
        LayerPlan::Pool("pool2".into()),
    ]
}

/// Deterministic toy weights: a positive center tap on each channel's
/// "own" input plus small seeded perturbations, zero bias.
pub fn toy_network(seed: u64) -> crate::Result<NetworkSpec> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    NetworkSpec::from_plan(Architecture::Custom, &toy_plan(), |_, i, o| {
        let mut w: Vec<f32> = (0..o * i * 9).map(|_| rng.gen_range(-0.1..0.1)).collect();
        for oc in 0..o {
            w[(oc * i + oc % i) * 9 + 4] = 1.0;
        }
        (w, vec![0.0; o])
    })
}

pub fn cmd_init(args: &InitArgs) -> CliResult<Vec<String>> {
    let net = match args.arch {
        ArchArg::Vgg19 => NetworkSpec::random(Architecture::Vgg19Encoder, &vgg19_plan(), args.seed)?,
        ArchArg::Toy => toy_network(args.seed)?,
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let payload = weights::payload_path_for(&args.out);
    let manifest = weights::save(&net, &args.out, &payload)?;
    Ok(vec![
        format!("wrote {} and {}", args.out.display(), payload.display()),
        format!("sha256: {}", manifest.payload_sha256),
    ])
}
