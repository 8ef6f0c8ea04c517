//! Command-line front end. Every subcommand prints a one-line JSON summary
//! on stdout and logs to stderr. Exit codes: 0 success, 1 usage, 2 data,
//! 3 numerical.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use kvlad_core::codebook::ImplicitCodebook;
use kvlad_core::data::{gen_euclidean, gen_grassmann, gen_spd, Dataset, Split};
use kvlad_core::encode::nystrom::EIGEN_FLOOR;
use kvlad_core::encode::{
    kvlad_cross_gram, kvlad_gram, subspace_fit, FeatureMap, Normalization, SubspaceProjector,
};
use kvlad_core::eval::{
    accuracy, cv_bandwidth, kridge_predict, kridge_train, ridge_predict, ridge_train,
    DEFAULT_FOLDS, DEFAULT_LAMBDA,
};
use kvlad_core::geometry::{CrossGram, Geometry, GeometryKind, GramMatrix, KernelFamily};
use kvlad_core::linalg::Matrix;
use kvlad_core::pipeline::{
    default_codebook_size, default_family, fit_encoder, geometry_kind_name, EncoderKind,
    PipelineConfig, TrainedEncoder, DEFAULT_MAX_TRAIN,
};

use crate::bench;
use crate::config::Config;
use crate::export::{codes_csv, gram_csv};
use crate::format::{
    self, peek_magic, read_codebook, read_codes, read_dataset, read_gram, read_map, read_model,
    write_atomic, write_codebook, write_codes, write_dataset, write_gram, write_map, write_model,
    CodeEntry, CodebookFile, CodesFile, FormatError, GramFile, MapFile, ModelFile, SetCollection,
};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }

    fn context(self, what: &str) -> CliError {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{what}: {m}")),
        }
    }
}

impl From<kvlad_core::Error> for CliError {
    fn from(e: kvlad_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else if matches!(e, kvlad_core::Error::InvalidParameter { .. }) {
            CliError::Usage(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Core(c) => c.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn in_file<T>(path: &Path, r: Result<T, FormatError>) -> CliResult<T> {
    r.map_err(|e| match e {
        FormatError::Io { .. } => CliError::from(e),
        other => CliError::from(other).context(&path.display().to_string()),
    })
}

#[derive(Debug, Parser)]
#[command(name = "kvlad", version, about = "Kernelized VLAD encoding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset (writes <out>.train.kvld and <out>.test.kvld)
    Gen(GenArgs),
    /// Learn a codebook (and feature map or subspace projector)
    Codebook(CodebookArgs),
    /// Encode descriptor sets into explicit codes
    Encode(EncodeArgs),
    /// Compute a Gram matrix of kVLAD inner products or code dot products
    Gram(GramArgs),
    /// Train a ridge or kernel ridge classifier
    Classify(ClassifyArgs),
    /// Evaluate a trained classifier
    Eval(EvalArgs),
    /// Time encoders on fitted artifacts
    Bench(BenchArgs),
    /// Export a Gram or codes file as CSV
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// euclidean, spd or grassmann
    #[arg(long)]
    geometry: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    sets_per_class: Option<usize>,
    #[arg(long)]
    per_set: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Component separation (Euclidean)
    #[arg(long)]
    separation: Option<f64>,
    /// Perturbation scale (Grassmann)
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CodebookArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// kmeans or kernel-kmeans
    #[arg(long)]
    method: Option<String>,
    /// Encoder the codebook is for: vlad, le-vlad, kvlad, nvlad, svlad, fvlad
    #[arg(long)]
    encoder: Option<String>,
    /// rbf, linear, stein or projection
    #[arg(long)]
    kernel: Option<String>,
    /// Bandwidth, or `cv` to cross-validate over --grid (a default grid is used without it)
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// nystrom or fourier
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    map_out: Option<PathBuf>,
    #[arg(long)]
    max_train: Option<usize>,
    /// Normalization used while cross-validating
    #[arg(long)]
    norm: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    codebook: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<String>,
    /// Feature map or subspace projector (defaults to <codebook>.map)
    #[arg(long)]
    map: Option<PathBuf>,
    /// Subspace rank when no projector file is given
    #[arg(long)]
    r: Option<usize>,
    /// Comma-separated subset of intra,ssr,global, or none
    #[arg(long)]
    norm: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GramArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset (kVLAD through an implicit codebook) or codes file
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// Block-normalized kVLAD inner products
    #[arg(long)]
    normalized: bool,
    /// Column items; produces a rectangular Gram with --in as rows
    #[arg(long)]
    against: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    codes: Option<PathBuf>,
    #[arg(long)]
    gram: Option<PathBuf>,
    /// Dataset or codes file providing the label of every Gram item
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    codes: Option<PathBuf>,
    #[arg(long)]
    gram: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. The summary goes to `out`, diagnostics to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Codebook(a) => cmd_codebook(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Gram(a) => cmd_gram(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(lines) => {
            for line in lines {
                if writeln!(out, "{line}").is_err() {
                    return 2;
                }
            }
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn read_config(path: &Path) -> CliResult<Config> {
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "{}: config file not found",
            path.display()
        )));
    }
    Config::load(path).map_err(CliError::Usage)
}

fn load_config(path: &Option<PathBuf>) -> CliResult<Config> {
    match path {
        Some(p) => read_config(p),
        None => Ok(Config::default()),
    }
}

fn pick<T: std::str::FromStr>(cfg: &Config, flag: Option<T>, key: &str) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    cfg.pick(flag, key).map_err(CliError::Usage)
}

fn require<T>(v: Option<T>, key: &str) -> CliResult<T> {
    v.ok_or_else(|| {
        usage(format!(
            "missing required `--{key}` (flag or config key `{key}`)"
        ))
    })
}

pub(crate) fn parse_norm(s: &str) -> CliResult<Normalization> {
    let mut n = Normalization::NONE;
    if s.trim() == "none" || s.trim().is_empty() {
        return Ok(n);
    }
    for part in s.split(',') {
        match part.trim() {
            "intra" => n.intra = true,
            "ssr" => n.ssr = true,
            "global" => n.global = true,
            other => {
                return Err(usage(format!(
                    "norm: unknown step `{other}` (expected intra, ssr, global or none)"
                )))
            }
        }
    }
    Ok(n)
}

pub(crate) fn parse_encoder(s: &str) -> CliResult<EncoderKind> {
    s.parse()
        .map_err(|e: String| usage(format!("encoder: {e}")))
}

fn parse_family(s: &str, g: Geometry) -> CliResult<KernelFamily> {
    let family = match s {
        "rbf" => KernelFamily::EuclideanRbf,
        "linear" => KernelFamily::Linear,
        "stein" => KernelFamily::Stein,
        "projection" => KernelFamily::ProjectionRbf,
        other => {
            return Err(usage(format!(
                "kernel: unknown family `{other}` (expected rbf, linear, stein or projection)"
            )))
        }
    };
    if family.geometry_kind() != g.kind {
        return Err(usage(format!(
            "kernel: `{s}` does not act on {} descriptors",
            geometry_kind_name(g.kind)
        )));
    }
    Ok(family)
}

fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let grid = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| usage(format!("grid: invalid value `{v}`: {e}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if grid.is_empty() {
        return Err(usage("grid: must not be empty"));
    }
    Ok(grid)
}

/// Bandwidth used when none is given. Stein picks `(n-1)/2`, the smallest
/// value of the continuous positive definite range.
fn default_sigma(g: Geometry) -> f64 {
    match g.kind {
        GeometryKind::Spd => ((g.dim as f64 - 1.0) / 2.0).max(0.5),
        _ => 1.0,
    }
}

/// CV grid used without `--grid`. The Stein grid starts at `(n-1)/2` so
/// every candidate is positive definite.
fn default_grid(g: Geometry, family: KernelFamily) -> Vec<f64> {
    let base = match family {
        KernelFamily::Stein => default_sigma(g),
        _ => 1.0,
    };
    let factors: &[f64] = match family {
        KernelFamily::Stein => &[1.0, 1.5, 2.0, 3.0, 4.0],
        _ => &[0.25, 0.5, 1.0, 2.0, 4.0],
    };
    factors.iter().map(|f| base * f).collect()
}

pub(crate) fn check_encoder_geometry(e: EncoderKind, g: Geometry) -> CliResult<()> {
    e.check_geometry(g.kind).map_err(|_| {
        let why = match e {
            EncoderKind::FVlad => "fvlad only applies to Euclidean data",
            EncoderKind::Vlad => "vlad needs Euclidean data (use le-vlad for SPD)",
            EncoderKind::LeVlad => "le-vlad needs SPD data",
            _ => "incompatible geometry",
        };
        usage(format!(
            "encoder `{}` is incompatible with {} input: {why}",
            e.name(),
            geometry_kind_name(g.kind)
        ))
    })
}

fn summary(v: Value) -> CliResult<Vec<String>> {
    Ok(vec![v.to_string()])
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_gen(a: GenArgs) -> CliResult<Vec<String>> {
    let cfg = load_config(&a.config)?;
    let geometry: String = require(pick(&cfg, a.geometry, "geometry")?, "geometry")?;
    let classes = pick(&cfg, a.classes, "classes")?.unwrap_or(3);
    let spc = pick(&cfg, a.sets_per_class, "sets-per-class")?.unwrap_or(10);
    let seed = pick(&cfg, a.seed, "seed")?.unwrap_or(0);
    let out: PathBuf = require(pick(&cfg, a.out, "out")?, "out")?;
    let d = pick(&cfg, a.d, "d")?;
    let per_set = pick(&cfg, a.per_set, "per-set")?;
    let ds: Dataset = match geometry.as_str() {
        "euclidean" => {
            let sep = pick(&cfg, a.separation, "separation")?.unwrap_or(4.0);
            gen_euclidean(
                classes,
                spc,
                per_set.unwrap_or(1000),
                d.unwrap_or(16),
                sep,
                seed,
            )?
        }
        "spd" => gen_spd(classes, spc, per_set.unwrap_or(100), d.unwrap_or(5), seed)?,
        "grassmann" => {
            let p = pick(&cfg, a.p, "p")?.unwrap_or(3);
            let noise = pick(&cfg, a.noise, "noise")?.unwrap_or(0.3);
            gen_grassmann(
                classes,
                spc,
                per_set.unwrap_or(20),
                d.unwrap_or(31),
                p,
                noise,
                seed,
            )?
        }
        other => {
            return Err(usage(format!(
                "geometry: unknown `{other}` (expected euclidean, spd or grassmann)"
            )))
        }
    };
    let base = out.with_extension("");
    let base = if out.extension().is_some_and(|e| e == "kvld") {
        base
    } else {
        out.clone()
    };
    let train_path = with_suffix(&base, ".train.kvld");
    let test_path = with_suffix(&base, ".test.kvld");
    let train = SetCollection::new(ds.geometry, ds.split(Split::Train))?;
    let test = SetCollection::new(ds.geometry, ds.split(Split::Test))?;
    write_dataset(&train_path, &train)?;
    write_dataset(&test_path, &test)?;
    let descriptors: usize = ds.sets.iter().map(|s| s.len()).sum();
    log::info!(
        "generated {} sets ({} train, {} test) in {}",
        ds.sets.len(),
        train.sets.len(),
        test.sets.len(),
        ds.geometry
    );
    summary(json!({
        "command": "gen",
        "geometry": ds.geometry.to_string(),
        "train": path_str(&train_path),
        "test": path_str(&test_path),
        "train_sets": train.sets.len(),
        "test_sets": test.sets.len(),
        "descriptors": descriptors,
        "seed": seed,
    }))
}

pub(crate) fn read_sets(path: &Path) -> CliResult<SetCollection> {
    let c = in_file(path, read_dataset(path))?;
    if c.sets.is_empty() {
        return Err(CliError::Data(format!(
            "{}: contains no sets",
            path.display()
        )));
    }
    Ok(c)
}

fn cmd_codebook(a: CodebookArgs) -> CliResult<Vec<String>> {
    let cfg = load_config(&a.config)?;
    let input: PathBuf = require(pick(&cfg, a.input, "in")?, "in")?;
    let out: PathBuf = require(pick(&cfg, a.out, "out")?, "out")?;
    let method: Option<String> = pick(&cfg, a.method, "method")?;
    let map_kind: Option<String> = pick(&cfg, a.map, "map")?;
    let encoder: Option<String> = pick(&cfg, a.encoder, "encoder")?;
    let data = read_sets(&input)?;
    let g = data.geometry;

    let encoder = match (encoder, map_kind.as_deref()) {
        (Some(e), _) => parse_encoder(&e)?,
        (None, Some("nystrom")) => EncoderKind::NVlad,
        (None, Some("fourier")) => EncoderKind::FVlad,
        (None, Some(other)) => {
            return Err(usage(format!(
                "map: unknown `{other}` (expected nystrom or fourier)"
            )))
        }
        (None, None) => match (method.as_deref(), g.kind) {
            (Some("kmeans") | None, GeometryKind::Euclidean) => EncoderKind::Vlad,
            (Some("kmeans"), GeometryKind::Spd) => EncoderKind::LeVlad,
            (Some("kmeans"), _) => {
                return Err(usage(
                    "method: kmeans needs Euclidean or SPD (log-Euclidean) input",
                ))
            }
            (Some("kernel-kmeans") | None, _) => EncoderKind::KVlad,
            (Some(other), _) => {
                return Err(usage(format!(
                    "method: unknown `{other}` (expected kmeans or kernel-kmeans)"
                )))
            }
        },
    };
    check_encoder_geometry(encoder, g)?;
    let implicit = matches!(encoder, EncoderKind::KVlad | EncoderKind::SVlad);
    match method.as_deref() {
        Some("kmeans") if implicit => {
            return Err(usage(format!(
                "method: encoder {encoder} needs kernel-kmeans"
            )))
        }
        Some("kernel-kmeans") if !implicit => {
            return Err(usage(format!("method: encoder {encoder} needs kmeans")))
        }
        Some("kmeans" | "kernel-kmeans") | None => {}
        Some(other) => {
            return Err(usage(format!(
                "method: unknown `{other}` (expected kmeans or kernel-kmeans)"
            )))
        }
    }
    match (encoder, map_kind.as_deref()) {
        (EncoderKind::NVlad, Some("fourier")) | (EncoderKind::FVlad, Some("nystrom")) => {
            return Err(usage(format!(
                "map: `{}` does not match encoder {encoder}",
                map_kind.unwrap_or_default()
            )))
        }
        (EncoderKind::NVlad | EncoderKind::FVlad, _) | (_, None) => {}
        (_, Some(_)) => {
            return Err(usage(format!(
                "map: encoder {encoder} takes no feature map"
            )))
        }
    }

    let mut pc = PipelineConfig::new(encoder, default_sigma(g), 0);
    pc.m = pick(&cfg, a.m, "m")?.unwrap_or(default_codebook_size(g.kind));
    pc.seed = pick(&cfg, a.seed, "seed")?.unwrap_or(0);
    pc.r = pick(&cfg, a.r, "r")?;
    pc.max_train_descriptors = pick(&cfg, a.max_train, "max-train")?.unwrap_or(DEFAULT_MAX_TRAIN);
    pc.lambda = pick(&cfg, a.lambda, "lambda")?.unwrap_or(DEFAULT_LAMBDA);
    if let Some(n) = pick::<String>(&cfg, a.norm, "norm")? {
        pc.norm = parse_norm(&n)?;
    }
    if let Some(k) = pick::<String>(&cfg, a.kernel, "kernel")? {
        if !encoder.uses_kernel() {
            return Err(usage(format!("kernel: encoder {encoder} uses no kernel")));
        }
        pc.family = Some(parse_family(&k, g)?);
    }
    let sigma: Option<String> = pick(&cfg, a.sigma, "sigma")?;
    let mut cv_grid = None;
    match sigma.as_deref() {
        Some("cv") => {
            let grid = match pick::<String>(&cfg, a.grid, "grid")? {
                Some(g) => parse_grid(&g)?,
                None => default_grid(g, pc.family.unwrap_or_else(|| default_family(g.kind))),
            };
            let folds = pick(&cfg, a.folds, "folds")?.unwrap_or(DEFAULT_FOLDS);
            pc.sigma = cv_bandwidth(&data.sets, &grid, folds, pc.seed, &pc)?;
            log::info!("cross-validated sigma = {}", pc.sigma);
            cv_grid = Some(grid);
        }
        Some(s) => {
            pc.sigma = s
                .parse()
                .map_err(|e| usage(format!("sigma: invalid value `{s}`: {e}")))?;
        }
        None => {}
    }
    if pc.m == 0 {
        return Err(usage("m: must be at least 1"));
    }

    let fitted = fit_encoder(&pc, &data.sets)?;
    let map_out = pick(&cfg, a.map_out, "map-out")?.unwrap_or_else(|| with_suffix(&out, ".map"));
    let mut written_map = None;
    let (m, kind) = match &fitted {
        TrainedEncoder::Vlad(cb) | TrainedEncoder::LeVlad(cb) => {
            write_codebook(&out, &CodebookFile::Explicit(cb.clone()))?;
            (cb.len(), "explicit")
        }
        TrainedEncoder::Mapped(map, cb) => {
            write_codebook(&out, &CodebookFile::Explicit(cb.clone()))?;
            write_map(&map_out, &MapFile::Feature(map.clone()))?;
            written_map = Some(map_out.clone());
            (cb.len(), "explicit")
        }
        TrainedEncoder::KVlad(cb) => {
            write_codebook(&out, &CodebookFile::Implicit(cb.clone()))?;
            (cb.len(), "implicit")
        }
        TrainedEncoder::SVlad(cb, proj) => {
            write_codebook(&out, &CodebookFile::Implicit(cb.clone()))?;
            write_map(&map_out, &MapFile::Subspace(proj.clone()))?;
            written_map = Some(map_out.clone());
            (cb.len(), "implicit")
        }
    };
    log::info!(
        "wrote {kind} codebook with {m} codewords to {}",
        out.display()
    );
    summary(json!({
        "command": "codebook",
        "encoder": encoder.name(),
        "kind": kind,
        "m": m,
        "sigma": if encoder.uses_kernel() { json!(pc.sigma) } else { Value::Null },
        "cv_grid": cv_grid,
        "out": path_str(&out),
        "map": written_map.map(|p| path_str(&p)),
        "seed": pc.seed,
    }))
}

fn load_map(path: &Path) -> CliResult<MapFile> {
    if !path.exists() {
        return Err(CliError::Data(format!(
            "{}: map file not found (pass --map)",
            path.display()
        )));
    }
    in_file(path, read_map(path))
}

/// Rebuilds the fitted encoder from files on disk.
pub(crate) fn load_encoder(
    encoder: EncoderKind,
    codebook: &Path,
    map: Option<PathBuf>,
    r: Option<usize>,
) -> CliResult<TrainedEncoder> {
    let cb = in_file(codebook, read_codebook(codebook))?;
    let map_path = map.unwrap_or_else(|| with_suffix(codebook, ".map"));
    let mismatch = |want: &str| {
        CliError::Data(format!(
            "{}: encoder {encoder} needs an {want} codebook",
            codebook.display()
        ))
    };
    Ok(match encoder {
        EncoderKind::Vlad | EncoderKind::LeVlad => match cb {
            CodebookFile::Explicit(cb) => {
                if encoder == EncoderKind::Vlad {
                    TrainedEncoder::Vlad(cb)
                } else {
                    TrainedEncoder::LeVlad(cb)
                }
            }
            CodebookFile::Implicit(_) => return Err(mismatch("explicit")),
        },
        EncoderKind::NVlad | EncoderKind::FVlad => {
            let CodebookFile::Explicit(cb) = cb else {
                return Err(mismatch("explicit"));
            };
            let map = match load_map(&map_path)? {
                MapFile::Feature(m) => m,
                MapFile::Subspace(_) => {
                    return Err(CliError::Data(format!(
                        "{}: holds a subspace projector, not a feature map",
                        map_path.display()
                    )))
                }
            };
            let matches = matches!(
                (&map, encoder),
                (FeatureMap::Nystrom(_), EncoderKind::NVlad)
                    | (FeatureMap::Fourier(_), EncoderKind::FVlad)
            );
            if !matches {
                return Err(CliError::Data(format!(
                    "{}: map type does not match encoder {encoder}",
                    map_path.display()
                )));
            }
            TrainedEncoder::Mapped(map, cb)
        }
        EncoderKind::KVlad => match cb {
            CodebookFile::Implicit(cb) => TrainedEncoder::KVlad(cb),
            CodebookFile::Explicit(_) => return Err(mismatch("implicit")),
        },
        EncoderKind::SVlad => {
            let CodebookFile::Implicit(cb) = cb else {
                return Err(mismatch("implicit"));
            };
            let proj: SubspaceProjector = if map_path.exists() && r.is_none() {
                match in_file(&map_path, read_map(&map_path))? {
                    MapFile::Subspace(p) => p,
                    MapFile::Feature(_) => {
                        return Err(CliError::Data(format!(
                            "{}: holds a feature map, not a subspace projector",
                            map_path.display()
                        )))
                    }
                }
            } else {
                subspace_fit(&cb, r, EIGEN_FLOOR)?
            };
            TrainedEncoder::SVlad(cb, proj)
        }
    })
}

fn cmd_encode(a: EncodeArgs) -> CliResult<Vec<String>> {
    let cfg = load_config(&a.config)?;
    let input: PathBuf = require(pick(&cfg, a.input, "in")?, "in")?;
    let codebook: PathBuf = require(pick(&cfg, a.codebook, "codebook")?, "codebook")?;
    let encoder = parse_encoder(&require(
        pick::<String>(&cfg, a.encoder, "encoder")?,
        "encoder",
    )?)?;
    let out: PathBuf = require(pick(&cfg, a.out, "out")?, "out")?;
    let norm = match pick::<String>(&cfg, a.norm, "norm")? {
        Some(s) => parse_norm(&s)?,
        None => Normalization::NONE,
    };
    let data = read_sets(&input)?;
    check_encoder_geometry(encoder, data.geometry)?;
    if encoder == EncoderKind::KVlad {
        return Err(usage(
            "encoder: kvlad codes are implicit; use `gram` to compare sets through the kernel",
        ));
    }
    let map = pick(&cfg, a.map, "map")?;
    let r = pick(&cfg, a.r, "r")?;
    let fitted = load_encoder(encoder, &codebook, map, r)?;
    let entries = data
        .sets
        .iter()
        .map(|s| {
            Ok(CodeEntry {
                id: s.id,
                label: s.label,
                code: fitted.encode(s, norm)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let codes = CodesFile::new(entries)?;
    write_codes(&out, &codes)?;
    let len: usize = codes.block_lengths.iter().sum();
    log::info!(
        "encoded {} sets with {encoder} into {}",
        codes.entries.len(),
        out.display()
    );
    summary(json!({
        "command": "encode",
        "encoder": encoder.name(),
        "sets": codes.entries.len(),
        "blocks": codes.block_lengths.len(),
        "code_len": len,
        "normalization": norm_name(norm),
        "out": path_str(&out),
    }))
}

fn norm_name(n: Normalization) -> String {
    let parts: Vec<&str> = [(n.intra, "intra"), (n.ssr, "ssr"), (n.global, "global")]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, s)| *s)
        .collect();
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join(",")
    }
}

fn code_matrix(c: &CodesFile) -> Matrix {
    let d: usize = c.block_lengths.iter().sum();
    let data = c.entries.iter().flat_map(|e| e.code.flatten()).collect();
    Matrix::from_vec(c.entries.len(), d, data)
}

fn cmd_gram(a: GramArgs) -> CliResult<Vec<String>> {
    let cfg = load_config(&a.config)?;
    let input: PathBuf = require(pick(&cfg, a.input, "in")?, "in")?;
    let out: PathBuf = require(pick(&cfg, a.out, "out")?, "out")?;
    let normalized = a.normalized || pick::<bool>(&cfg, None, "normalized")?.unwrap_or(false);
    let against: Option<PathBuf> = pick(&cfg, a.against, "against")?;
    let magic = in_file(&input, peek_magic(&input))?;
    let gram = if magic == format::DATASET_MAGIC {
        let codebook: PathBuf = require(pick(&cfg, a.codebook, "codebook")?, "codebook")?;
        let cb: ImplicitCodebook = match in_file(&codebook, read_codebook(&codebook))? {
            CodebookFile::Implicit(cb) => cb,
            CodebookFile::Explicit(_) => {
                return Err(CliError::Data(format!(
                    "{}: kVLAD Grams need an implicit (kernel k-means) codebook",
                    codebook.display()
                )))
            }
        };
        let rows = read_sets(&input)?;
        match against {
            None => GramFile::Symmetric(kvlad_gram(&rows.sets, &cb, normalized)?),
            Some(p) => {
                let cols = read_sets(&p)?;
                GramFile::Cross(kvlad_cross_gram(&rows.sets, &cols.sets, &cb, normalized)?)
            }
        }
    } else if magic == format::CODES_MAGIC {
        if normalized {
            return Err(usage(
                "normalized: applies to kVLAD Grams; normalize codes at encode time",
            ));
        }
        let rows = in_file(&input, read_codes(&input))?;
        let x = code_matrix(&rows);
        match against {
            None => GramFile::Symmetric(GramMatrix::new(x.matmul(&x.transpose()), rows.ids())?),
            Some(p) => {
                let cols = in_file(&p, read_codes(&p))?;
                if cols.block_lengths != rows.block_lengths {
                    return Err(CliError::Data(format!(
                        "{}: code layout differs from {}",
                        p.display(),
                        input.display()
                    )));
                }
                let y = code_matrix(&cols);
                GramFile::Cross(CrossGram::new(
                    x.matmul(&y.transpose()),
                    rows.ids(),
                    cols.ids(),
                )?)
            }
        }
    } else {
        return Err(CliError::Data(format!(
            "{}: expected a dataset (KVLD) or codes (KVLE) file",
            input.display()
        )));
    };
    write_gram(&out, &gram)?;
    let (rows, cols) = match &gram {
        GramFile::Symmetric(g) => (g.len(), g.len()),
        GramFile::Cross(c) => (c.row_ids.len(), c.col_ids.len()),
    };
    summary(json!({
        "command": "gram",
        "rows": rows,
        "cols": cols,
        "normalized": normalized,
        "out": path_str(&out),
    }))
}

fn label_map(path: &Path) -> CliResult<HashMap<u32, u32>> {
    let magic = in_file(path, peek_magic(path))?;
    let pairs: Vec<(u32, u32)> = if magic == format::DATASET_MAGIC {
        read_sets(path)?
            .sets
            .iter()
            .map(|s| (s.id, s.label))
            .collect()
    } else if magic == format::CODES_MAGIC {
        let c = in_file(path, read_codes(path))?;
        c.entries.iter().map(|e| (e.id, e.label)).collect()
    } else {
        return Err(CliError::Data(format!(
            "{}: labels must come from a dataset or codes file",
            path.display()
        )));
    };
    Ok(pairs.into_iter().collect())
}

fn labels_for(ids: &[u32], map: &HashMap<u32, u32>, source: &Path) -> CliResult<Vec<u32>> {
    ids.iter()
        .map(|id| {
            map.get(id).copied().ok_or_else(|| {
                CliError::Data(format!("{}: no label for item {id}", source.display()))
            })
        })
        .collect()
}

fn cmd_classify(a: ClassifyArgs) -> CliResult<Vec<String>> {
    let cfg = load_config(&a.config)?;
    let codes: Option<PathBuf> = pick(&cfg, a.codes, "codes")?;
    let gram: Option<PathBuf> = pick(&cfg, a.gram, "gram")?;
    let lambda = pick(&cfg, a.lambda, "lambda")?.unwrap_or(DEFAULT_LAMBDA);
    let model_out: PathBuf = require(pick(&cfg, a.model_out, "model-out")?, "model-out")?;
    let labels_path: Option<PathBuf> = pick(&cfg, a.labels, "labels")?;
    let (model, n, train_acc) = match (codes, gram) {
        (Some(p), None) => {
            let c = in_file(&p, read_codes(&p))?;
            let truth = match &labels_path {
                Some(l) => labels_for(&c.ids(), &label_map(l)?, l)?,
                None => c.labels(),
            };
            let codes = c.codes();
            let m = ridge_train(&codes, &truth, lambda)?;
            let acc = accuracy(&ridge_predict(&m, &codes)?, &truth)?;
            (ModelFile::Ridge(m), codes.len(), acc)
        }
        (None, Some(p)) => {
            let g = match in_file(&p, read_gram(&p))? {
                GramFile::Symmetric(g) => g,
                GramFile::Cross(_) => {
                    return Err(CliError::Data(format!(
                        "{}: training needs a symmetric Gram",
                        p.display()
                    )))
                }
            };
            let l = require(labels_path, "labels")?;
            let truth = labels_for(&g.ids, &label_map(&l)?, &l)?;
            let m = kridge_train(&g, &truth, lambda)?;
            let own = CrossGram::new(g.values.clone(), g.ids.clone(), g.ids.clone())?;
            let acc = accuracy(&kridge_predict(&m, &own)?, &truth)?;
            (ModelFile::KernelRidge(m), g.len(), acc)
        }
        _ => return Err(usage("give exactly one of --codes or --gram")),
    };
    write_model(&model_out, &model)?;
    let (kind, classes) = match &model {
        ModelFile::Ridge(m) => ("ridge", m.classes.len()),
        ModelFile::KernelRidge(m) => ("kernel-ridge", m.classes.len()),
    };
    summary(json!({
        "command": "classify",
        "model": kind,
        "items": n,
        "classes": classes,
        "lambda": lambda,
        "train_accuracy": train_acc,
        "out": path_str(&model_out),
    }))
}

fn cmd_eval(a: EvalArgs) -> CliResult<Vec<String>> {
    let cfg = load_config(&a.config)?;
    let model_path: PathBuf = require(pick(&cfg, a.model, "model")?, "model")?;
    let codes: Option<PathBuf> = pick(&cfg, a.codes, "codes")?;
    let gram: Option<PathBuf> = pick(&cfg, a.gram, "gram")?;
    let labels_path: Option<PathBuf> = pick(&cfg, a.labels, "labels")?;
    let model = in_file(&model_path, read_model(&model_path))?;
    let (pred, truth) = match (&model, codes, gram) {
        (ModelFile::Ridge(m), Some(p), None) => {
            let c = in_file(&p, read_codes(&p))?;
            let truth = match &labels_path {
                Some(l) => labels_for(&c.ids(), &label_map(l)?, l)?,
                None => c.labels(),
            };
            (ridge_predict(m, &c.codes())?, truth)
        }
        (ModelFile::KernelRidge(m), None, Some(p)) => {
            let cross = match in_file(&p, read_gram(&p))? {
                GramFile::Cross(c) => c,
                GramFile::Symmetric(g) => CrossGram::new(g.values, g.ids.clone(), g.ids)?,
            };
            let l = require(labels_path, "labels")?;
            let truth = labels_for(&cross.row_ids, &label_map(&l)?, &l)?;
            let pred = kridge_predict(m, &cross).map_err(|e| match e {
                kvlad_core::Error::FingerprintMismatch { .. } => CliError::Data(format!(
                    "{}: Gram columns are not the model's training items in training order",
                    p.display()
                )),
                other => other.into(),
            })?;
            (pred, truth)
        }
        (ModelFile::Ridge(_), _, _) => {
            return Err(usage("a ridge model is evaluated with --codes"))
        }
        (ModelFile::KernelRidge(_), _, _) => {
            return Err(usage("a kernel ridge model is evaluated with --gram"))
        }
    };
    let acc = accuracy(&pred, &truth)?;
    log::info!("accuracy {acc:.4} on {} items", truth.len());
    summary(json!({
        "command": "eval",
        "items": truth.len(),
        "correct": pred.iter().zip(&truth).filter(|(a, b)| a == b).count(),
        "accuracy": acc,
    }))
}

fn cmd_bench(a: BenchArgs) -> CliResult<Vec<String>> {
    let path = require(a.config, "config")?;
    let cfg = read_config(&path)?;
    let rows = bench::run(&cfg)?;
    Ok(rows.into_iter().map(|r| r.to_json().to_string()).collect())
}

fn cmd_export(a: ExportArgs) -> CliResult<Vec<String>> {
    let cfg = load_config(&a.config)?;
    let input: PathBuf = require(pick(&cfg, a.input, "in")?, "in")?;
    let csv: PathBuf = require(pick(&cfg, a.csv, "csv")?, "csv")?;
    let magic = in_file(&input, peek_magic(&input))?;
    let (text, kind) = if magic == format::GRAM_MAGIC {
        (gram_csv(&in_file(&input, read_gram(&input))?), "gram")
    } else if magic == format::CODES_MAGIC {
        (codes_csv(&in_file(&input, read_codes(&input))?), "codes")
    } else {
        return Err(CliError::Data(format!(
            "{}: export handles Gram (KVLG) and codes (KVLE) files",
            input.display()
        )));
    };
    write_atomic(&csv, text.as_bytes())?;
    summary(json!({
        "command": "export",
        "kind": kind,
        "rows": text.lines().count(),
        "out": path_str(&csv),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_parsing() {
        assert_eq!(parse_norm("none").unwrap(), Normalization::NONE);
        let n = parse_norm("global,intra").unwrap();
        assert!(n.intra && n.global && !n.ssr);
        assert!(parse_norm("l1").is_err());
        assert_eq!(norm_name(n), "intra,global");
    }

    #[test]
    fn clap_errors_are_usage() {
        let mut sink = Vec::new();
        assert_eq!(run(["kvlad", "frobnicate"], &mut sink), 1);
        assert_eq!(run(["kvlad", "gen", "--bogus"], &mut sink), 1);
        assert_eq!(run(["kvlad", "gen"], &mut sink), 1);
    }

    #[test]
    fn error_classes() {
        assert_eq!(CliError::from(kvlad_core::Error::NotSpd).exit_code(), 3);
        assert_eq!(CliError::from(kvlad_core::Error::Empty("x")).exit_code(), 2);
        assert_eq!(
            CliError::from(FormatError::UnexpectedEnd("magic")).exit_code(),
            2
        );
    }
}
