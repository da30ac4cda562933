use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fusescan_core::geometry::{downsample_voxels, voxelize, CentroidMode, GridSpec, PointCloud, SparseVoxelSet};
use fusescan_core::harness::{
    alignment_batch, bench_scaling, erf_csv, erf_pgm, run_erf_eval, run_fuse, scene_config_text, selftest, synth_scene, BenchOptions,
    ErfOptions, FuseOptions, MetricsReport, SceneSpec,
};
use fusescan_core::hybrid::PipelineConfig;
use fusescan_core::numerics::{max_rel_error, AnyTensor, Precision, SeededRng, Tensor};
use fusescan_core::serialization::{CurveOrder, Paradigm, Quantizer};
use fusescan_core::ssm::{bidirectional_scan, default_workers, hippo_init, selective_scan_parallel_with, selective_scan_seq, SsmParams};
use fusescan_core::{Error, Real, Result};

const WORKERS_ENV: &str = "FUSESCAN_WORKERS";

#[derive(Parser)]
#[command(name = "fusescan", version, about = "Hybrid state-space scans over sparse 3D tokens")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize a point cloud (or a synthetic scene) and report per-stage statistics.
    Voxelize(VoxelizeArgs),
    /// Emit cells in curve order as CSV `index,x,y,z`.
    Serialize(SerializeArgs),
    /// Run the selective scan over an `N x C` tensor file.
    Scan(ScanArgs),
    /// Projected-voxel pixel error of continuous and discrete centroids.
    AlignEval(AlignArgs),
    /// Effective receptive fields of the local, global and hybrid pipelines.
    Erf(ErfArgs),
    /// Scan and attention timings across sequence lengths.
    Bench(BenchArgs),
    /// Full fusion pipeline on a synthetic scene.
    Fuse(FuseArgs),
    /// Run the invariant suite.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct OutArg {
    /// Write the primary output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Continuous,
    Discrete,
}

impl From<ModeArg> for CentroidMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Continuous => CentroidMode::Continuous,
            ModeArg::Discrete => CentroidMode::Discrete,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlignMode {
    Continuous,
    Discrete,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParadigmArg {
    Hilbert,
    Zorder,
    Coord,
}

impl From<ParadigmArg> for Paradigm {
    fn from(p: ParadigmArg) -> Self {
        match p {
            ParadigmArg::Hilbert => Paradigm::Hilbert,
            ParadigmArg::Zorder => Paradigm::Zorder,
            ParadigmArg::Coord => Paradigm::Coordinate,
        }
    }
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected 3 comma-separated values, got {}", v.len()))
}

fn parse_factor(s: &str) -> std::result::Result<[u64; 3], String> {
    let v: Vec<u64> = s.split(',').map(|t| t.trim().parse::<u64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    <[u64; 3]>::try_from(v).map_err(|v| format!("expected 3 comma-separated values, got {}", v.len()))
}

#[derive(Args)]
struct VoxelizeArgs {
    /// Point-cloud file; a synthetic scene is generated when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Seed of the synthetic scene.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_triple)]
    range_min: Option<[f64; 3]>,
    #[arg(long, value_parser = parse_triple)]
    range_max: Option<[f64; 3]>,
    #[arg(long, value_parser = parse_triple)]
    voxel_size: Option<[f64; 3]>,
    /// Downsampling stages after voxelization.
    #[arg(long, default_value_t = 0)]
    stages: u32,
    #[arg(long, value_parser = parse_factor, default_value = "1,1,2")]
    factor: [u64; 3],
    #[arg(long, value_enum, default_value = "continuous")]
    mode: ModeArg,
    /// Write the final voxel features as a tensor file.
    #[arg(long)]
    features_out: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct SerializeArgs {
    #[arg(long, value_enum, default_value = "hilbert")]
    paradigm: ParadigmArg,
    #[arg(long)]
    order: u32,
    /// Point-cloud file whose occupied voxels are serialized; all cells otherwise.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct ScanArgs {
    /// `N x C` tensor file.
    #[arg(long)]
    input: PathBuf,
    /// Parameter directory; HiPPO-initialized from `--seed` when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    state: usize,
    /// Compute precision; defaults to the input file's.
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long)]
    bidirectional: bool,
    /// Scan chunks; defaults to the worker count.
    #[arg(long)]
    chunks: Option<usize>,
    /// Write the scan output as a tensor file.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long, value_enum, default_value = "both")]
    mode: AlignMode,
    #[arg(long, default_value_t = 100)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// z-merging stages.
    #[arg(long, default_value_t = 2)]
    stages: u32,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct ErfArgs {
    /// Pipeline configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the synthetic scene; defaults to the pipeline seed.
    #[arg(long)]
    scene_seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    queries: usize,
    #[arg(long, default_value_t = 2)]
    stages: u32,
    #[arg(long, default_value_t = 512)]
    max_tokens: usize,
    /// Directory receiving one PGM heatmap and one CSV per variant.
    #[arg(long)]
    heatmap_dir: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "4096,8192,16384,32768,65536")]
    lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192")]
    attention_lengths: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 16)]
    state: usize,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 3)]
    attention_runs: usize,
    #[arg(long, default_value_t = 1)]
    attention_warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scene_seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    stages: u32,
    #[arg(long, default_value_t = 1.6)]
    bev_cell: f64,
    #[arg(long, default_value_t = 8)]
    image_stride: u32,
    /// Write the fused BEV features as a tensor file.
    #[arg(long)]
    features_out: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

/// A run's primary output and whether its checks are invariants that gate the exit code.
struct Outcome {
    text: Vec<u8>,
    out: Option<PathBuf>,
    gate: Option<MetricsReport>,
}

impl Outcome {
    fn report(report: MetricsReport, out: &OutArg, gated: bool) -> Self {
        Outcome { text: report.to_json().into_bytes(), out: out.out.clone(), gate: gated.then_some(report) }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => fs::read_to_string(p)?.parse(),
        None => Ok(PipelineConfig::default()),
    }
}

fn voxelize_cmd(a: &VoxelizeArgs) -> Result<Outcome> {
    let base = SceneSpec { seed: a.seed, ..SceneSpec::default() }.grid;
    let grid = GridSpec::new(
        a.range_min.unwrap_or(base.range_min),
        a.range_max.unwrap_or(base.range_max),
        a.voxel_size.unwrap_or(base.voxel_size),
    )?;
    let (cloud, source) = match &a.input {
        Some(p) => (PointCloud::read_from(fs::File::open(p)?)?, p.display().to_string()),
        None => {
            let spec = SceneSpec { seed: a.seed, grid, ..SceneSpec::default() };
            (synth_scene(&spec)?.cloud, format!("synthetic seed {}", a.seed))
        }
    };
    let mut vs = voxelize(&cloud, &grid)?;
    vs.check_invariants().map_err(|e| Error::Invariant(e.to_string()))?;
    let text = format!("source = {source}\ngrid = {grid:?}\nstages = {}\nfactor = {:?}\n", a.stages, a.factor);
    let mut r = MetricsReport::new("voxelize", a.seed, &text);
    r.set("points", cloud.len() as f64)?;
    r.set("assigned_points", vs.assignment().iter().flatten().count() as f64)?;
    let record = |r: &mut MetricsReport, s: u32, vs: &SparseVoxelSet| -> Result<()> {
        r.set(&format!("stage{s}.voxels"), vs.len() as f64)?;
        if !vs.is_empty() {
            for (axis, v) in ["x", "y", "z"].iter().zip(vs.global_centroid()) {
                r.set(&format!("stage{s}.centroid_{axis}"), v)?;
            }
        }
        Ok(())
    };
    record(&mut r, 0, &vs)?;
    let g0 = vs.global_centroid();
    for s in 1..=a.stages {
        vs = downsample_voxels(&vs, a.factor, a.mode.into())?;
        vs.check_invariants().map_err(|e| Error::Invariant(e.to_string()))?;
        record(&mut r, s, &vs)?;
    }
    if matches!(a.mode, ModeArg::Continuous) && !vs.is_empty() {
        let g = vs.global_centroid();
        let scale = g0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        r.check("centroid_conserved", (0..3).all(|k| (g[k] - g0[k]).abs() <= 1e-12 * scale));
    }
    if let Some(p) = &a.features_out {
        write_file(p, &vs.features().to_bytes())?;
    }
    Ok(Outcome::report(r, &a.out, true))
}

fn serialize_cmd(a: &SerializeArgs) -> Result<Outcome> {
    let curve = CurveOrder::new(a.paradigm.into(), a.order)?;
    let mut rows: Vec<(u64, [u64; 3])> = match &a.input {
        None => (0..curve.cell_count()).map(|i| curve.inverse(i).map(|c| (i, c))).collect::<Result<_>>()?,
        Some(p) => {
            let cloud = PointCloud::read_from(fs::File::open(p)?)?;
            let vs = voxelize(&cloud, &SceneSpec::default().grid)?;
            let q = Quantizer::cells();
            vs.discrete_coords()
                .iter()
                .map(|c| {
                    let cell = q.quantize(c.map(|v| v as f64))?;
                    Ok((curve.index(cell)?, cell))
                })
                .collect::<Result<_>>()?
        }
    };
    rows.sort_unstable();
    let mut text = String::from("index,x,y,z\n");
    for (i, c) in rows {
        text.push_str(&format!("{i},{},{},{}\n", c[0], c[1], c[2]));
    }
    Ok(Outcome { text: text.into_bytes(), out: a.out.out.clone(), gate: None })
}

fn run_scan<T: Real>(a: &ScanArgs, params: &SsmParams<T>, x: &Tensor<T>) -> Result<(Tensor<T>, f64)> {
    let chunks = a.chunks.unwrap_or_else(default_workers).max(1);
    if a.bidirectional {
        let bwd = params.clone();
        return Ok((bidirectional_scan(params, &bwd, x)?, 0.0));
    }
    let y = selective_scan_parallel_with(params, x, chunks)?;
    let seq = selective_scan_seq(params, x)?;
    let err = max_rel_error(&y.cast::<f64>().into_data(), &seq.cast::<f64>().into_data(), 1e-30);
    Ok((y, err))
}

fn scan_cmd(a: &ScanArgs) -> Result<Outcome> {
    let input = AnyTensor::read_from(fs::File::open(&a.input)?)?;
    let x = input.to_f64();
    let (n, c) = x.dims2()?;
    let params = match &a.params {
        Some(dir) => SsmParams::load(dir)?,
        None => hippo_init(c, a.state, &mut SeededRng::new(a.seed))?,
    };
    let precision = match a.precision {
        Some(PrecisionArg::Single) => Precision::Single,
        Some(PrecisionArg::Double) => Precision::Double,
        None => input.precision(),
    };
    let text = format!(
        "input = {}\nparams = {:?}\nstate = {}\nbidirectional = {}\n",
        a.input.display(),
        a.params,
        params.state(),
        a.bidirectional
    );
    let mut r = MetricsReport::new("scan", a.seed, &text).with_precision(precision);
    r.set("tokens", n as f64)?;
    r.set("channels", c as f64)?;
    r.set("state", params.state() as f64)?;
    let (bytes, max_abs, err) = match precision {
        Precision::Double => {
            let (y, err) = run_scan(a, &params, &x)?;
            (y.to_bytes(), y.max_abs(), err)
        }
        Precision::Single => {
            let (y, err) = run_scan(a, &params.cast::<f32>(), &x.cast::<f32>())?;
            (y.to_bytes(), y.max_abs() as f64, err)
        }
    };
    r.set("output_max_abs", max_abs)?;
    if !a.bidirectional {
        let tol = if precision == Precision::Double { 1e-10 } else { 1e-5 };
        r.set("parallel_rel_error", err)?;
        r.check("parallel_matches_sequential", err <= tol);
    }
    if let Some(p) = &a.output {
        write_file(p, &bytes)?;
    }
    Ok(Outcome::report(r, &a.out, true))
}

fn align_cmd(a: &AlignArgs) -> Result<Outcome> {
    if a.scenes == 0 {
        return Err(Error::InvalidArgument("--scenes must be at least 1".into()));
    }
    let base = SceneSpec { seed: a.seed, ..SceneSpec::default() };
    let batch = alignment_batch(&base, a.scenes, a.stages)?;
    let mut r = batch.report(&base, a.stages)?;
    let drop = match a.mode {
        AlignMode::Both => None,
        AlignMode::Continuous => Some("discrete"),
        AlignMode::Discrete => Some("continuous"),
    };
    if let Some(other) = drop {
        r.metrics.retain(|k, _| !k.starts_with(other) && k != "continuous_win_fraction");
        r.checks.clear();
        r.provenance.config_hash = fusescan_core::harness::config_hash(
            format!("{}mode = {}\n", scene_config_text(&base, a.stages), if other == "discrete" { "continuous" } else { "discrete" })
                .as_bytes(),
        );
    }
    Ok(Outcome::report(r, &a.out, false))
}

fn erf_cmd(a: &ErfArgs) -> Result<Outcome> {
    let mut config = read_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let spec = SceneSpec { seed: a.scene_seed.unwrap_or(config.seed), ..SceneSpec::default() };
    let opts = ErfOptions { queries: a.queries, stages: a.stages, max_tokens: a.max_tokens };
    let eval = run_erf_eval(&config, &spec, opts)?;
    if let Some(dir) = &a.heatmap_dir {
        for v in &eval.variants {
            write_file(&dir.join(format!("{}.pgm", v.name)), &erf_pgm(&v.tokens, &v.map))?;
            write_file(&dir.join(format!("{}.csv", v.name)), erf_csv(&v.tokens, &v.map).as_bytes())?;
        }
    }
    Ok(Outcome::report(eval.report, &a.out, false))
}

fn bench_cmd(a: &BenchArgs) -> Result<Outcome> {
    let opts = BenchOptions {
        lengths: a.lengths.clone(),
        attention_lengths: a.attention_lengths.clone(),
        channels: a.channels,
        state: a.state,
        runs: a.runs,
        warmup: a.warmup,
        attention_runs: a.attention_runs,
        attention_warmup: a.attention_warmup,
        seed: a.seed,
    };
    let r = bench_scaling(&opts)?.report(&opts)?;
    Ok(Outcome::report(r, &a.out, false))
}

fn fuse_cmd(a: &FuseArgs) -> Result<Outcome> {
    let mut config = read_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let spec = SceneSpec { seed: a.scene_seed.unwrap_or(config.seed), ..SceneSpec::default() };
    let opts = FuseOptions { stages: a.stages, bev_cell: a.bev_cell, image_stride: a.image_stride, ..FuseOptions::default() };
    let out = run_fuse(&config, &spec, &opts)?;
    if let Some(p) = &a.features_out {
        write_file(p, &out.bev.features().to_bytes())?;
    }
    Ok(Outcome::report(out.report, &a.out, true))
}

fn selftest_cmd(a: &SelftestArgs) -> Result<Outcome> {
    Ok(Outcome::report(selftest(a.seed)?, &a.out, true))
}

fn configure_workers() -> Result<()> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| Error::InvalidArgument(format!("{WORKERS_ENV}={v} is not a worker count")))?;
    if n == 0 {
        return Err(Error::InvalidArgument(format!("{WORKERS_ENV} must be at least 1")));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Invariant(format!("worker pool: {e}")))
}

fn run(cli: &Cli) -> Result<Outcome> {
    configure_workers()?;
    match &cli.command {
        Command::Voxelize(a) => voxelize_cmd(a),
        Command::Serialize(a) => serialize_cmd(a),
        Command::Scan(a) => scan_cmd(a),
        Command::AlignEval(a) => align_cmd(a),
        Command::Erf(a) => erf_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Fuse(a) => fuse_cmd(a),
        Command::Selftest(a) => selftest_cmd(a),
    }
}

fn emit(outcome: &Outcome) -> Result<()> {
    match &outcome.out {
        Some(p) => write_file(p, &outcome.text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(&outcome.text)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match run(&cli).and_then(|o| emit(&o).map(|_| o)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_input_error() { 1 } else { 2 });
        }
    };
    match &outcome.gate {
        Some(r) if !r.all_passed() => {
            let failed: Vec<&str> = r.checks.iter().filter(|(_, &ok)| !ok).map(|(k, _)| k.as_str()).collect();
            eprintln!("error: invariant checks failed: {}", failed.join(", "));
            ExitCode::from(2)
        }
        _ => ExitCode::SUCCESS,
    }
}
