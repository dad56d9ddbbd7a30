//! `lmh-brtf`: synthetic benchmarks, corruption, denoising and scoring of
//! NPY tensors.
//!
//! Exit codes: 0 on success, 1 on a runtime or numerical failure, 2 on a
//! usage error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::json;

use lmh_brtf::corrupt::{self, CorruptConfig};
use lmh_brtf::metrics::{self, MetricOptions};
use lmh_brtf::model::{self, HyperParams, InitRank};
use lmh_brtf::npy::{self, NpyData};
use lmh_brtf::report::{EntryReport, PhaseTime, RunReport};
use lmh_brtf::synth::{self, SynthConfig};
use lmh_brtf::transform::CMat;
use lmh_brtf::{RealTensor, TransformSpec};

use config::{list_from_value, parse_list, usage, Layer, Usage};

const THREADS_ENV: &str = "LMH_BRTF_THREADS";

#[derive(Parser)]
#[command(name = "lmh-brtf", version, about = "Bayesian robust low-multi-rank tensor factorization")]
struct Cli {
    /// Worker threads; 0 picks one per core. Falls back to LMH_BRTF_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// JSON file with default settings. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate planted low-multi-rank instances, decompose and score them.
    Synth(SynthArgs),
    /// Corrupt a clean tensor with outliers and Gaussian noise.
    Corrupt(CorruptArgs),
    /// Separate a tensor into low-rank, sparse and noise parts.
    Denoise(DenoiseArgs),
    /// Compare an estimate with a reference.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct ModelFlags {
    /// Uniform starting rank per slice.
    #[arg(long)]
    init_rank: Option<usize>,
    /// Initial variance of the sparse component.
    #[arg(long = "sigma0sq")]
    sigma0_sq: Option<f64>,
    /// Stop when the relative change of the estimate drops below this.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Refinement factor: a positive number or `auto` for the transform's phi.
    #[arg(long)]
    gamma: Option<String>,
    /// Relative column energy below which factor columns are dropped.
    #[arg(long)]
    prune_threshold: Option<f64>,
}

const MODEL_KEYS: [&str; 6] = ["init_rank", "sigma0sq", "tol", "max_iter", "gamma", "prune_threshold"];

#[derive(Args)]
struct SynthArgs {
    /// Tensor order: 3, 4 or 5.
    #[arg(long)]
    order: Option<usize>,
    /// Comma-separated mode sizes, e.g. 50,50,5,5.
    #[arg(long)]
    dims: Option<String>,
    /// Base rank R [default: 5].
    #[arg(long)]
    rank: Option<usize>,
    /// blocks, blocks-swapped, uniform, or a list like 5,2*10 [default: blocks].
    #[arg(long)]
    pattern: Option<String>,
    /// Outlier fraction; a comma list runs a grid [default: 0.05].
    #[arg(long)]
    rho: Option<String>,
    /// Noise variance; a comma list runs a grid [default: 1e-4].
    #[arg(long)]
    sigma2: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for y, x_gt, s_gt, x_hat and s_hat of every cell.
    #[arg(long)]
    save_dir: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Fraction of entries replaced by outliers [default: 0.2].
    #[arg(long)]
    rho: Option<f64>,
    /// Gaussian noise variance [default: 1e-4].
    #[arg(long)]
    sigma2: Option<f64>,
    /// Lower end of the outlier range [default: 0].
    #[arg(long)]
    low: Option<f64>,
    /// Upper end of the outlier range [default: 255].
    #[arg(long)]
    high: Option<f64>,
    /// Map [low, high] onto [0, 1] before adding noise.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Built-in transform; only `dft` exists.
    #[arg(long)]
    transform: Option<String>,
    /// Explicit transform matrix, one NPY file per trailing mode in order.
    #[arg(long = "transform-file")]
    transform_file: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the low-rank estimate.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the sparse estimate.
    #[arg(long)]
    sparse_out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Clean tensor; adds quality metrics to the report.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    est: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// SSIM window side [default: 8].
    #[arg(long)]
    ssim_window: Option<usize>,
    /// SSIM dynamic range; defaults to the reference's range.
    #[arg(long)]
    data_range: Option<f64>,
    /// ERGAS resolution ratio [default: 1].
    #[arg(long)]
    ergas_scale: Option<f64>,
    /// Spectral mode for SAM (0-based); defaults to the last mode.
    #[arg(long)]
    sam_mode: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use lmh_brtf::Error as E;
    let usage_error = e.chain().any(|c| {
        c.is::<Usage>()
            || matches!(
                c.downcast_ref::<E>(),
                Some(E::InvalidParameter(_) | E::RankTooLarge { .. } | E::OrderTooLow(_))
            )
    });
    if usage_error {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<()> {
    let (name, keys): (&str, Vec<&str>) = match &cli.command {
        Command::Synth(_) => (
            "synth",
            [&["order", "dims", "rank", "pattern", "rho", "sigma2", "seed", "out", "save_dir"][..], &MODEL_KEYS].concat(),
        ),
        Command::Corrupt(_) => ("corrupt", vec!["input", "rho", "sigma2", "low", "high", "normalize", "seed", "out"]),
        Command::Denoise(_) => (
            "denoise",
            [
                &["input", "transform", "transform_file", "seed", "out", "sparse_out", "report", "ref"][..],
                &MODEL_KEYS,
            ]
            .concat(),
        ),
        Command::Metrics(_) => {
            ("metrics", vec!["ref", "est", "out", "ssim_window", "data_range", "ergas_scale", "sam_mode"])
        }
    };
    let layer = Layer::load(cli.config.as_deref(), name, &keys)?;
    configure_threads(cli.threads, &layer)?;
    match cli.command {
        Command::Synth(a) => synth_cmd(a, &layer),
        Command::Corrupt(a) => corrupt_cmd(a, &layer),
        Command::Denoise(a) => denoise_cmd(a, &layer),
        Command::Metrics(a) => metrics_cmd(a, &layer),
    }
}

fn configure_threads(flag: Option<usize>, layer: &Layer) -> Result<()> {
    let n = match layer.opt(flag, "threads")? {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| usage(format!("{THREADS_ENV}='{v}' is not a thread count")))?,
            Err(_) => 0,
        },
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting the thread pool")?;
    }
    Ok(())
}

fn missing(command: &str, flag: &str) -> anyhow::Error {
    let mut cmd = Cli::command();
    cmd.build();
    let help = cmd
        .find_subcommand_mut(command)
        .map(|c| c.render_usage().to_string())
        .unwrap_or_default();
    usage(format!("missing --{flag} (flag or config key)\n\n{help}"))
}

fn gamma_value(s: &str) -> Result<Option<f64>> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| usage(format!("--gamma takes a number or 'auto', got '{s}'")))
}

/// Applies model flags and config keys on top of `base`.
fn model_params(flags: &ModelFlags, layer: &Layer, mut hp: HyperParams, rank_cap: usize) -> Result<HyperParams> {
    if let Some(r) = layer.opt(flags.init_rank, "init_rank")? {
        hp.init_rank = Some(InitRank::Uniform(r.min(rank_cap)));
    }
    hp.sigma0_sq = layer.pick(flags.sigma0_sq, "sigma0sq", hp.sigma0_sq)?;
    hp.tol = layer.pick(flags.tol, "tol", hp.tol)?;
    hp.max_iter = layer.pick(flags.max_iter, "max_iter", hp.max_iter)?;
    hp.prune_threshold = layer.pick(flags.prune_threshold, "prune_threshold", hp.prune_threshold)?;
    let gamma = match &flags.gamma {
        Some(s) => Some(gamma_value(s)?),
        None => match layer.raw("gamma") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) => Some(gamma_value(s)?),
            Some(v) => Some(Some(v.as_f64().ok_or_else(|| usage("config key 'gamma' must be a number or 'auto'"))?)),
        },
    };
    if let Some(g) = gamma {
        hp.gamma = g;
    }
    Ok(hp)
}

fn float_list(flag: &Option<String>, layer: &Layer, key: &str, default: f64) -> Result<Vec<f64>> {
    match flag {
        Some(s) => parse_list(s, key),
        None => match layer.raw(key) {
            Some(v) => list_from_value(v, key),
            None => Ok(vec![default]),
        },
    }
}

fn write_report(report: &RunReport, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => report.write(p).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{}", report.to_json()?);
            Ok(())
        }
    }
}

fn synth_cmd(a: SynthArgs, layer: &Layer) -> Result<()> {
    let dims: Vec<usize> = match &a.dims {
        Some(s) => parse_list(s, "dims")?,
        None => match layer.raw("dims") {
            Some(serde_json::Value::String(s)) => parse_list(s, "dims")?,
            Some(_) => layer.get("dims")?.expect("present"),
            None => return Err(missing("synth", "dims")),
        },
    };
    let order = layer.pick(a.order, "order", dims.len())?;
    if !(3..=5).contains(&order) {
        return Err(usage(format!("--order must be 3, 4 or 5, got {order}")));
    }
    if dims.len() != order {
        return Err(usage(format!("--dims has {} sizes, --order is {order}", dims.len())));
    }
    if dims.contains(&0) {
        return Err(usage("--dims entries must be positive"));
    }
    let rank = layer.pick(a.rank, "rank", 5)?;
    let pattern_spec: String = layer.pick(a.pattern.clone(), "pattern", "blocks".to_string())?;
    let rhos = float_list(&a.rho, layer, "rho", 0.05)?;
    let sigmas = float_list(&a.sigma2, layer, "sigma2", 1e-4)?;
    let seed = layer.pick(a.seed, "seed", 0)?;
    let out: Option<PathBuf> = layer.opt(a.out.clone(), "out")?;
    let save_dir: Option<PathBuf> = layer.opt(a.save_dir.clone(), "save_dir")?;

    let trailing = &dims[2..];
    let pattern = synth::parse_pattern(&pattern_spec, trailing, rank)?;
    let l = TransformSpec::dft(trailing)?;
    let hp = model_params(&a.model, layer, synth::synth_hyper(&dims), dims[0].min(dims[1]))?;
    let grid: Vec<SynthConfig> = rhos
        .iter()
        .flat_map(|&rho| sigmas.iter().map(move |&s| (rho, s)))
        .map(|(rho, sigma_sq)| SynthConfig {
            shape: dims.clone(),
            base_rank: rank,
            pattern: pattern.clone(),
            rho,
            sigma_sq,
            seed,
        })
        .collect();
    for cfg in &grid {
        cfg.validate()?;
    }

    let bench = synth::run_benchmark(&grid, &hp, &l)?;
    let mut report = bench.report;
    report.seed = Some(seed);
    report.config = json!({
        "order": order, "dims": dims, "rank": rank, "pattern": pattern_spec,
        "rho": rhos, "sigma2": sigmas, "seed": seed,
    });
    for e in &report.entries {
        eprintln!(
            "{}: R_err {} X_err {:.4e} iterations {} converged {}",
            e.label,
            e.r_err.unwrap_or(f64::NAN),
            e.x_err.unwrap_or(f64::NAN),
            e.trace.iterations.len(),
            e.trace.converged
        );
    }
    if let Some(dir) = save_dir {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, cell) in bench.cells.iter().enumerate() {
            for (name, t) in [
                ("y", &cell.instance.y),
                ("x_gt", &cell.instance.x_gt),
                ("s_gt", &cell.instance.s_gt),
                ("x_hat", &cell.output.x_hat),
                ("s_hat", &cell.output.s_hat),
            ] {
                let p = dir.join(format!("cell{i}_{name}.npy"));
                npy::write_tensor(&p, t).with_context(|| format!("writing {}", p.display()))?;
            }
        }
    }
    write_report(&report, out.as_deref())
}

fn read_input(path: &Path) -> Result<RealTensor> {
    npy::read_real_tensor(path).with_context(|| format!("reading {}", path.display()))
}

fn corrupt_cmd(a: CorruptArgs, layer: &Layer) -> Result<()> {
    let input: PathBuf = layer.opt(a.input.clone(), "input")?.ok_or_else(|| missing("corrupt", "input"))?;
    let out: PathBuf = layer.opt(a.out.clone(), "out")?.ok_or_else(|| missing("corrupt", "out"))?;
    let d = CorruptConfig::default();
    let cfg = CorruptConfig {
        rho: layer.pick(a.rho, "rho", d.rho)?,
        sigma_sq: layer.pick(a.sigma2, "sigma2", d.sigma_sq)?,
        low: layer.pick(a.low, "low", d.low)?,
        high: layer.pick(a.high, "high", d.high)?,
        normalize: a.normalize || layer.get("normalize")?.unwrap_or(false),
        seed: layer.pick(a.seed, "seed", d.seed)?,
    };
    cfg.validate()?;
    let x = read_input(&input)?;
    let y = corrupt::corrupt(&x, &cfg)?;
    npy::write_tensor(&out, &y).with_context(|| format!("writing {}", out.display()))
}

/// Reads one explicit transform matrix: an `n x n` array, optionally with
/// a trailing singleton mode.
fn read_matrix(path: &Path) -> Result<CMat> {
    let a = npy::read_npy(path).with_context(|| format!("reading {}", path.display()))?;
    let n = a.shape.first().copied().unwrap_or(0);
    let square = match a.shape.as_slice() {
        [r, c] | [r, c, 1] => r == c,
        _ => false,
    };
    if !square {
        bail!("{}: transform matrix must be square, got shape {:?}", path.display(), a.shape);
    }
    Ok(match a.data {
        NpyData::Real(v) => CMat::from_iterator(n, n, v.into_iter().map(|x| x.into())),
        NpyData::Complex(v) => CMat::from_column_slice(n, n, &v),
    })
}

fn denoise_cmd(a: DenoiseArgs, layer: &Layer) -> Result<()> {
    let start = Instant::now();
    let mut phases = Vec::new();
    let input: PathBuf = layer.opt(a.input.clone(), "input")?.ok_or_else(|| missing("denoise", "input"))?;
    let out: PathBuf = layer.opt(a.out.clone(), "out")?.ok_or_else(|| missing("denoise", "out"))?;
    let sparse_out: Option<PathBuf> = layer.opt(a.sparse_out.clone(), "sparse_out")?;
    let report_path: Option<PathBuf> = layer.opt(a.report.clone(), "report")?;
    let reference: Option<PathBuf> = layer.opt(a.reference.clone(), "ref")?;
    let seed = layer.pick(a.seed, "seed", 0)?;
    let files: Vec<PathBuf> =
        if a.transform_file.is_empty() { layer.get("transform_file")?.unwrap_or_default() } else { a.transform_file.clone() };
    let builtin: Option<String> = layer.opt(a.transform.clone(), "transform")?;
    if builtin.is_some() && !files.is_empty() {
        return Err(usage("--transform and --transform-file are exclusive"));
    }
    if let Some(t) = &builtin {
        if t != "dft" {
            return Err(usage(format!("unknown transform '{t}'; the built-in one is 'dft'")));
        }
    }

    let t = Instant::now();
    let y = read_input(&input)?;
    let x_ref = reference.as_deref().map(read_input).transpose()?;
    let l = if files.is_empty() {
        TransformSpec::dft(y.trailing())?
    } else {
        TransformSpec::explicit(files.iter().map(|p| read_matrix(p)).collect::<Result<_>>()?)?
    };
    phases.push(PhaseTime { name: "load".into(), seconds: t.elapsed().as_secs_f64() });

    let cap = y.rows().min(y.cols());
    let defaults = HyperParams {
        sigma0_sq: 1e-7,
        tol: 1e-4,
        max_iter: 200,
        gamma: None,
        init_rank: Some(InitRank::Uniform(150.min(cap))),
        ..HyperParams::default()
    };
    let hp = model_params(&a.model, layer, defaults, cap)?;

    let t = Instant::now();
    let output = model::run(&y, &l, &hp, seed)?;
    phases.push(PhaseTime { name: "run".into(), seconds: t.elapsed().as_secs_f64() });

    let t = Instant::now();
    npy::write_tensor(&out, &output.x_hat).with_context(|| format!("writing {}", out.display()))?;
    if let Some(p) = &sparse_out {
        npy::write_tensor(p, &output.s_hat).with_context(|| format!("writing {}", p.display()))?;
    }
    let metrics = x_ref.as_ref().map(|r| metrics::evaluate(&output.x_hat, r)).transpose()?;
    let observed = x_ref.as_ref().map(|r| metrics::psnr(&y, r)).transpose()?;
    phases.push(PhaseTime { name: "write".into(), seconds: t.elapsed().as_secs_f64() });

    let it = &output.trace.iterations;
    eprintln!(
        "{} iterations, converged {}, tubal rank {}",
        it.len(),
        output.trace.converged,
        output.multirank.tubal()
    );
    if let (Some(m), Some(obs)) = (&metrics, observed) {
        eprintln!("PSNR {:.3} dB (observed {:.3} dB)", m.psnr, obs);
    }
    if let Some(p) = report_path {
        let mut report = RunReport::new("denoise");
        report.seed = Some(seed);
        report.transform = Some(l.echo());
        report.hyper = Some(hp);
        report.config = json!({
            "input": input, "out": out, "sparse_out": sparse_out, "ref": reference,
            "transform_file": files, "observed_psnr": observed.map(lmh_brtf::report::float_value),
        });
        report.entries.push(EntryReport {
            label: input.display().to_string(),
            synth: None,
            multirank: output.multirank.clone(),
            multirank_gt: None,
            r_err: None,
            x_err: x_ref.as_ref().map(|r| synth::x_err(&output.x_hat, r)).transpose()?,
            trace: output.trace.clone(),
            metrics: metrics.clone(),
        });
        report.metrics = metrics;
        report.timing.phases = phases;
        report.timing.total_seconds = start.elapsed().as_secs_f64();
        report.write(&p).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn metrics_cmd(a: MetricsArgs, layer: &Layer) -> Result<()> {
    let reference: PathBuf = layer.opt(a.reference.clone(), "ref")?.ok_or_else(|| missing("metrics", "ref"))?;
    let est: PathBuf = layer.opt(a.est.clone(), "est")?.ok_or_else(|| missing("metrics", "est"))?;
    let out: Option<PathBuf> = layer.opt(a.out.clone(), "out")?;
    let d = MetricOptions::default();
    let opts = MetricOptions {
        ssim_window: layer.pick(a.ssim_window, "ssim_window", d.ssim_window)?,
        ssim_data_range: layer.opt(a.data_range, "data_range")?,
        ergas_scale: layer.pick(a.ergas_scale, "ergas_scale", d.ergas_scale)?,
        sam_mode: layer.opt(a.sam_mode, "sam_mode")?,
    };
    let r = read_input(&reference)?;
    let e = read_input(&est)?;
    let m = metrics::evaluate_with(&e, &r, &opts)?;
    let text = serde_json::to_string_pretty(&m)?;
    match out {
        Some(p) => std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}
