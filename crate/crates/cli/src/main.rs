//! `cvqkd`: run the full simulated pipeline or any single stage of it.
//!
//! Failures print one JSON object `{"error": {"kind": …, "message": …}}` to
//! stderr and exit with status 2 (usage or configuration) or 1 (runtime).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use cvqkd_core::config::{parse_mode, RunConfig};
use cvqkd_core::keyrate::{loss_grid, optimize_va, secret_key_rate, sweep, write_sweep_csv};
use cvqkd_core::link::loss_db;
use cvqkd_core::privacy::{pack_bits, toeplitz_hash, unpack_bits, write_key, KeySidecar, ToeplitzSpec};
use cvqkd_core::reconciliation::bench::{fer_benchmark, write_bench_csv, BenchConfig};
use cvqkd_core::reconciliation::{build_met_code, efficiency};
use cvqkd_core::rng::{derive, Stream};
use cvqkd_core::session::simulate_to_dir;
use cvqkd_core::Error;

#[derive(Parser, Debug)]
#[command(name = "cvqkd", version, about = "CV-QKD link simulator and postprocessing stack")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file (`key = value` lines), applied on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base parameter set: xian, guangzhou or zero-noise.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "CVQKD_OUT_DIR", default_value = "cvqkd-out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Key-rate regime: asymptotic or finite.
    #[arg(long, global = true)]
    mode: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full session: acquisition, calibration, reconciliation, estimation, hashing.
    Simulate,
    /// Key rate at the configured link, with V_A optimized unless --fixed-va.
    Keyrate {
        #[arg(long)]
        fixed_va: bool,
    },
    /// Key rate against loss over the configured sweep range.
    Sweep,
    /// Monte-Carlo FER over the configured efficiency grid.
    ReconBench {
        #[arg(long)]
        snr: Option<f64>,
        /// Comma-separated efficiencies.
        #[arg(long, value_delimiter = ',', conflicts_with = "rates")]
        betas: Option<Vec<f64>>,
        /// Comma-separated effective code rates, converted to efficiencies at the bench SNR.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Toeplitz-hash a packed bit file.
    Pa {
        #[arg(long)]
        input: PathBuf,
        /// Number of input bits (default: all bits of the file).
        #[arg(long)]
        in_bits: Option<usize>,
        #[arg(long)]
        out_bits: usize,
    },
}

struct Failure {
    kind: &'static str,
    message: String,
    line: Option<usize>,
    code: u8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, line, code) = match &e {
            Error::Config { line, .. } => ("config", Some(*line), 2),
            Error::InvalidParameter { .. } => ("invalid_parameter", None, 2),
            Error::Io(_) => ("io", None, 1),
            Error::Parse(_) => ("parse", None, 1),
            _ => ("runtime", None, 1),
        };
        Failure {
            kind,
            message: e.to_string(),
            line,
            code,
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        kind: "usage",
        message: message.into(),
        line: None,
        code: 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(usage(e.to_string().trim().to_string())),
    };
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("json value"));
            ExitCode::SUCCESS
        }
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    let mut err = json!({ "kind": f.kind, "message": f.message });
    if let Some(line) = f.line {
        err["line"] = json!(line);
    }
    eprintln!("{}", json!({ "error": err }));
    ExitCode::from(f.code)
}

fn load_config(c: &Common) -> Result<(RunConfig, PathBuf), Failure> {
    let base = match &c.preset {
        Some(name) => RunConfig::preset(name)?,
        None => RunConfig::default(),
    };
    let (mut cfg, dir) = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::from(Error::Io(format!("{}: {e}", path.display()))))?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (RunConfig::parse_onto(base, &text)?, dir)
        }
        None => (base, PathBuf::from(".")),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = &c.mode {
        cfg.mode = parse_mode(mode).map_err(usage)?;
    }
    cfg.validate()?;
    Ok((cfg, dir))
}

fn run(cli: Cli) -> Result<Value, Failure> {
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    let (cfg, cfg_dir) = load_config(&cli.common)?;
    let out = &cli.common.out;
    fs::create_dir_all(out).map_err(|e| Failure::from(Error::from(e)))?;
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &cfg_dir, out),
        Command::Keyrate { fixed_va } => cmd_keyrate(&cfg, fixed_va, out),
        Command::Sweep => cmd_sweep(&cfg, out),
        Command::ReconBench {
            snr,
            betas,
            rates,
            frames,
        } => {
            let mut cfg = cfg;
            if let Some(s) = snr {
                cfg.bench_snr = s;
            }
            if let Some(b) = betas {
                cfg.bench_betas = b;
            }
            if let Some(r) = rates {
                cfg.bench_betas = r
                    .iter()
                    .map(|&rate| efficiency(rate, cfg.bench_snr))
                    .collect::<Result<_, _>>()?;
            }
            if let Some(f) = frames {
                cfg.bench_frames = f;
            }
            cfg.validate()?;
            cmd_recon_bench(&cfg, &cfg_dir, out)
        }
        Command::Pa {
            input,
            in_bits,
            out_bits,
        } => cmd_pa(&cfg, &input, in_bits, out_bits, out),
    }
}

fn io(e: std::io::Error) -> Failure {
    Error::from(e).into()
}

fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let mut f = fs::File::create(path).map_err(io)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Failure::from(Error::Io(e.to_string())))?;
    writeln!(f).map_err(io)
}

fn cmd_simulate(cfg: &RunConfig, cfg_dir: &Path, out: &Path) -> Result<Value, Failure> {
    let a = simulate_to_dir(cfg, cfg_dir, out)?;
    let r = &a.report;
    Ok(json!({
        "command": "simulate",
        "config_hash": r.config_hash,
        "loss_db": r.loss_db,
        "frames": r.calibration.frames,
        "blocks": r.outcome.blocks,
        "fer_observed": r.outcome.fer_observed,
        "key_in_bits": r.key.in_len,
        "key_out_bits": r.key.out_len,
        "insecure": r.key.insecure,
        "out_dir": out.display().to_string(),
    }))
}

fn cmd_keyrate(cfg: &RunConfig, fixed_va: bool, out: &Path) -> Result<Value, Failure> {
    let model = cfg.rate_model();
    let loss = loss_db(&cfg.system.channel);
    let t = cfg.system.transmittance();
    let va = if fixed_va {
        cfg.system.modulation_variance_snu
    } else {
        optimize_va(&model, loss, cfg.mode)?.va
    };
    let report = secret_key_rate(&model, va, t)?;
    let doc = json!({
        "command": "keyrate",
        "config_hash": cfg.hash(),
        "mode": cfg.mode,
        "loss_db": loss,
        "length_km": cfg.system.channel.length_km,
        "va_optimized": !fixed_va,
        "rate_bps": report.rate(cfg.mode),
        "report": report,
    });
    write_json(&out.join("keyrate.json"), &doc)?;
    Ok(doc)
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<Value, Failure> {
    let losses = loss_grid(cfg.sweep_start_db, cfg.sweep_end_db, cfg.sweep_step_db)?;
    let points = sweep(&cfg.rate_model(), &losses, cfg.system.channel.atten_db_per_km)?;
    let path = out.join("sweep.csv");
    let w = BufWriter::new(fs::File::create(&path).map_err(io)?);
    write_sweep_csv(w, &points, &cfg.provenance())?;
    Ok(json!({
        "command": "sweep",
        "points": points.len(),
        "csv": path.display().to_string(),
    }))
}

fn cmd_recon_bench(cfg: &RunConfig, cfg_dir: &Path, out: &Path) -> Result<Value, Failure> {
    let ensemble = cfg.load_ensemble(cfg_dir)?;
    let code = build_met_code(&ensemble, cfg.code_n, derive(cfg.seed, Stream::Construction as u64))?;
    let bench = BenchConfig {
        snr: cfg.bench_snr,
        betas: cfg.bench_betas.clone(),
        frames: cfg.bench_frames,
        dimension: cfg.dimension,
        max_iter: cfg.max_iter,
        seed: cfg.seed,
    };
    let rows = fer_benchmark(&code, &bench)?;
    let path = out.join("recon_bench.csv");
    let w = BufWriter::new(fs::File::create(&path).map_err(io)?);
    write_bench_csv(w, &rows, &cfg.provenance())?;
    Ok(json!({
        "command": "recon-bench",
        "n": code.n_bits,
        "k": code.k_bits,
        "rows": rows,
        "csv": path.display().to_string(),
    }))
}

fn cmd_pa(cfg: &RunConfig, input: &Path, in_bits: Option<usize>, out_bits: usize, out: &Path) -> Result<Value, Failure> {
    let bytes = fs::read(input).map_err(|e| Failure::from(Error::Io(format!("{}: {e}", input.display()))))?;
    let n = in_bits.unwrap_or(bytes.len() * 8);
    let bits = unpack_bits(&bytes, n)?;
    let spec = ToeplitzSpec::from_seed(n, out_bits, derive(cfg.seed, Stream::Privacy as u64))?;
    let hashed = toeplitz_hash(&bits, &spec)?;
    let sidecar = KeySidecar {
        session_id: format!("{}-{}", cfg.hash(), cfg.seed),
        in_len: n,
        out_len: out_bits,
        beta: cfg.beta,
        iab: 0.0,
        chi: 0.0,
        delta: 0.0,
        insecure: false,
        seed: cfg.seed,
    };
    write_key(out, "pa", &hashed, &sidecar)?;
    Ok(json!({
        "command": "pa",
        "in_bits": n,
        "out_bits": out_bits,
        "output": out.join("pa.bin").display().to_string(),
        "hex": pack_bits(&hashed).iter().map(|b| format!("{b:02x}")).collect::<String>(),
    }))
}
