//! `qigen`: quantize weight matrices, plan tiles, generate kernels, and check
//! and time the quantized matrix-vector product.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error, 3 I/O or format error.

mod input;
mod stats;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qigen_core::kernelgen::{fit_plan, generate_manifest, generate_qgemv, Grouping, KernelDescriptor};
use qigen_core::pack::{lay_out_blocks, read_header, read_weight_file, write_weight_file, Layout, PackedMatrix};
use qigen_core::perfmodel::{plan, select_register_tile, HardwareSpec, TilePlan};
use qigen_core::quant::{quantize_matrix, Bits, GroupSize, QuantConfig, ZeroMode};
use qigen_runtime::{input_sums, memory_report, qgemv_reference, Backend, Prepared};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use input::{read_code_matrix, read_raw_matrix, FormatError};

const TOLERANCE: f64 = 1e-5;

#[derive(Parser, Debug)]
#[command(name = "qigen", version, about = "Quantized GEMV kernels with planned tiling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quantize a raw float matrix (or import codes) into a weight file
    Quantize(QuantizeArgs),
    /// Print the tile plan and its constraint slack
    Plan(PlanArgs),
    /// Write kernel sources and a manifest
    Generate(GenerateArgs),
    /// Compare the optimized product with the scalar reference
    Verify(VerifyArgs),
    /// Time the optimized and reference products
    Bench(BenchArgs),
    /// Print a weight-file header
    Info(InfoArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Records,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ZeroArg {
    Real32,
    Quantized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LayoutArg {
    Zcurve,
    Row,
}

fn parse_group(s: &str) -> Result<GroupSize, String> {
    if s.eq_ignore_ascii_case("full") {
        return Ok(GroupSize::FullColumn);
    }
    match s.parse::<usize>() {
        Ok(0) => Err("group size must be positive (use \"full\" for one group per column)".into()),
        Ok(g) => Ok(GroupSize::Rows(g)),
        Err(_) => Err(format!("expected a row count or \"full\", got {s:?}")),
    }
}

#[derive(Args, Debug)]
struct Common {
    /// Hardware description file (key = value lines); QIGEN_HW overrides it
    #[arg(long)]
    hw: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args, Debug)]
struct QuantizeArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 4)]
    bits: u32,
    /// Rows per group, or "full"
    #[arg(long, default_value = "128", value_parser = parse_group)]
    group_size: GroupSize,
    #[arg(long, value_enum, default_value = "real32")]
    zero_mode: ZeroArg,
    /// Input holds codes and parameters instead of floats
    #[arg(long)]
    codes: bool,
    #[arg(long, value_enum, default_value = "zcurve")]
    layout: LayoutArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long, default_value_t = 4)]
    bits: u32,
    #[arg(long, default_value = "128", value_parser = parse_group)]
    group_size: GroupSize,
    #[arg(long, default_value_t = 4096)]
    rows: usize,
    #[arg(long, default_value_t = 4096)]
    cols: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    bits: Vec<u32>,
    /// Comma-separated groupings, e.g. "full,64"
    #[arg(long, value_delimiter = ',', default_value = "full,64", value_parser = parse_group)]
    group_size: Vec<GroupSize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long)]
    threads: Option<usize>,
    /// Flip one payload word in the optimized path's copy
    #[arg(long, hide = true)]
    inject_fault: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct BenchArgs {
    input: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct InfoArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

fn hardware(common: &Common) -> anyhow::Result<HardwareSpec> {
    let path = std::env::var_os("QIGEN_HW").map(PathBuf::from).or_else(|| common.hw.clone());
    match path {
        Some(p) => HardwareSpec::load(&p).with_context(|| format!("reading hardware file {}", p.display())),
        None => Ok(HardwareSpec::default()),
    }
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

fn cmd_quantize(a: &QuantizeArgs) -> anyhow::Result<ExitCode> {
    let hw = hardware(&a.common)?;
    let bytes = read(&a.input)?;
    let cm = if a.codes {
        read_code_matrix(&bytes)?
    } else {
        let (w, n, m) = read_raw_matrix(&bytes)?;
        let zero_mode = match a.zero_mode {
            ZeroArg::Real32 => ZeroMode::Real32,
            ZeroArg::Quantized => ZeroMode::Quantized,
        };
        let config = QuantConfig::new(a.bits, a.group_size, zero_mode)?;
        quantize_matrix(&w, n, m, config)?
    };
    let config = cm.config();
    let dims = (cm.rows(), cm.cols());
    let p = plan(&hw, &config, dims)?;
    let p = fit_plan(p, &config, hw.lanes as usize, hw.l1_bits, dims)?;
    let layout = match a.layout {
        LayoutArg::Zcurve => Layout::ZCurve,
        LayoutArg::Row => Layout::RowSequential,
    };
    let pm = lay_out_blocks(&cm, p, layout)?;
    write_weight_file(&pm, &a.output).with_context(|| format!("writing {}", a.output.display()))?;
    if let Err(e) = Prepared::new(&pm, Backend::detect()) {
        eprintln!("note: {e}; verify and bench will not run on this file");
    }
    let r = memory_report(&pm);
    match a.common.format {
        Format::Text => {
            println!("wrote {} ({} x {}, {}, {})", a.output.display(), dims.0, dims.1, config_text(&config), p);
            println!("weights     {:>14} bits", r.weight_bits);
            println!("scales      {:>14} bits", r.scale_bits);
            println!("zero-points {:>14} bits", r.zero_bits);
            println!("total       {:>14} bits", r.total_bits);
            println!("dense f32   {:>14} bits (ratio {:.4})", r.dense_bits, r.ratio);
        }
        Format::Records => {
            println!(
                "memory rows={} cols={} bits={} weight_bits={} scale_bits={} zero_bits={} total_bits={} dense_bits={} ratio={:.6}",
                dims.0, dims.1, config.bits, r.weight_bits, r.scale_bits, r.zero_bits, r.total_bits, r.dense_bits, r.ratio
            );
            println!("plan m_u={} t_u={} m_b={} t_b={}", p.m_u, p.t_u, p.m_b, p.t_b);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn config_text(c: &QuantConfig) -> String {
    let zero = match c.zero_mode {
        ZeroMode::Real32 => "real32",
        ZeroMode::Quantized => "quantized",
    };
    format!("{}-bit, group {}, {zero} zeros", c.bits, c.group_size)
}

fn cmd_plan(a: &PlanArgs) -> anyhow::Result<ExitCode> {
    let hw = hardware(&a.common)?;
    let config = QuantConfig::new(a.bits, a.group_size, ZeroMode::Real32)?;
    let dims = (a.rows, a.cols);
    let p = plan(&hw, &config, dims)?;
    let fit = fit_plan(p, &config, hw.lanes as usize, hw.l1_bits, dims)?;
    let b = config.bits.get();
    let reg = p.register_cost();
    let cache = p.cache_cost(b);
    let congruent = p.m_b % p.m_u == 0 && p.t_b % p.t_u == 0;
    match a.common.format {
        Format::Text => {
            println!("{p}");
            println!(
                "registers: m_u + m_u*t_u + t_u = {reg} <= {} (slack {})",
                hw.vregs,
                hw.vregs as i64 - reg as i64
            );
            println!(
                "cache:     32*m_b + {b}*m_b*t_b + 32*t_b = {cache} <= {} (slack {})",
                hw.l1_bits,
                hw.l1_bits as i64 - cache as i64
            );
            println!(
                "multiples: m_b % m_u = {}, t_b % t_u = {} ({})",
                p.m_b % p.m_u,
                p.t_b % p.t_u,
                if congruent { "ok" } else { "violated" }
            );
            println!("kernel layout: {fit} (cache cost {})", fit.cache_cost(b));
        }
        Format::Records => {
            println!(
                "plan m_u={} t_u={} m_b={} t_b={} register_cost={reg} vregs={} cache_cost={cache} l1_bits={} multiples={}",
                p.m_u, p.t_u, p.m_b, p.t_b, hw.vregs, hw.l1_bits, congruent
            );
            println!("layout m_u={} t_u={} m_b={} t_b={}", fit.m_u, fit.t_u, fit.m_b, fit.t_b);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_generate(a: &GenerateArgs) -> anyhow::Result<ExitCode> {
    let hw = hardware(&a.common)?;
    let (m_u, t_u) = select_register_tile(hw.vregs, None)?;
    let tile = TilePlan { m_u, t_u, m_b: m_u, t_b: t_u };
    let mut descs: Vec<KernelDescriptor> = Vec::new();
    for &bits in &a.bits {
        let bits = Bits::new(bits)?;
        for &g in &a.group_size {
            let d = KernelDescriptor::new(bits, Grouping::from_group_size(g), tile, hw.lanes as usize, hw.vregs)?;
            // grouped kernels take the group size at run time, so one source serves every g
            if !descs.iter().any(|e| e.name == d.name) {
                descs.push(d);
            }
        }
    }
    fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    for d in &descs {
        let k = generate_qgemv(d)?;
        let path = a.output.join(d.file_name());
        fs::write(&path, &k.source_text).with_context(|| format!("writing {}", path.display()))?;
        match a.common.format {
            Format::Text => println!("{} -> {}", k.entry_symbol, path.display()),
            Format::Records => println!("kernel name={} file={}", k.entry_symbol, path.display()),
        }
    }
    let manifest = a.output.join("manifest.txt");
    fs::write(&manifest, generate_manifest(&descs)).with_context(|| format!("writing {}", manifest.display()))?;
    if a.common.format == Format::Text {
        println!("{} kernels, manifest {}", descs.len(), manifest.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn load(path: &Path) -> anyhow::Result<PackedMatrix> {
    read_weight_file(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_verify(a: &VerifyArgs) -> anyhow::Result<ExitCode> {
    let hw = hardware(&a.common)?;
    let threads = a.threads.unwrap_or(hw.threads as usize);
    let pm = load(&a.input)?;
    let mut optimized = pm.clone();
    if a.inject_fault {
        let words = optimized.words_mut();
        if words.is_empty() {
            bail!(FormatError("no payload words to corrupt".into()));
        }
        let k = words.len() / 2;
        words[k] = !words[k];
        eprintln!("fault injected: payload word {k} inverted");
    }
    if a.trials == 0 {
        eprintln!("warning: 0 trials, nothing was compared");
    }
    let prepared = Prepared::new(&optimized, Backend::detect())?;
    let group = pm.config().group_size;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..a.trials {
        let x = random_input(&mut rng, pm.rows());
        let mut y = vec![0f32; pm.cols()];
        prepared.run(&x, &input_sums(&x, group)?, threads, &mut y)?;
        let r = qgemv_reference(&pm, &x)?;
        worst = worst.max(stats::rel_err(&y, &r));
    }
    let pass = worst <= TOLERANCE;
    let status = if pass { "pass" } else { "fail" };
    match a.common.format {
        Format::Text => println!(
            "{status}: {} trials, max relative error {worst:.3e} (tolerance {TOLERANCE:e}), kernel {} on {}",
            a.trials,
            prepared.kernel_name(),
            prepared.backend().name()
        ),
        Format::Records => println!(
            "verify trials={} max_rel_err={worst:.6e} tolerance={TOLERANCE:e} kernel={} backend={} status={status}",
            a.trials,
            prepared.kernel_name(),
            prepared.backend().name()
        ),
    }
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_bench(a: &BenchArgs) -> anyhow::Result<ExitCode> {
    if a.repeats == 0 {
        bail!(UsageError("--repeats must be at least 1".into()));
    }
    let hw = hardware(&a.common)?;
    let threads = a.threads.unwrap_or(hw.threads as usize);
    if threads == 0 {
        bail!(UsageError("--threads must be at least 1".into()));
    }
    let pm = load(&a.input)?;
    let prepared = Prepared::new(&pm, Backend::detect())?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let x = random_input(&mut rng, pm.rows());
    let sums = input_sums(&x, pm.config().group_size)?;
    let mut y = vec![0f32; pm.cols()];

    let mut thread_counts = vec![1];
    if threads > 1 {
        thread_counts.push(threads);
    }
    let mut records = Vec::new();
    for &t in &thread_counts {
        let rates = stats::rates(a.repeats, || prepared.run(&x, &sums, t, &mut y))?;
        records.push(("optimized", t, rates));
    }
    let rates = stats::rates(a.repeats, || qgemv_reference(&pm, &x).map(|_| ()))?;
    records.push(("reference", 1, rates));

    for (path, t, rates) in records {
        let s = stats::summary(&rates);
        match a.common.format {
            Format::Text => println!(
                "{path:<9} threads={t:<3} {:>12.1} qGEMV/s median (IQR {:.1}) over {} runs",
                s.median,
                s.iqr,
                rates.len()
            ),
            Format::Records => println!(
                "bench path={path} threads={t} repeats={} median_per_s={:.3} iqr_per_s={:.3} kernel={} backend={}",
                rates.len(),
                s.median,
                s.iqr,
                prepared.kernel_name(),
                prepared.backend().name()
            ),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_info(a: &InfoArgs) -> anyhow::Result<ExitCode> {
    let h = read_header(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let fields = [
        ("version", h.version.to_string()),
        ("bits", h.bits.to_string()),
        ("zero_mode", if h.zero_mode == 0 { "real32" } else { "quantized" }.to_string()),
        ("rows", h.rows.to_string()),
        ("cols", h.cols.to_string()),
        ("group_size", GroupSize::from_raw(h.group_size).to_string()),
        ("layout", if h.layout == 0 { "row" } else { "zcurve" }.to_string()),
        ("m_u", h.m_u.to_string()),
        ("t_u", h.t_u.to_string()),
        ("m_b", h.m_b.to_string()),
        ("t_b", h.t_b.to_string()),
        ("payload_bytes", h.payload_len.to_string()),
        ("crc32", format!("{:08x}", h.crc32)),
    ];
    match a.format {
        Format::Text => {
            for (k, v) in fields {
                println!("{k:<14}{v}");
            }
        }
        Format::Records => {
            let line: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("header {}", line.join(" "));
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Bad flag values found after parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn is_format_error(e: &qigen_core::Error) -> bool {
    use qigen_core::Error::*;
    matches!(
        e,
        Io(_) | BadMagic(_) | VersionMismatch { .. } | Truncated { .. } | ChecksumMismatch { .. } | Malformed(_) | NonFinite { .. }
    )
}

/// 3 for I/O and format problems, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<std::io::Error>() || cause.is::<FormatError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<qigen_core::Error>() {
            return if is_format_error(e) { 3 } else { 2 };
        }
        if let Some(qigen_runtime::Error::Core(e)) = cause.downcast_ref::<qigen_runtime::Error>() {
            return if is_format_error(e) { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Quantize(a) => cmd_quantize(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Info(a) => cmd_info(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_flag() {
        assert_eq!(parse_group("full"), Ok(GroupSize::FullColumn));
        assert_eq!(parse_group("64"), Ok(GroupSize::Rows(64)));
        assert!(parse_group("0").is_err());
        assert!(parse_group("x").is_err());
    }

    #[test]
    fn exit_code_classes() {
        let io: anyhow::Error = std::io::Error::other("gone").into();
        assert_eq!(exit_code(&io.context("reading x")), 3);
        let cfg: anyhow::Error = qigen_core::Error::RaggedGroups { rows: 64, group_size: 48 }.into();
        assert_eq!(exit_code(&cfg), 2);
        let crc: anyhow::Error = qigen_core::Error::ChecksumMismatch { expected: 1, actual: 2 }.into();
        assert_eq!(exit_code(&crc), 3);
        let rt: anyhow::Error = qigen_runtime::Error::Threads.into();
        assert_eq!(exit_code(&rt), 2);
    }

    #[test]
    fn cli_definition() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
