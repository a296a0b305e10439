//! Experiment driver: builds models, runs engine and fleet experiments from
//! a config file, and emits logs and analysis tables. Every artifact lands
//! in one run directory so an experiment reproduces from (config, seed).

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use laws_core::analysis::{self, EnergyModel};
use laws_core::engine::{parse_log_line, LawsSystem, LogEntry};
use laws_core::fleet::{run_fleet, DayMetrics};
use laws_core::lipschitz;
use laws_core::workload::{sample_with_vocab, Source};
use laws_core::{expert, Sequence};

#[derive(Parser)]
#[command(name = "laws", about = "certified inference-cache experiment driver", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the weight-derived Lipschitz certificate and radius feasibility.
    Certify(CommonArgs),
    /// Run one engine experiment and write logs plus analysis tables.
    Run(CommonArgs),
    /// Run a fleet experiment and write per-day metrics and update deltas.
    Fleet(CommonArgs),
    /// Re-run analyzers over an existing run directory.
    Analyze(AnalyzeArgs),
    /// Generate a query trace file from the configured source.
    TraceGen(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Audit-rate override.
    #[arg(long)]
    audit_rate: Option<f64>,
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    /// Run directory containing log.txt (and growth.csv for the growth fit).
    #[arg(long)]
    log: PathBuf,
    /// Analyzers to run: energy, growth, hitrate.
    #[arg(long, value_delimiter = ',')]
    analyzers: Vec<String>,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Workload entropy in bits for the growth fit.
    #[arg(long)]
    h_bits: Option<f64>,
    /// Creation threshold for the growth fit.
    #[arg(long)]
    n_min: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Certify(a) => cmd_certify(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Fleet(a) => cmd_fleet(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::TraceGen(a) => cmd_trace_gen(&a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
    }
    if let Some(rate) = args.audit_rate {
        cfg.engine.audit_rate = rate;
    }
    Ok(cfg)
}

fn out_dir(args: &CommonArgs, cfg: &ExperimentConfig, default_name: &str) -> Result<PathBuf> {
    let dir = match &args.out {
        Some(d) => d.clone(),
        None if !cfg.output.dir.is_empty() => PathBuf::from(&cfg.output.dir),
        None => PathBuf::from(format!("runs/{default_name}")),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn cmd_certify(args: &CommonArgs) -> Result<ExitCode> {
    let cfg = load_config(args)?;
    let model = cfg.build_model()?;
    let cert = lipschitz::lambda(&model, model.config.n_max)?;
    let c_e = model.embedding_diameter()?;
    let r_min = model.min_embedding_separation()?;

    let mut out = String::new();
    out.push_str(&cert.to_text());
    out.push_str(&format!("C_E = {c_e:.9e}\nr_min = {r_min:.9e}\n"));

    if cert.vacuous {
        out.push_str("certificate vacuous: end-to-end constant overflowed; all radii <= 0\n");
        print!("{out}");
        eprintln!("error: vacuous certificate");
        return Ok(ExitCode::from(1));
    }

    let sys = LawsSystem::new(model, cfg.engine_config())?;
    let tau0 = expert::routing_radius(sys.delta, 0.0, sys.lambda, sys.c_e)?;
    out.push_str(&format!("delta = {:.9e}\n", sys.delta));
    out.push_str(&format!("tau_star(eps_fit=0) = {tau0:.6}\n"));
    out.push_str(&format!(
        "radius_feasible = {}\n",
        if tau0 > 0.0 { "yes" } else { "no (tau* < 0: no expert can be certified)" }
    ));
    print!("{out}");

    if let Some(dir) = args
        .out
        .clone()
        .or_else(|| (!cfg.output.dir.is_empty()).then(|| PathBuf::from(&cfg.output.dir)))
    {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("certificate.txt"), &out)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn generate_trace(cfg: &ExperimentConfig, n: u64, vocab: u32) -> Result<Vec<Sequence>> {
    let mut src = Source::new(cfg.source_spec()?, cfg.model.seed)?;
    Ok((0..n).map(|_| sample_with_vocab(&mut src, vocab)).collect())
}

fn cmd_run(args: &CommonArgs) -> Result<ExitCode> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg, "run")?;
    let model = cfg.build_model()?;
    let vocab = model.vocab();
    let mut sys = LawsSystem::new(model, cfg.engine_config())?;

    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    fs::write(dir.join("certificate.txt"), sys.certificate.to_text())?;

    let trace = generate_trace(&cfg, cfg.engine.queries, vocab)?;
    let trace_text: String = trace.iter().map(|s| format!("{s}\n")).collect();
    fs::write(dir.join("trace.txt"), trace_text)?;

    let mut log = String::new();
    let mut growth = String::from("n,library_size\n");
    let mut libsize = 0usize;
    for (i, x) in trace.iter().enumerate() {
        let r = sys.infer(x)?;
        log.push_str(&r.to_line());
        log.push('\n');
        if sys.library.len() != libsize {
            libsize = sys.library.len();
            growth.push_str(&format!("{},{}\n", i + 1, libsize));
        }
    }
    growth.push_str(&format!("{},{}\n", trace.len(), sys.library.len()));
    fs::write(dir.join("log.txt"), &log)?;
    fs::write(dir.join("growth.csv"), growth)?;
    fs::write(dir.join("trie.txt"), sys.trie.dump())?;
    fs::write(dir.join("experts.bin"), sys.library.serialize_all())?;

    let entries: Vec<LogEntry> = log.lines().map(parse_log_line).collect::<laws_core::Result<_>>()?;
    let measured = analysis::measured_energy_ratio(&entries).unwrap_or(1.0);
    let c = &sys.counters;
    let conservation_ok = sys.trie.check_count_conservation().is_empty();
    let summary = format!(
        "queries={}\nhits={}\nmisses={}\nhit_rate={:.6}\nlibrary_size={}\n\
         experts_created={}\naudited_hits={}\naudit_violations={}\n\
         extraction_fallbacks={}\nmeasured_energy_ratio={:.6e}\n\
         delta={:.9e}\nlambda={:.9e}\nc_e={:.9e}\ncount_conservation={}\n",
        c.queries,
        c.hits,
        c.misses,
        c.hits as f64 / c.queries.max(1) as f64,
        sys.library.len(),
        c.experts_created,
        c.audited_hits,
        c.audit_violations,
        c.extraction_fallbacks,
        measured,
        sys.delta,
        sys.lambda,
        sys.c_e,
        conservation_ok,
    );
    fs::write(dir.join("summary.txt"), &summary)?;
    print!("{summary}");

    for analyzer in &cfg.analyze.analyzers {
        match analyzer.as_str() {
            "energy" => write_energy_csv(&dir, &entries)?,
            "growth" => {
                let h_bits = cfg.source_spec()?.analytic_entropy();
                write_growth_csv(&dir, &dir, h_bits, cfg.engine.n_min)?;
            }
            "hitrate" => write_hitrate_csv(&dir, &entries)?,
            "demand" => {
                let profile = analysis::demand_profile(&sys.trie, &sys.library, 0.05)?;
                let csv = format!(
                    "selected,coverage,download_bytes,complete\n{},{:.6},{},{}\n",
                    profile.nodes.len(),
                    profile.coverage,
                    profile.download_bytes,
                    profile.complete
                );
                fs::write(dir.join("demand.csv"), csv)?;
            }
            other => bail!("unknown analyzer {other:?}"),
        }
    }

    Ok(if c.audit_violations == 0 && conservation_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_fleet(args: &CommonArgs) -> Result<ExitCode> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg, "fleet")?;
    let model = cfg.build_model()?;
    let fleet_cfg = cfg.fleet_config()?;
    let run = run_fleet(model, cfg.engine_config(), &fleet_cfg)?;

    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut csv = String::from(DayMetrics::csv_header());
    csv.push('\n');
    for m in &run.metrics {
        csv.push_str(&m.to_csv_row());
        csv.push('\n');
    }
    fs::write(dir.join("fleet_metrics.csv"), csv)?;

    // Update files: period header then the expert wire format.
    for d in &run.deltas {
        let mut bytes = d.period.to_le_bytes().to_vec();
        bytes.extend_from_slice(&d.bytes);
        fs::write(dir.join(format!("ota_day_{:04}.bin", d.period)), bytes)?;
    }

    let c = &run.system.counters;
    let conservation_ok = run.system.trie.check_count_conservation().is_empty();
    let total_delta_bits: u64 = run.metrics.iter().map(|m| m.delta_bits).sum();
    let summary = format!(
        "queries={}\nhits={}\nmisses={}\nhit_rate={:.6}\nlibrary_size={}\n\
         experts_created={}\naudited_hits={}\naudit_violations={}\n\
         total_delta_bits={}\ndays_to_90pct={}\ncount_conservation={}\n",
        c.queries,
        c.hits,
        c.misses,
        c.hits as f64 / c.queries.max(1) as f64,
        run.system.library.len(),
        c.experts_created,
        c.audited_hits,
        c.audit_violations,
        total_delta_bits,
        laws_core::fleet::days_to_hit_rate(&run.metrics, 0.9)
            .map(|d| d.to_string())
            .unwrap_or_else(|| "-".into()),
        conservation_ok,
    );
    fs::write(dir.join("summary.txt"), &summary)?;
    print!("{summary}");

    Ok(if c.audit_violations == 0 && conservation_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<ExitCode> {
    let run_dir = &args.log;
    let out = args.out.clone().unwrap_or_else(|| run_dir.clone());
    fs::create_dir_all(&out)?;
    let log_path = if run_dir.is_dir() {
        run_dir.join("log.txt")
    } else {
        run_dir.clone()
    };
    let text = fs::read_to_string(&log_path)
        .with_context(|| format!("reading {}", log_path.display()))?;
    let entries: Vec<LogEntry> = text
        .lines()
        .map(parse_log_line)
        .collect::<laws_core::Result<_>>()?;
    if entries.is_empty() {
        bail!("empty run log {}", log_path.display());
    }

    for analyzer in &args.analyzers {
        match analyzer.as_str() {
            "energy" => write_energy_csv(&out, &entries)?,
            "hitrate" => write_hitrate_csv(&out, &entries)?,
            "growth" => {
                let h_bits = args
                    .h_bits
                    .context("growth analyzer needs --h-bits (workload entropy)")?;
                let n_min = args.n_min.context("growth analyzer needs --n-min")?;
                let src_dir = if run_dir.is_dir() {
                    run_dir.clone()
                } else {
                    run_dir.parent().unwrap_or(Path::new(".")).to_path_buf()
                };
                write_growth_csv(&out, &src_dir, h_bits, n_min)?;
            }
            other => bail!("unknown analyzer {other:?}"),
        }
    }
    println!("analyzers written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_trace_gen(args: &CommonArgs) -> Result<ExitCode> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg, "trace")?;
    let model = cfg.build_model()?;
    let trace = generate_trace(&cfg, cfg.engine.queries, model.vocab())?;
    let text: String = trace.iter().map(|s| format!("{s}\n")).collect();
    let path = dir.join("trace.txt");
    fs::write(&path, text)?;
    println!("wrote {} queries to {}", trace.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn write_energy_csv(out: &Path, entries: &[LogEntry]) -> Result<()> {
    let measured = analysis::measured_energy_ratio(entries)?;
    let hits = entries.iter().filter(|e| e.hit).count();
    let hit_rate = hits as f64 / entries.len() as f64;
    let mut csv = String::from("metric,value\n");
    csv.push_str(&format!("measured_ratio,{measured:.6e}\n"));
    csv.push_str(&format!("hit_rate,{hit_rate:.6}\n"));
    if let Ok((c_hit, c_full)) = analysis::measured_path_costs(entries) {
        let closed =
            analysis::energy_ratio(&EnergyModel::from_measured(c_hit, c_full)?, hit_rate)?;
        csv.push_str(&format!("mean_hit_flops,{c_hit:.3}\n"));
        csv.push_str(&format!("mean_miss_flops,{c_full:.3}\n"));
        csv.push_str(&format!("closed_form_at_hit_rate,{closed:.6e}\n"));
    }
    fs::write(out.join("energy.csv"), csv)?;
    Ok(())
}

fn write_hitrate_csv(out: &Path, entries: &[LogEntry]) -> Result<()> {
    let window = (entries.len() / 50).max(1);
    let mut csv = String::from("n,window_hit_rate\n");
    for (i, chunk) in entries.chunks(window).enumerate() {
        let hits = chunk.iter().filter(|e| e.hit).count();
        csv.push_str(&format!(
            "{},{:.6}\n",
            (i + 1) * window,
            hits as f64 / chunk.len() as f64
        ));
    }
    fs::write(out.join("hitrate.csv"), csv)?;
    Ok(())
}

fn write_growth_csv(out: &Path, run_dir: &Path, h_bits: f64, n_min: u64) -> Result<()> {
    let growth_path = run_dir.join("growth.csv");
    let text = fs::read_to_string(&growth_path)
        .with_context(|| format!("reading {}", growth_path.display()))?;
    let series: Vec<(u64, usize)> = text
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut parts = l.split(',');
            let n = parts.next().unwrap_or("0").parse::<u64>().unwrap_or(0);
            let size = parts.next().unwrap_or("0").parse::<usize>().unwrap_or(0);
            (n, size)
        })
        .collect();
    let fit = analysis::growth_fit(&series, h_bits, n_min)?;
    let csv = format!(
        "c,residual,max_size,saturated\n{:.6},{:.6},{},{}\n",
        fit.c, fit.residual, fit.max_size, fit.saturated
    );
    fs::write(out.join("growth_fit.csv"), csv)?;
    Ok(())
}
