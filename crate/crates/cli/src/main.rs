//! `gibbslab`: command-line driver for the thinned-field experiments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use gibbslab::config::BoundaryCondition;
use gibbslab::constrained_sampler::{estimate_loophole, Init, SamplerOptions};
use gibbslab::contour::empirical_contour_check;
use gibbslab::dobrushin::{decay_bound, dobrushin_constant, default_rate};
use gibbslab::exact_oracle::{constrained_marginal, Constraint, KernelTable, MAX_ENUM_ENV};
use gibbslab::experiments::{run_decay_experiment, run_jump_experiment, run_phase_scan, JumpMode};
use gibbslab::lattice::{checkerboard, CheckerboardType, LatticeBox, Region};
use gibbslab::record::{self, ExperimentRecord, Quantity};
use gibbslab::runtime::{atomic_write, load_config, split_seed, ConfigLayer, OneOrMany, RunConfig};

#[derive(Parser)]
#[command(name = "gibbslab", version, about = "Thinned Bernoulli fields on Z^d")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    d: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; the extension (.csv or .json) picks the format.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format when `--out` has no telling extension or is absent.
    #[arg(long, global = true)]
    format: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Cap on unpruned enumeration sites (also read from GIBBSLAB_MAX_ENUM).
    #[arg(long, global = true)]
    max_enum: Option<usize>,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

/// Run-length flags shared by the sampling subcommands.
#[derive(Args, Clone, Default)]
struct RunLength {
    #[arg(long)]
    sweeps: Option<u64>,
    #[arg(long)]
    burn_in: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Ratio pairs for B_L and B_L + e_1, exact or sampled.
    Jump {
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        #[arg(long = "L", value_delimiter = ',')]
        l: Vec<i64>,
        #[arg(long, default_value = "mcmc")]
        mode: JumpMode,
        #[command(flatten)]
        run: RunLength,
    },
    /// Measured boundary influence on the kernel at the origin against the decay bound.
    Decay {
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        /// Half-widths of Δ.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
        r: Vec<i64>,
        #[arg(long, default_value_t = 4)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        width: i64,
    },
    /// Order-parameter gap and Dobrushin flag across a grid of p.
    Scan {
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        #[arg(long = "L")]
        l: Option<i64>,
        #[command(flatten)]
        run: RunLength,
    },
    /// Exact marginal of a constrained Bernoulli field on a region.
    Oracle {
        #[arg(long)]
        p: f64,
        /// Region in the text format (header line plus 0/1 rows).
        #[arg(long)]
        region_file: PathBuf,
        #[arg(long, default_value = "isolation")]
        constraint: Constraint,
        /// First layer outside the region: zeros, ones, type0 or type1.
        #[arg(long, default_value = "zeros")]
        bc: String,
        /// Sub-window for the marginal (default: the whole region).
        #[arg(long)]
        window_file: Option<PathBuf>,
        /// Pattern whose probability to report, e.g. `0,0=1;1,0=0`.
        #[arg(long)]
        event: Option<String>,
    },
    /// Origin occupation and groundstate frequency in a loophole volume.
    Sample {
        #[arg(long)]
        p: Option<f64>,
        #[arg(long = "L")]
        l: Option<i64>,
        /// Shift of the volume, comma separated (default: none).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        shift: Vec<i64>,
        #[arg(long, default_value = "auto")]
        init: Init,
        #[command(flatten)]
        run: RunLength,
    },
    /// Frequencies of small contours with their Peierls bounds, as JSON.
    Contours {
        #[arg(long)]
        p: Option<f64>,
        #[arg(long = "L")]
        l: Option<i64>,
        #[arg(long, value_delimiter = ',', default_value = "5,7,9")]
        sizes: Vec<usize>,
        #[command(flatten)]
        run: RunLength,
    },
    /// Dobrushin constant and decay bounds between the origin and [-L, L]^d, as JSON.
    Dobrushin {
        #[arg(long)]
        p: Option<f64>,
        #[arg(long = "L")]
        l: Option<i64>,
        /// Decay rate c (default ½ ln(1/(2dp))).
        #[arg(long)]
        c_rate: Option<f64>,
    },
}

fn layer(g: &Global, p: Option<Vec<f64>>, l: Option<Vec<i64>>, run: &RunLength) -> Result<ConfigLayer> {
    let env_cap = match std::env::var(MAX_ENUM_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse()
                .with_context(|| format!("{MAX_ENUM_ENV}={v} is not a site count"))?,
        ),
        Err(_) => None,
    };
    Ok(ConfigLayer {
        d: g.d,
        p: p.filter(|v| !v.is_empty()).map(OneOrMany::Many),
        l: l.filter(|v| !v.is_empty()).map(OneOrMany::Many),
        seed: g.seed,
        sweeps: run.sweeps,
        burn_in: run.burn_in,
        replicas: run.replicas,
        max_enum: g.max_enum.or(env_cap),
        threads: g.threads,
        out: g.out.clone(),
        format: g.format.as_deref().map(str::parse).transpose().map_err(anyhow::Error::msg)?,
    })
}

/// Layers the config and sizes the worker pool.
fn load(g: &Global, flags: ConfigLayer) -> Result<RunConfig> {
    let cfg = load_config(g.config.as_deref(), flags)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building the worker pool")?;
    }
    log::debug!("{cfg:?}");
    Ok(cfg)
}

fn sampler_options(cfg: &RunConfig, init: Init) -> SamplerOptions {
    SamplerOptions {
        sweeps: cfg.sweeps,
        burn_in: cfg.burn_in,
        seed: cfg.seed,
        replicas: cfg.replicas,
        init,
    }
}

fn write_records(cfg: &RunConfig, records: &[ExperimentRecord]) -> Result<()> {
    let format = cfg.output_format();
    match &cfg.out {
        Some(path) => {
            record::emit(records, format, path)?;
            log::info!("wrote {} records to {}", records.len(), path.display());
        }
        None => print!("{}", record::to_string(records, format)?),
    }
    Ok(())
}

fn write_json(cfg: &RunConfig, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match &cfg.out {
        Some(path) => atomic_write(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn read_region(path: &Path) -> Result<Region> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Region::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn boundary(region: &Region, kind: &str) -> Result<BoundaryCondition> {
    let outside = region.complement();
    Ok(match kind {
        "zeros" => BoundaryCondition::all_zeros(outside),
        "ones" => BoundaryCondition::all_ones(outside),
        "type0" => BoundaryCondition::explicit(checkerboard(&outside, CheckerboardType::Type0)),
        "type1" => BoundaryCondition::explicit(checkerboard(&outside, CheckerboardType::Type1)),
        other => bail!("unknown boundary condition `{other}` (zeros, ones, type0, type1)"),
    })
}

/// Probability of an event `x,y=v;...` under a table on its window.
fn event_probability(table: &KernelTable, event: &str) -> Result<f64> {
    let frame = table.window.frame();
    let sites = table.window.sites();
    let mut mask = 0u64;
    let mut want = 0u64;
    for part in event.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (coords, value) = part
            .split_once('=')
            .with_context(|| format!("event term `{part}` needs `=0` or `=1`"))?;
        let coords: Vec<i64> = coords
            .split(',')
            .map(|c| c.trim().parse())
            .collect::<Result<_, _>>()
            .with_context(|| format!("bad coordinates in `{part}`"))?;
        let site = frame
            .site(&coords)
            .with_context(|| format!("{coords:?} is outside the frame"))?;
        let i = sites
            .binary_search(&site)
            .map_err(|_| anyhow::anyhow!("{coords:?} is outside the window"))?;
        mask |= 1 << i;
        match value.trim() {
            "1" => want |= 1 << i,
            "0" => {}
            other => bail!("event value `{other}` must be 0 or 1"),
        }
    }
    Ok(table
        .patterns
        .iter()
        .filter(|(k, _)| *k & mask == want)
        .map(|(_, p)| p)
        .sum())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let none = RunLength::default();
    match &cli.command {
        Command::Jump { p, l, mode, run } => {
            let cfg = load(g, layer(g, Some(p.clone()), Some(l.clone()), run)?)?;
            let mut records = Vec::new();
            for &p in &cfg.p {
                log::info!("jump: p = {p}, L = {:?}, {mode:?}", cfg.l);
                let opts = SamplerOptions {
                    seed: split_seed(cfg.seed, &[p.to_bits()]),
                    ..sampler_options(&cfg, Init::Auto)
                };
                let report = run_jump_experiment(p, cfg.d, &cfg.l, *mode, &opts, &cfg.limits())?;
                records.extend(report.records());
            }
            write_records(&cfg, &records)
        }
        Command::Decay { p, r, trials, width } => {
            let cfg = load(g, layer(g, Some(p.clone()), None, &none)?)?;
            let mut records = Vec::new();
            for &p in &cfg.p {
                log::info!("decay: p = {p}, r = {r:?}");
                let seed = split_seed(cfg.seed, &[p.to_bits()]);
                let exp = run_decay_experiment(p, cfg.d, r, *trials, *width, seed, &cfg.limits())?;
                records.extend(exp.records());
            }
            write_records(&cfg, &records)
        }
        Command::Scan { p, l, run } => {
            let cfg = load(g, layer(g, Some(p.clone()), l.map(|l| vec![l]), run)?)?;
            let l = cfg.l[0];
            log::info!("scan: {} points at L = {l}", cfg.p.len());
            let scan = run_phase_scan(&cfg.p, cfg.d, l, &sampler_options(&cfg, Init::Auto))?;
            write_records(&cfg, &scan.records())
        }
        Command::Oracle {
            p,
            region_file,
            constraint,
            bc,
            window_file,
            event,
        } => {
            let cfg = load(g, layer(g, Some(vec![*p]), None, &none)?)?;
            let region = read_region(region_file)?;
            let window = match window_file {
                Some(path) => read_region(path)?,
                None => region.clone(),
            };
            let bc = boundary(&region, bc)?;
            let table = constrained_marginal(cfg.p[0], &region, &bc, *constraint, &window, &cfg.limits())?;
            let mut out = json!({ "p": cfg.p[0], "table": table.to_json() });
            if let Some(event) = event {
                out["event"] = json!({ "pattern": event, "prob": event_probability(&table, event)? });
            }
            write_json(&cfg, &out)
        }
        Command::Sample { p, l, shift, init, run } => {
            let cfg = load(g, layer(g, p.map(|p| vec![p]), l.map(|l| vec![l]), run)?)?;
            let shift = if shift.is_empty() { vec![0; cfg.d] } else { shift.clone() };
            if shift.len() != cfg.d {
                bail!("--shift has {} components, expected d = {}", shift.len(), cfg.d);
            }
            let mut records = Vec::new();
            for &p in &cfg.p {
                for &l in &cfg.l {
                    log::info!("sample: p = {p}, L = {l}, shift {shift:?}");
                    let opts = SamplerOptions {
                        seed: split_seed(cfg.seed, &[p.to_bits(), l as u64]),
                        ..sampler_options(&cfg, *init)
                    };
                    let est = estimate_loophole(p, cfg.d, l, &shift, &opts)?;
                    log::info!("effective sample size at the origin: {:.0}", est.origin.ess);
                    let stochastic = |e: gibbslab::constrained_sampler::Estimate| Quantity::Stochastic {
                        value: e.value,
                        se: e.se,
                    };
                    let mut rec = ExperimentRecord::new("sample", "mcmc", Some(opts.seed))
                        .param("p", p)
                        .param("d", cfg.d as f64)
                        .param("L", l as f64)
                        .param("sweeps", cfg.sweeps as f64)
                        .param("burn_in", cfg.burn_in as f64)
                        .param("replicas", cfg.replicas as f64)
                        .result("origin", stochastic(est.origin))
                        .result("ground_q", stochastic(est.ground_q));
                    for (axis, &x) in shift.iter().enumerate() {
                        rec = rec.param(&format!("shift{axis}"), x as f64);
                    }
                    records.push(rec);
                }
            }
            write_records(&cfg, &records)
        }
        Command::Contours { p, l, sizes, run } => {
            let cfg = load(g, layer(g, p.map(|p| vec![p]), l.map(|l| vec![l]), run)?)?;
            let (p, l) = (cfg.p[0], cfg.l[0]);
            log::info!("contours: p = {p}, L = {l}, sizes {sizes:?}");
            let rows = empirical_contour_check(p, cfg.d, l, sizes, &sampler_options(&cfg, Init::Auto))?;
            let histogram: BTreeMap<String, Value> = rows
                .iter()
                .map(|r| {
                    (
                        r.size.to_string(),
                        json!({ "frequency": r.frequency.value, "se": r.frequency.se, "bound": r.bound }),
                    )
                })
                .collect();
            write_json(
                &cfg,
                &json!({ "p": p, "d": cfg.d, "L": l, "seed": cfg.seed, "sweeps": cfg.sweeps, "histogram": histogram }),
            )
        }
        Command::Dobrushin { p, l, c_rate } => {
            let cfg = load(g, layer(g, p.map(|p| vec![p]), l.map(|l| vec![l]), &none)?)?;
            let d = cfg.d;
            let mut reports = Vec::new();
            for &p in &cfg.p {
                let constant = dobrushin_constant(p, d)?;
                let mut entry = json!({ "p": p, "d": d, "constant": constant });
                if constant.uniqueness {
                    let rate = match c_rate {
                        Some(c) => *c,
                        None => default_rate(p, d)?,
                    };
                    let mut decays = Vec::new();
                    for &l in &cfg.l {
                        let frame = std::sync::Arc::new(LatticeBox::cube(d, -l, l)?);
                        let lambda = Region::cube_in(frame.clone(), 0, 0);
                        let delta = Region::full(frame);
                        decays.push(decay_bound(&lambda, &delta, p, Some(rate))?);
                    }
                    entry["rate"] = json!(rate);
                    entry["decay"] = serde_json::to_value(decays)?;
                }
                reports.push(entry);
            }
            write_json(&cfg, &Value::Array(reports))
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
