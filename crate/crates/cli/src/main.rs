use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fuelseg::distance::Metric;
use fuelseg::report::{self, Bundle, PipelineConfig};
use fuelseg::{Error, Result};

#[derive(Parser)]
#[command(name = "fuelseg", version, about = "Distance-based segmentation of household fuel choice")]
struct Cli {
    /// Worker threads for permutation and distance work (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    nperm: Option<usize>,
    /// Restrict to one metric: euclidean or bray_curtis.
    #[arg(long, value_parser = parse_metric)]
    metric: Option<Metric>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and regroup the survey tables, write the abundance table.
    Ingest(Common),
    /// Sequential PERMANOVA over the configured terms.
    Permanova(Common),
    /// Pairwise PERMANOVA and dispersion test on the grouping factor.
    Dispersion(Common),
    /// Principal coordinates and level centroids.
    Pcoa(Common),
    /// Fitted fuel-share vectors on the ordination.
    Envfit(Common),
    /// Ward clustering of the ethnic fuel profiles.
    Cluster(Common),
    /// Shannon diversity and relative abundance.
    Diversity(Common),
    /// Kruskal-Wallis and pairwise Mann-Whitney tests.
    Tests(Common),
    /// Every stage, then figures and the run manifest.
    Run(Common),
    /// Redraw SVG figures from an existing output directory.
    Figures(Common),
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    Metric::parse(s).ok_or_else(|| format!("unknown metric `{s}` (expected euclidean or bray_curtis)"))
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(n) = c.nperm {
        cfg.n_perm = n;
    }
    if let Some(m) = c.metric {
        cfg.metrics = vec![m];
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cmd: Command) -> Result<()> {
    if let Command::Figures(c) = &cmd {
        let (dir, metric, group) = match (&c.config, &c.out) {
            (None, Some(out)) => (out.clone(), c.metric.unwrap_or(Metric::Euclidean), "ethnicity".to_string()),
            _ => {
                let cfg = load_config(c)?;
                (cfg.out_dir.clone(), cfg.metrics[0], cfg.group.clone())
            }
        };
        let mut bundle = Bundle::create(dir)?;
        for p in report::emit_figures(&mut bundle, metric, &group)? {
            println!("{}", p.display());
        }
        return Ok(());
    }
    let c = match &cmd {
        Command::Ingest(c)
        | Command::Permanova(c)
        | Command::Dispersion(c)
        | Command::Pcoa(c)
        | Command::Envfit(c)
        | Command::Cluster(c)
        | Command::Diversity(c)
        | Command::Tests(c)
        | Command::Run(c)
        | Command::Figures(c) => c.clone(),
    };
    let cfg = load_config(&c)?;
    if let Command::Run(_) = cmd {
        let summary = report::run_pipeline(&cfg)?;
        println!("{} files written to {}", summary.outputs.len(), summary.out_dir.display());
        return Ok(());
    }

    let mut bundle = Bundle::create(&cfg.out_dir)?;
    let (table, _) = report::stage_ingest(&cfg, &mut bundle)?;
    match cmd {
        Command::Cluster(_) => {
            report::stage_clustering(&cfg, &table, &mut bundle)?;
        }
        Command::Diversity(_) => {
            report::stage_diversity(&cfg, &table, &mut bundle)?;
        }
        Command::Tests(_) => {
            let frame = report::stage_diversity(&cfg, &table, &mut bundle)?;
            report::stage_tests(&cfg, &table, &frame, &mut bundle)?;
        }
        Command::Permanova(_) | Command::Dispersion(_) | Command::Pcoa(_) | Command::Envfit(_) => {
            for &metric in &cfg.metrics {
                let d = report::treatment_distances(&cfg, &table, metric)?;
                match cmd {
                    Command::Permanova(_) => {
                        report::stage_permanova(&cfg, &table, &d, &mut bundle)?;
                    }
                    Command::Dispersion(_) => report::stage_dispersion(&cfg, &table, &d, &mut bundle)?,
                    Command::Pcoa(_) => {
                        report::stage_pcoa(&cfg, &table, &d, &mut bundle)?;
                    }
                    _ => {
                        let ord = report::stage_pcoa(&cfg, &table, &d, &mut bundle)?
                            .ok_or_else(|| Error::Config("envfit needs k >= 1".into()))?;
                        report::stage_envfit(&cfg, &table, &ord, metric, &mut bundle)?;
                    }
                }
            }
        }
        _ => {}
    }
    for name in bundle.written() {
        println!("{}", bundle.path(name).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
