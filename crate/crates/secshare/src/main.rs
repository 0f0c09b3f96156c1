use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use secshare::config::{parse_seed, RunConfig, TransportKind};
use secshare::formats;
use secshare::report::RunReport;
use secshare::run::{self, BenchSuite, Command};
use secshare::{AppError, AppResult};
use secshare_core::PartyId;

/// Two-party secret-sharing engine: dealer, training, inference and
/// protocol benchmarks.
#[derive(Parser)]
#[command(name = "secshare", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write one correlation pool file per party.
    DealerGen {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        pools: PathBuf,
        #[arg(long, value_parser = parse_seed)]
        seed: Option<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the configured network on shares.
    Train {
        #[command(flatten)]
        common: Common,
        /// Full dataset for 15 epochs.
        #[arg(long)]
        full_run: bool,
    },
    /// Classify test images with a shared model.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Number of test images; overrides the configuration.
        #[arg(long)]
        images: Option<usize>,
    },
    /// Time one protocol and report rounds and bytes per operation.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        suite: BenchSuite,
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PartyArg {
    #[value(name = "0")]
    Zero,
    #[value(name = "1")]
    One,
    Both,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    party: PartyArg,
    /// Defaults to the configuration's transport.
    #[arg(long, value_enum)]
    transport: Option<TransportKind>,
    /// Address party 0 listens on.
    #[arg(long)]
    listen: Option<String>,
    /// Address party 1 connects to.
    #[arg(long)]
    connect: Option<String>,
    /// Directory with pool files; the dealer stream is used otherwise.
    #[arg(long)]
    pools: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
}

fn load(config: &Path, seed: Option<u64>) -> AppResult<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn emit(reports: &[RunReport], path: Option<&PathBuf>) -> AppResult<()> {
    let json = serde_json::to_string_pretty(reports).expect("reports serialise");
    println!("{json}");
    if let Some(p) = path {
        formats::write_file(p, json.as_bytes())?;
    }
    Ok(())
}

fn execute(common: Common, mut cfg: RunConfig, cmd: Command) -> AppResult<()> {
    let transport = common.transport.unwrap_or(cfg.transport.kind);
    if let Some(t) = common.transport {
        cfg.transport.kind = t;
    }
    let pools = common.pools.as_deref();
    let reports = match (common.party, transport) {
        (PartyArg::Both, TransportKind::Mem) => run::run_both(&cfg, &cmd, pools)?.to_vec(),
        (PartyArg::Both, TransportKind::Tcp) => {
            return Err(AppError::Config("--party both runs in process; use --transport mem".into()));
        }
        (_, TransportKind::Mem) => {
            return Err(AppError::Config("the mem transport needs --party both".into()));
        }
        (party, TransportKind::Tcp) => {
            let id = if party == PartyArg::Zero { PartyId::P0 } else { PartyId::P1 };
            let addr = match id {
                PartyId::P0 => common.listen.clone(),
                PartyId::P1 => common.connect.clone(),
            }
            .unwrap_or_else(|| cfg.transport.address.clone());
            vec![run::run_tcp(&cfg, id, &cmd, pools, &addr)?]
        }
    };
    emit(&reports, common.report.as_ref())
}

fn main_inner(cli: Cli) -> AppResult<()> {
    match cli.command {
        Cmd::DealerGen { config, pools, seed, report } => {
            let cfg = load(&config, seed)?;
            let r = run::dealer_gen(&cfg, &pools)?;
            let d = r.dealer.as_ref().expect("dealer report");
            eprintln!(
                "pool inventory: {} triples, {} prime triples, {} masks, {} matrix triples per party",
                d.triples, d.prime_triples, d.masks, d.mat_triples
            );
            emit(&[r], report.as_ref())
        }
        Cmd::Train { common, full_run } => {
            let mut cfg = load(&common.config, common.seed)?;
            cfg.train.full_run |= full_run;
            execute(common, cfg, Command::Train)
        }
        Cmd::Infer { common, images } => {
            let mut cfg = load(&common.config, common.seed)?;
            if let Some(n) = images {
                cfg.infer.images = n;
            }
            execute(common, cfg, Command::Infer)
        }
        Cmd::Bench { common, suite, n } => {
            let cfg = load(&common.config, common.seed)?;
            execute(common, cfg, Command::Bench { suite, n })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, AppError::Core(secshare_core::Error::Underrun { .. })) {
                eprintln!("hint: regenerate pools with larger counts (dealer-gen) or drop --pools to use the dealer stream");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
