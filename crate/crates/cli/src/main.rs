//! `atsc`: drives the service from the command line.
//!
//! Without `--server` the service runs in-process on a loopback port for the
//! duration of the command.

mod vocab;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use atsc_client::Client;
use atsc_core::api::{
    CorpusRequest, IngestRequest, PredictItem, PredictRequest, PretrainRequest, ReportRequest, RunRequest,
    TableFormat,
};
use atsc_core::backend::{BackendFamily, Provenance};
use atsc_core::config::{ProjectConfig, SemevalFile};
use atsc_core::experiments::{GridSpec, Split};
use atsc_core::heads::{HeadKind, NliScoring};
use atsc_core::metrics::ZTestOptions;
use atsc_core::report::Layout;
use atsc_core::{Domain, Task};
use atsc_neural::scratch::{write_scratch_model, ScratchSpec};
use atsc_neural::CandleFactory;
use atsc_server::{AppState, Service};
use clap::{Parser, Subcommand, ValueEnum};
use tokio::net::TcpListener;
use tracing::warn;

const DEFAULT_CONFIG: &str = "atsc.toml";

#[derive(Parser)]
#[command(name = "atsc", version, about = "Prompt-based aspect sentiment classification experiments")]
struct Cli {
    /// Project config (TOML); `./atsc.toml` when present.
    #[arg(long, global = true, env = "ATSC_CONFIG")]
    config: Option<PathBuf>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Comma-separated seeds, overriding the config.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,

    /// Grid worker threads (0 picks one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Talk to a running service instead of starting one in-process.
    #[arg(long, global = true, env = "ATSC_SERVER")]
    server: Option<String>,

    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and preprocess SemEval XML into record files.
    Ingest {
        /// `domain:task:split:path`, repeatable; the configured files otherwise.
        #[arg(long = "file", value_parser = parse_semeval_file)]
        files: Vec<SemevalFile>,
    },
    /// Extract the in-domain sentence stream from the review corpus.
    Corpus {
        #[arg(long)]
        domain: Domain,
        #[arg(long)]
        max_reviews: Option<usize>,
    },
    /// Continue self-supervised training of a generic backend on one domain.
    Pretrain {
        #[arg(long)]
        family: BackendFamily,
        #[arg(long)]
        domain: Domain,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        max_reviews: Option<usize>,
    },
    /// Run an experiment grid.
    Run {
        /// Grid spec (TOML); the config's `[experiment]` otherwise.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Tabulate finished runs.
    Report {
        #[arg(long, default_value = "main")]
        layout: Layout,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Results directory; the output directory otherwise.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Two-sided instead of one-sided significance marks.
        #[arg(long)]
        two_sided: bool,
        /// Also write the table to stdout.
        #[arg(long)]
        print: bool,
    },
    /// Zero-shot prediction for one review and aspect.
    Predict {
        #[arg(long)]
        head: HeadKind,
        #[arg(long)]
        template: Option<String>,
        #[arg(long)]
        domain: Domain,
        #[arg(long, default_value = "generic")]
        provenance: Provenance,
        #[arg(long)]
        text: String,
        #[arg(long)]
        aspect: String,
    },
    /// Run the HTTP service in the foreground.
    Serve {
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Write a small randomly initialised checkpoint for offline use.
    ScratchModel {
        #[arg(long)]
        family: BackendFamily,
        #[arg(long)]
        dir: PathBuf,
        /// Text, JSON-lines or record files whose words form the vocabulary.
        #[arg(long = "vocab-from", required = true)]
        vocab_from: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

fn parse_semeval_file(s: &str) -> Result<SemevalFile, String> {
    let mut parts = s.splitn(4, ':');
    let mut next = |what: &str| parts.next().ok_or(format!("missing {what} in `{s}`"));
    let domain: Domain = next("domain")?.parse().map_err(|e| format!("{e}"))?;
    let task: Task = next("task")?.parse().map_err(|e| format!("{e}"))?;
    let split = match next("split")? {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(format!("unknown split `{other}`")),
    };
    let path = PathBuf::from(next("path")?);
    Ok(SemevalFile {
        domain,
        task,
        split,
        path,
    })
}

fn load_config(cli: &Cli) -> anyhow::Result<ProjectConfig> {
    let mut config = match &cli.config {
        Some(path) => ProjectConfig::load(path)?,
        None if Path::new(DEFAULT_CONFIG).is_file() => ProjectConfig::load(Path::new(DEFAULT_CONFIG))?,
        None => {
            let mut config = ProjectConfig::default();
            config.apply_env(|k| std::env::var(k).ok());
            config
        }
    };
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(seeds) = &cli.seed_list {
        config.seeds = seeds.clone();
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    Ok(config)
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn state(config: ProjectConfig) -> anyhow::Result<AppState> {
    Ok(AppState::new(Service::new(config, Arc::new(CandleFactory))?))
}

/// Connects to `--server`, or starts the service on a loopback port.
async fn connect(cli: &Cli) -> anyhow::Result<Client> {
    if let Some(url) = &cli.server {
        if cli.out.is_some() || cli.config.is_some() {
            warn!("--out and --config are ignored when talking to a running server");
        }
        return Ok(Client::new(url.clone()));
    }
    let state = state(load_config(cli)?)?;
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(atsc_server::serve(listener, state));
    Ok(Client::new(format!("http://{addr}")))
}

fn read_grid(path: &Path, seeds: Option<&Vec<u64>>) -> anyhow::Result<GridSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut grid: GridSpec = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(seeds) = seeds {
        grid.seeds = seeds.clone();
    }
    Ok(grid)
}

async fn execute(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Serve { bind } => {
            let config = load_config(cli)?;
            let bind = bind.clone().unwrap_or_else(|| config.server.bind.clone());
            let state = state(config)?;
            let listener = TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
            println!("listening on http://{}", listener.local_addr()?);
            atsc_server::serve(listener, state).await?;
            return Ok(());
        }
        Command::ScratchModel {
            family,
            dir,
            vocab_from,
            seed,
        } => {
            let config = load_config(cli)?;
            let words = vocab::collect(vocab_from, &config)?;
            write_scratch_model(dir, &ScratchSpec::tiny(*family, *seed), &words)?;
            println!("wrote {} scratch model ({} words) to {}", family.as_str(), words.len(), dir.display());
            return Ok(());
        }
        _ => {}
    }
    let client = connect(cli).await?;
    match &cli.command {
        Command::Ingest { files } => {
            let request = IngestRequest {
                files: (!files.is_empty()).then(|| files.clone()),
            };
            let response = client.ingest(&request).await?;
            let examples: usize = response.files.iter().map(|f| f.examples).sum();
            println!(
                "ingested {} files ({examples} examples), fingerprint {}, manifest {}",
                response.files.len(),
                response.fingerprint,
                response.manifest.display()
            );
        }
        Command::Corpus { domain, max_reviews } => {
            let response = client
                .corpus(&CorpusRequest {
                    domain: *domain,
                    max_reviews: *max_reviews,
                })
                .await?;
            println!(
                "{domain}: {} sentences from {} reviews, fingerprint {}, written to {}",
                response.sentences,
                response.reviews,
                response.fingerprint,
                response.path.display()
            );
        }
        Command::Pretrain {
            family,
            domain,
            output,
            max_reviews,
        } => {
            let summary = client
                .pretrain(&PretrainRequest {
                    family: *family,
                    domain: *domain,
                    output: output.clone(),
                    max_reviews: *max_reviews,
                })
                .await?;
            let loss = summary.epoch_losses.last().map_or("n/a".into(), |l| format!("{l:.4}"));
            println!(
                "adapted {} to {domain}: {} steps, final loss {loss}, checkpoint {}",
                family.as_str(),
                summary.steps,
                summary.checkpoint.display()
            );
        }
        Command::Run { grid } => {
            let grid = grid.as_deref().map(|p| read_grid(p, cli.seed_list.as_ref())).transpose()?;
            let summary = client
                .run(&RunRequest {
                    grid,
                    workers: cli.workers,
                })
                .await?;
            println!(
                "{} runs in {} cells, {} failed, results in {}",
                summary.runs,
                summary.cells,
                summary.failures.len(),
                summary.out.display()
            );
            if !summary.failures.is_empty() {
                for failure in &summary.failures {
                    eprintln!("failed: {}", failure.error);
                }
                bail!("{} runs failed", summary.failures.len());
            }
        }
        Command::Report {
            layout,
            format,
            results,
            two_sided,
            print,
        } => {
            let mut z_test = ZTestOptions::default();
            if *two_sided {
                z_test.sidedness = atsc_core::metrics::Sidedness::TwoSided;
            }
            let response = client
                .report(&ReportRequest {
                    layout: *layout,
                    format: match format {
                        Format::Csv => TableFormat::Csv,
                        Format::Text => TableFormat::Text,
                    },
                    results: results.clone(),
                    z_test,
                })
                .await?;
            if *print {
                print!("{}", response.body);
            }
            println!("{layout} table written to {}", response.path.display());
        }
        Command::Predict {
            head,
            template,
            domain,
            provenance,
            text,
            aspect,
        } => {
            let response = client
                .predict(&PredictRequest {
                    head: *head,
                    template: template.clone(),
                    domain: *domain,
                    provenance: *provenance,
                    scoring: NliScoring::default(),
                    items: vec![PredictItem {
                        text: text.clone(),
                        aspect: aspect.clone(),
                    }],
                })
                .await?;
            for p in &response.predictions {
                let d = p.distribution;
                println!(
                    "{} (positive {:.4}, negative {:.4}, neutral {:.4}) via {}",
                    p.label, d.positive, d.negative, d.neutral, response.backend
                );
            }
        }
        Command::Serve { .. } | Command::ScratchModel { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(execute(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
