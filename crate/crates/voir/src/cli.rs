//! Operator command line.

use std::io::{Read, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use voir_core::eval::{compare_modes, generate_benchmark, BenchmarkSpec, CompareSettings};
use voir_core::learning::{ClusterCount, ClusteringConfig};
use voir_core::stats::{fisher_sign_test, format_p_value, wilcoxon_signed_rank, Alternative};
use voir_core::{Mode, TermId};

use crate::ingest::{build_catalog, BuildInputs, FeatureSource};
use crate::journal::{read_journal, replay, Journal};
use crate::service::{AppState, ServiceOptions};
use crate::{formats, index};

#[derive(Debug, Parser)]
#[command(name = "voir", version, about = "Region-based conceptual image retrieval with relevance feedback")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build or re-cluster an index file.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Association learning over journaled sessions.
    #[command(subcommand)]
    Learn(LearnCommand),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Simulated-user evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Paired nonparametric tests on `a b` pairs read from stdin.
    #[command(subcommand)]
    Stats(StatsCommand),
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    Build(BuildArgs),
    Cluster(ClusterArgs),
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["images", "features"]))]
pub struct BuildArgs {
    /// Directory of PNG/PPM images, optionally with a regions.tsv.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Precomputed features file.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub thesaurus: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Manual associations, `term_label TAB region_key` per line.
    #[arg(long)]
    pub associations: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KArg(pub ClusterCount);

impl std::str::FromStr for KArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(KArg(ClusterCount::Auto));
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(KArg(ClusterCount::Fixed(k))),
            _ => Err(format!("expected a positive integer or 'auto', got {s:?}")),
        }
    }
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, default_value = "auto")]
    pub k: KArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    /// Defaults to rewriting the input index.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LearnCommand {
    /// Replay a session journal into the index.
    Update(UpdateArgs),
}

#[derive(Debug, Args)]
pub struct UpdateArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub journal: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Voir1,
    Voir2,
    Voir3,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Voir1 => Mode::Voir1,
            ModeArg::Voir2 => Mode::Voir2,
            ModeArg::Voir3 => Mode::Voir3,
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    /// Mode for sessions that do not request one.
    #[arg(long, value_enum, default_value = "voir3")]
    pub mode: ModeArg,
    /// Append judgments and manual associations here.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Directory with thumbnails/ and crops/.
    #[arg(long)]
    pub media: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, default_value_t = 50)]
    pub seeds: u64,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub iterations: usize,
    #[arg(long, default_value_t = 5)]
    pub judgments: usize,
    /// Evaluate an index instead of the synthetic benchmark; needs region
    /// labels or image keywords as ground truth.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub benchmark_seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AltArg {
    Greater,
    Less,
}

impl From<AltArg> for Alternative {
    fn from(a: AltArg) -> Self {
        match a {
            AltArg::Greater => Alternative::Greater,
            AltArg::Less => Alternative::Less,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// One-tailed sign test on the pairs' wins and losses.
    Sign(StatsArgs),
    /// One-tailed Wilcoxon matched-pairs signed-ranks test.
    Wilcoxon(StatsArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Direction of the alternative for `a - b`.
    #[arg(long, value_enum, default_value = "greater")]
    pub alternative: AltArg,
}

pub fn run(cli: Cli, stdin: &mut dyn Read, stdout: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Index(IndexCommand::Build(a)) => {
            let source = match (a.images, a.features) {
                (Some(d), None) => FeatureSource::Images(d),
                (None, Some(f)) => FeatureSource::Features(f),
                _ => bail!("exactly one of --images and --features is required"),
            };
            let catalog = build_catalog(&BuildInputs { source, thesaurus: a.thesaurus, annotations: a.annotations, associations: a.associations })?;
            let m = index::save_index(&catalog, &a.out)?;
            writeln!(stdout, "wrote {}: {} images, {} regions, {} terms", a.out.display(), m.counts.images, m.counts.regions, m.counts.terms)?;
        }
        Command::Index(IndexCommand::Cluster(a)) => {
            let mut catalog = index::load_index(&a.index)?;
            let cfg = ClusteringConfig { k: a.k.0, rng_seed: a.seed, max_iterations: a.max_iterations, ..ClusteringConfig::default() };
            let cats = catalog.cluster(&cfg)?;
            let out = a.out.unwrap_or(a.index);
            index::save_index(&catalog, &out)?;
            writeln!(stdout, "wrote {}: {} visual categories, {} associations", out.display(), cats.len(), catalog.association_count())?;
        }
        Command::Learn(LearnCommand::Update(a)) => {
            let mut catalog = index::load_index(&a.index)?;
            let entries = read_journal(&a.journal)?;
            let s = replay(&mut catalog, &entries)?;
            let out = a.out.unwrap_or(a.index);
            index::save_index(&catalog, &out)?;
            writeln!(
                stdout,
                "replayed {} judgments ({} skipped) and {} manual associations; {} association changes; wrote {}",
                s.judgments,
                s.skipped,
                s.manual_added,
                s.changes,
                out.display()
            )?;
        }
        Command::Serve(a) => {
            let catalog = index::load_index(&a.index)?;
            let journal = a.journal.as_deref().map(Journal::open).transpose()?;
            let state = AppState::new(catalog, ServiceOptions { default_mode: Some(a.mode.into()), journal, media_dir: a.media });
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::service::serve(state, SocketAddr::new(a.bind, a.port)))?;
        }
        Command::Eval(EvalCommand::Compare(a)) => {
            let catalog = match &a.index {
                Some(p) => index::load_index(p)?,
                None => generate_benchmark(&BenchmarkSpec { seed: a.benchmark_seed, ..BenchmarkSpec::default() })?,
            };
            let terms: Vec<TermId> =
                catalog.thesaurus().terms().map(|t| t.id).filter(|t| catalog.term_examples(*t).is_ok_and(|e| !e.is_empty())).collect();
            let seeds: Vec<u64> = (0..a.seeds).collect();
            let settings = CompareSettings { k: a.k, max_iterations: a.iterations, judgments_per_iteration: a.judgments, ..CompareSettings::default() };
            let report = compare_modes(&catalog, &terms, &seeds, &settings)?;
            write!(stdout, "{}", report.to_table())?;
            if let Some(out) = &a.out {
                std::fs::write(out, report.to_csv()).with_context(|| format!("writing {}", out.display()))?;
            }
        }
        Command::Stats(cmd) => {
            let mut text = String::new();
            stdin.read_to_string(&mut text)?;
            let (a, b) = formats::parse_pairs("<stdin>", &text)?;
            match cmd {
                StatsCommand::Sign(s) => {
                    let plus = a.iter().zip(&b).filter(|(x, y)| x > y).count() as u64;
                    let minus = a.iter().zip(&b).filter(|(x, y)| x < y).count() as u64;
                    if plus + minus == 0 {
                        writeln!(stdout, "plus=0 minus=0 p=no evidence")?;
                    } else {
                        let p = fisher_sign_test(plus, minus, s.alternative.into())?;
                        writeln!(stdout, "plus={plus} minus={minus} p={} exact={p:e}", format_p_value(p))?;
                    }
                }
                StatsCommand::Wilcoxon(s) => {
                    let r = wilcoxon_signed_rank(&a, &b, s.alternative.into())?;
                    writeln!(
                        stdout,
                        "m={} w_plus={} p={} exact={} value={:e}",
                        r.m,
                        r.w_plus,
                        format_p_value(r.p_value),
                        r.exact,
                        r.p_value
                    )?;
                }
            }
        }
    }
    Ok(())
}
