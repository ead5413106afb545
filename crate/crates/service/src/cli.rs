//! Command-line front end.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sdrec_core::data::{generate_synthetic, write_embeddings, write_logs, Dataset, PlayerId, SyntheticConfig};
use sdrec_core::features::{build_preferences, Features};
use sdrec_core::metrics::{mean_quality, mean_sd, quality, sd_metrics, METRIC_CHANNEL};
use sdrec_core::pipeline::{run_pipeline, PipelineConfig, PreferenceRatio};
use sdrec_core::ranker::{
    build_training_set, build_training_set_within, evaluate, rank, split_players, train, PairFeaturizer,
};

use crate::config::Config;

#[derive(Parser, Debug)]
#[command(name = "sdrec", version, about = "Diversity-aware friend recommendation")]
pub struct Cli {
    /// TOML file overriding the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic population as logs.jsonl and embeddings.txt.
    Generate {
        #[arg(long, default_value_t = 500)]
        players: usize,
        #[arg(long, default_value_t = 3)]
        groups: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate logs and print a summary.
    Ingest(Input),
    /// Write preference vectors as TSV.
    Extract {
        #[command(flatten)]
        input: Input,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank candidates under a preference ratio and report SD metrics.
    Recommend {
        #[command(flatten)]
        input: Input,
        /// PreferenceRatio JSON file.
        #[arg(long)]
        ratio: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict to these players; repeatable. All players when absent.
        #[arg(long = "player")]
        players: Vec<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a `recommend` output against post-split friendships, or report
    /// held-out ranker metrics when no recommendations are given.
    Evaluate {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        recs: Option<PathBuf>,
        /// Fraction of players held out for the ranker evaluation.
        #[arg(long, default_value_t = 0.3)]
        test_fraction: f64,
    },
    /// Start the HTTP API.
    Serve {
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct Input {
    /// Interaction log: a JSON header line, then one JSON record per player-day.
    #[arg(long)]
    pub logs: PathBuf,
    /// Avatar embeddings: one `avatar_id v0 v1 ...` line per avatar.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

impl Input {
    fn load(&self) -> Result<Dataset> {
        Dataset::load(&self.logs, self.embeddings.as_deref())
            .with_context(|| format!("loading {}", self.logs.display()))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = Config::load(cli.config.as_deref())?;
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Generate { players, groups, seed, out } => generate(players, groups, seed, &out),
        Command::Ingest(input) => {
            let ds = input.load()?;
            writeln!(stdout, "players\t{}", ds.len())?;
            writeln!(stdout, "span_days\t{}", ds.span_days)?;
            writeln!(stdout, "split_day\t{}", ds.split_day)?;
            writeln!(stdout, "modes\t{}", ds.modes.join(","))?;
            writeln!(stdout, "avatars_embedded\t{}", ds.avatar_visual_embeddings.len())?;
            writeln!(stdout, "mean_friends_before\t{:.4}", ds.mean_friends_before())?;
            writeln!(stdout, "mean_friends_after\t{:.4}", ds.mean_friends_after())?;
            Ok(())
        }
        Command::Extract { input, out } => {
            let ds = input.load()?;
            let features = build_preferences(&ds, &config.features)?;
            with_output(out.as_deref(), |w| Ok(features.write_tsv(w)?))
        }
        Command::Recommend { input, ratio, n, seed, players, out } => {
            let ds = input.load()?;
            let text = std::fs::read_to_string(&ratio).with_context(|| format!("reading {}", ratio.display()))?;
            let ratio = PreferenceRatio::from_json(&text)?;
            let players: Vec<PlayerId> = players.into_iter().map(PlayerId).collect();
            with_output(out.as_deref(), |w| {
                recommend(&ds, &config, &ratio, n.unwrap_or(config.recommend.n), seed, &players, w)
            })
        }
        Command::Evaluate { input, recs, test_fraction } => {
            let ds = input.load()?;
            match recs {
                Some(path) => evaluate_recs(&ds, &path, &mut stdout),
                None => evaluate_ranker(&ds, &config, test_fraction, &mut stdout),
            }
        }
        Command::Serve { listen, data_dir } => {
            let mut config = config;
            if let Some(l) = listen {
                config.listen = l;
            }
            if let Some(d) = data_dir {
                config.data_dir = d;
            }
            serve(config)
        }
    }
}

fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(&mut std::io::stdout().lock()),
    }
}

fn generate(players: usize, groups: usize, seed: u64, out: &Path) -> Result<()> {
    let ds = generate_synthetic(&SyntheticConfig::new(players, groups, seed))?;
    std::fs::create_dir_all(out)?;
    let mut logs = BufWriter::new(File::create(out.join("logs.jsonl"))?);
    write_logs(&ds, &mut logs)?;
    logs.flush()?;
    let mut emb = BufWriter::new(File::create(out.join("embeddings.txt"))?);
    write_embeddings(&ds.avatar_visual_embeddings, &mut emb)?;
    emb.flush()?;
    Ok(())
}

/// Writes the top-`n` table, a blank line, then per-player SD metrics with a
/// closing `mean` row. Players with no candidates are skipped.
pub fn recommend(
    ds: &Dataset,
    config: &Config,
    ratio: &PreferenceRatio,
    n: usize,
    seed: Option<u64>,
    players: &[PlayerId],
    w: &mut dyn Write,
) -> Result<()> {
    let features = build_preferences(ds, &config.features)?;
    let set = build_training_set(ds, &features, config.recommend.seed)?;
    let model = train(&set, &config.gbdt, config.recommend.seed)?;
    let featurizer = PairFeaturizer::new(ds, &features);
    let pc = PipelineConfig {
        k: config.recommend.k,
        m: config.recommend.m,
        seed: seed.unwrap_or(config.recommend.seed),
    };
    let targets: Vec<PlayerId> = if players.is_empty() { ds.player_ids().collect() } else { players.to_vec() };
    let mut sds = Vec::new();
    writeln!(w, "player\trank\tcandidate\tscore")?;
    for &p in &targets {
        let record = ds.player(p).ok_or(sdrec_core::Error::UnknownPlayer(p))?;
        let run = run_pipeline(&features, p, &record.friends_before, ratio, &pc)?;
        if run.fused.is_empty() {
            continue;
        }
        let list = rank(&model, &featurizer, p, &run.fused, n)?;
        for (i, (c, score)) in list.entries.iter().enumerate() {
            writeln!(w, "{p}\t{}\t{c}\t{score:.6}", i + 1)?;
        }
        let recs: Vec<PlayerId> = list.ids().collect();
        sds.push((p, sd_metrics(p, &recs, &record.friends_before, &features, METRIC_CHANNEL)?));
    }
    writeln!(w)?;
    writeln!(w, "player\tcontent_diversity\ttotal_sim\tfri_sim")?;
    for (p, m) in &sds {
        writeln!(w, "{p}\t{:.6}\t{:.6}\t{:.6}", m.content_diversity, m.total_sim, m.fri_sim)?;
    }
    let mean = mean_sd(&sds.iter().map(|(_, m)| *m).collect::<Vec<_>>());
    writeln!(w, "mean\t{:.6}\t{:.6}\t{:.6}", mean.content_diversity, mean.total_sim, mean.fri_sim)?;
    Ok(())
}

/// Reads the first table of a `recommend` output: player -> candidates in rank order.
pub fn read_recs(path: &Path) -> Result<BTreeMap<PlayerId, Vec<PlayerId>>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut ranked: BTreeMap<PlayerId, Vec<(usize, PlayerId)>> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            break;
        }
        if i == 0 && line.starts_with("player") {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            bail!("{}:{}: expected player, rank, candidate", path.display(), i + 1);
        }
        let parse = |s: &str| s.trim().parse::<u32>().with_context(|| format!("{}:{}: bad number {s:?}", path.display(), i + 1));
        ranked.entry(PlayerId(parse(cols[0])?)).or_default().push((parse(cols[1])? as usize, PlayerId(parse(cols[2])?)));
    }
    Ok(ranked
        .into_iter()
        .map(|(p, mut v)| {
            v.sort();
            (p, v.into_iter().map(|(_, c)| c).collect())
        })
        .collect())
}

/// Quality of listed recommendations; `n` is each player's list length.
/// Players without post-split friendships are skipped.
fn evaluate_recs(ds: &Dataset, path: &Path, w: &mut dyn Write) -> Result<()> {
    let recs = read_recs(path)?;
    let mut qs = Vec::new();
    for (p, list) in &recs {
        let record = ds.player(*p).ok_or(sdrec_core::Error::UnknownPlayer(*p))?;
        if record.friends_after.is_empty() {
            continue;
        }
        qs.push(quality(list, &record.friends_after, list.len()));
    }
    if qs.is_empty() {
        bail!("no listed player has post-split friendships");
    }
    let q = mean_quality(&qs);
    writeln!(w, "players\t{}", qs.len())?;
    writeln!(w, "recall\t{:.6}", q.recall)?;
    writeln!(w, "precision\t{:.6}", q.precision)?;
    writeln!(w, "f1\t{:.6}", q.f1)?;
    writeln!(w, "hit_rate\t{:.6}", q.hit_rate)?;
    Ok(())
}

fn evaluate_ranker(ds: &Dataset, config: &Config, test_fraction: f64, w: &mut dyn Write) -> Result<()> {
    let seed = config.recommend.seed;
    let features: Features = build_preferences(ds, &config.features)?;
    let (train_ids, test_ids) = split_players(ds.player_ids(), test_fraction, seed)?;
    let train_set = build_training_set_within(ds, &features, &train_ids, seed)?;
    let test_set = build_training_set_within(ds, &features, &test_ids, seed.wrapping_add(1))?;
    let model = train(&train_set, &config.gbdt, seed)?;
    let m = evaluate(&model, &test_set)?;
    writeln!(w, "train_pairs\t{}", train_set.len())?;
    writeln!(w, "test_pairs\t{}", test_set.len())?;
    writeln!(w, "accuracy\t{:.6}", m.accuracy)?;
    writeln!(w, "recall\t{:.6}", m.recall)?;
    writeln!(w, "precision\t{:.6}", m.precision)?;
    writeln!(w, "f1\t{:.6}", m.f1)?;
    writeln!(w, "auc\t{:.6}", m.auc)?;
    Ok(())
}

fn serve(config: Config) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listen = config.listen.clone();
        let state = crate::state::AppState::open(config)?;
        let app = crate::api::router(state);
        let listener = tokio::net::TcpListener::bind(&listen).await.with_context(|| format!("binding {listen}"))?;
        tracing::info!(addr = %listener.local_addr()?, "serving /api/v1");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
