use std::fs;
use std::path::{Path, PathBuf};

use scenetext_core::corpus::{corpus_stats, generate_synthetic, load_corpus, save_corpus, Corpus, SyntheticConfig};
use scenetext_core::encoders::{encode_query, ModelConfig, ModelParams, Vocab};
use scenetext_core::evaluation::{ablate, evaluate, metrics_line, TokenBudget};
use scenetext_core::fusion::{embed_video, EmbeddingIndex, FusionMode};
use scenetext_core::training::{trace_csv, train_observed, TrainConfig};
use scenetext_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::plot::save_histogram;
use crate::{Command, Selection};

/// Model and training settings read from one TOML file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Ingest {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| Error::Ingest {
        path: path.to_path_buf(),
        source,
    })
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Ingest {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Ingest {
        path: dir.to_path_buf(),
        source,
    })
}

fn parent_or_cwd(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { config, seed, out } => generate(&config, seed, &out),
        Command::Train {
            corpus,
            config,
            seed,
            select,
            out,
        } => train_cmd(&corpus, &config, seed, select, &out),
        Command::Eval {
            corpus,
            checkpoint,
            select,
            out,
        } => eval_cmd(&corpus, &checkpoint, select, out),
        Command::Ablate {
            corpus,
            config,
            seed,
            budgets,
            out,
        } => ablate_cmd(&corpus, &config, seed, &budgets, &out),
        Command::Stats { corpus, out, plot } => stats_cmd(&corpus, out, plot),
        Command::Index {
            corpus,
            checkpoint,
            select,
            out,
        } => index_cmd(&corpus, &checkpoint, select, &out),
        Command::Search {
            index,
            checkpoint,
            query,
            k,
        } => search_cmd(&index, checkpoint, &query, k),
    }
}

fn generate(config: &Path, seed: u64, out: &Path) -> Result<()> {
    let cfg: SyntheticConfig = read_toml(config)?;
    let corpus = generate_synthetic(&cfg, seed)?;
    save_corpus(&corpus, out)?;

    let mut manifest = RunManifest::start("generate", &cfg)?;
    manifest.seed = Some(seed);
    manifest.corpus = Some(out.to_path_buf());
    manifest.artifacts = ["videos.jsonl", "tracks.jsonl", "queries.jsonl", "frames"]
        .iter()
        .map(|f| out.join(f))
        .collect();
    manifest.finish(out)?;
    println!(
        "wrote {} videos, {} queries to {}",
        corpus.videos().len(),
        corpus.queries().len(),
        out.display()
    );
    Ok(())
}

fn effective_run_config(config: &Path, seed: Option<u64>, select: Selection) -> Result<RunConfig> {
    let mut cfg: RunConfig = read_toml(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(m) = select.mode {
        cfg.train.mode = m;
    }
    if let Some(b) = select.topk {
        cfg.train.token_budget = b;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn train_cmd(corpus_dir: &Path, config: &Path, seed: Option<u64>, select: Selection, out: &Path) -> Result<()> {
    let cfg = effective_run_config(config, seed, select)?;
    let corpus = load_corpus(corpus_dir)?;
    let params = ModelParams::init(cfg.model.clone(), Vocab::from_corpus(&corpus), cfg.train.seed)?;
    create_dir(out)?;

    let mut manifest = RunManifest::start("train", &cfg)?;
    manifest.seed = Some(cfg.train.seed);
    manifest.corpus = Some(corpus_dir.to_path_buf());

    let mut epoch_losses: Vec<f64> = Vec::new();
    let mut current = 0;
    let outcome = train_observed(&corpus, params, &cfg.train, |row| {
        if row.epoch != current && !epoch_losses.is_empty() {
            report_epoch(current, &epoch_losses, row.lr);
            epoch_losses.clear();
        }
        current = row.epoch;
        epoch_losses.push(row.loss);
    })?;
    if !epoch_losses.is_empty() {
        report_epoch(current, &epoch_losses, cfg.train.lr_at(current));
    }

    let checkpoint = out.join("model.ckpt");
    let trace = out.join("trace.csv");
    outcome.params.save(&checkpoint)?;
    write_text(&trace, &trace_csv(&outcome.trace))?;
    manifest.checkpoint = Some(checkpoint.clone());
    manifest.artifacts = vec![checkpoint.clone(), trace];
    manifest.finish(out)?;
    println!("checkpoint written to {}", checkpoint.display());
    Ok(())
}

fn report_epoch(epoch: usize, losses: &[f64], lr: f64) {
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    eprintln!("epoch {epoch:>3}  loss {mean:.5}  lr {lr:e}");
}

#[derive(Serialize)]
struct EvalSettings {
    mode: FusionMode,
    token_budget: TokenBudget,
}

fn selection_or_default(select: Selection) -> EvalSettings {
    EvalSettings {
        mode: select.mode.unwrap_or(FusionMode::Fusion),
        token_budget: select.topk.unwrap_or_default(),
    }
}

fn eval_cmd(corpus_dir: &Path, checkpoint: &Path, select: Selection, out: Option<PathBuf>) -> Result<()> {
    let settings = selection_or_default(select);
    let corpus = load_corpus(corpus_dir)?;
    let params = ModelParams::load(checkpoint)?;
    let result = evaluate(&corpus, &params, settings.mode, settings.token_budget)?;

    print!("{}", table_header("direction"));
    print!("{}", metrics_line("l2v", &result.l2v));
    print!("{}", metrics_line("v2l", &result.v2l));

    let out = out.unwrap_or_else(|| parent_or_cwd(checkpoint));
    let csv = out.join("metrics.csv");
    write_text(&csv, &result.to_csv())?;
    let mut manifest = RunManifest::start("eval", &settings)?;
    manifest.corpus = Some(corpus_dir.to_path_buf());
    manifest.checkpoint = Some(checkpoint.to_path_buf());
    manifest.artifacts = vec![csv];
    manifest.finish(&out)?;
    Ok(())
}

fn table_header(first: &str) -> String {
    format!(
        "{first:<14} {:>7} {:>7} {:>7} {:>6} {:>8}\n",
        "R@1", "R@5", "R@10", "MdR", "MnR"
    )
}

fn ablate_cmd(corpus_dir: &Path, config: &Path, seed: Option<u64>, budgets: &[TokenBudget], out: &Path) -> Result<()> {
    let cfg = effective_run_config(config, seed, Selection { mode: None, topk: None })?;
    let corpus = load_corpus(corpus_dir)?;
    let report = ablate(&corpus, &cfg.model, &cfg.train, budgets)?;
    print!("{}", report.to_table());

    create_dir(out)?;
    let json = out.join("ablation.json");
    let csv = out.join("ablation.csv");
    let encoded = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("cannot encode report: {e}")))?;
    write_text(&json, &(encoded + "\n"))?;
    write_text(&csv, &report.to_csv())?;

    #[derive(Serialize)]
    struct AblationSettings<'a> {
        run: &'a RunConfig,
        budgets: &'a [TokenBudget],
    }
    let mut manifest = RunManifest::start("ablate", &AblationSettings { run: &cfg, budgets })?;
    manifest.seed = Some(cfg.train.seed);
    manifest.corpus = Some(corpus_dir.to_path_buf());
    manifest.artifacts = vec![json, csv];
    manifest.finish(out)?;
    Ok(())
}

fn stats_cmd(corpus_dir: &Path, out: Option<PathBuf>, plot: bool) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let stats = corpus_stats(&corpus);
    let out = out.unwrap_or_else(|| corpus_dir.to_path_buf());
    create_dir(&out)?;

    let json = serde_json::to_string_pretty(&stats)
        .map_err(|e| Error::Config(format!("cannot encode stats: {e}")))?;
    println!("{json}");
    let stats_path = out.join("stats.json");
    write_text(&stats_path, &(json + "\n"))?;
    let mut artifacts = vec![stats_path];
    if plot {
        for (name, hist, title) in [
            ("tokens_per_video.png", &stats.tokens_per_video, "OCR tokens per video"),
            ("words_per_query.png", &stats.words_per_query, "words per query"),
            ("matched_tokens_per_query.png", &stats.matched_tokens_per_query, "matched tokens per query"),
        ] {
            let path = out.join(name);
            save_histogram(hist, title, &path)?;
            artifacts.push(path);
        }
    }

    #[derive(Serialize)]
    struct StatsSettings {
        plot: bool,
    }
    let mut manifest = RunManifest::start("stats", &StatsSettings { plot })?;
    manifest.corpus = Some(corpus_dir.to_path_buf());
    manifest.artifacts = artifacts;
    manifest.finish(&out)?;
    Ok(())
}

fn build_index(corpus: &Corpus, params: &ModelParams, settings: &EvalSettings) -> Result<EmbeddingIndex> {
    let mut index = EmbeddingIndex::new();
    for (id, clip) in corpus.videos() {
        let tracks = settings.token_budget.apply(corpus.tracks_of(id));
        index.insert(id.clone(), embed_video(clip, &tracks, params, settings.mode)?.x)?;
    }
    Ok(index)
}

fn index_cmd(corpus_dir: &Path, checkpoint: &Path, select: Selection, out: &Path) -> Result<()> {
    let settings = selection_or_default(select);
    let corpus = load_corpus(corpus_dir)?;
    let params = ModelParams::load(checkpoint)?;
    let index = build_index(&corpus, &params, &settings)?;
    index.save(out)?;

    let mut manifest = RunManifest::start("index", &settings)?;
    manifest.corpus = Some(corpus_dir.to_path_buf());
    manifest.checkpoint = Some(checkpoint.to_path_buf());
    manifest.artifacts = vec![out.to_path_buf()];
    manifest.finish(&parent_or_cwd(out))?;
    println!("indexed {} videos into {}", index.len(), out.display());
    Ok(())
}

fn search_cmd(index_path: &Path, checkpoint: Option<PathBuf>, query: &str, k: usize) -> Result<()> {
    let dir = parent_or_cwd(index_path);
    let checkpoint = checkpoint.unwrap_or_else(|| dir.join("model.ckpt"));
    let index = EmbeddingIndex::load(index_path)?;
    let params = ModelParams::load(&checkpoint)?;
    let q = encode_query(query, &params)?;
    let hits = index.search(&q.w, k)?;

    println!("{:<6} {:<24} {:>10}", "rank", "video_id", "score");
    for (rank, (id, score)) in hits.iter().enumerate() {
        println!("{:<6} {:<24} {:>10.6}", rank + 1, id, score);
    }

    #[derive(Serialize)]
    struct SearchSettings<'a> {
        index: &'a Path,
        query: &'a str,
        k: usize,
    }
    let mut manifest = RunManifest::start(
        "search",
        &SearchSettings {
            index: index_path,
            query,
            k,
        },
    )?;
    manifest.checkpoint = Some(checkpoint);
    manifest.finish(&dir)?;
    Ok(())
}
