//! Retrieval metrics, token-budget selection and the mode/budget ablation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split, TextTrack};
use crate::encoders::{encode_query, ModelConfig, ModelParams, Vocab};
use crate::fusion::{embed_video, FusionMode, SimilarityMatrix};
use crate::training::{train, TrainConfig};
use crate::{Error, Result};

/// Cutoffs reported as `R@K`.
pub const RECALL_CUTOFFS: [usize; 3] = [1, 5, 10];

/// How many OCR tracks per video reach the encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "BudgetRepr", into = "BudgetRepr")]
pub enum TokenBudget {
    Top(usize),
    #[default]
    All,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BudgetRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<BudgetRepr> for TokenBudget {
    type Error = Error;

    fn try_from(r: BudgetRepr) -> Result<Self> {
        match r {
            BudgetRepr::Count(k) => Ok(TokenBudget::Top(k)),
            BudgetRepr::Word(w) => w.parse(),
        }
    }
}

impl From<TokenBudget> for BudgetRepr {
    fn from(b: TokenBudget) -> Self {
        match b {
            TokenBudget::Top(k) => BudgetRepr::Count(k),
            TokenBudget::All => BudgetRepr::Word("all".into()),
        }
    }
}

impl FromStr for TokenBudget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(TokenBudget::All);
        }
        s.parse()
            .map(TokenBudget::Top)
            .map_err(|_| Error::Config(format!("token budget must be an integer or `all`, got {s:?}")))
    }
}

impl fmt::Display for TokenBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenBudget::Top(k) => write!(f, "top{k}"),
            TokenBudget::All => f.write_str("all"),
        }
    }
}

impl TokenBudget {
    pub fn apply(self, tracks: &[TextTrack]) -> Vec<TextTrack> {
        match self {
            TokenBudget::All => tracks.to_vec(),
            TokenBudget::Top(k) => select_topk_tokens(tracks, k),
        }
    }
}

/// The `k` most confident tracks; ties go to the earlier `t_start`, then to
/// the earlier position in `tracks`.
pub fn select_topk_tokens(tracks: &[TextTrack], k: usize) -> Vec<TextTrack> {
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.sort_by(|&a, &b| {
        tracks[b]
            .confidence
            .total_cmp(&tracks[a].confidence)
            .then(tracks[a].t_start.cmp(&tracks[b].t_start))
    });
    order.into_iter().take(k).map(|i| tracks[i].clone()).collect()
}

/// Test queries sharing a word with their video's tracks, in percent.
pub fn recall_of_correlation(corpus: &Corpus) -> Result<f64> {
    crate::corpus::recall_of_correlation(corpus, Some(Split::Test))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Language to video: each query ranks all videos.
    L2v,
    /// Video to language: each video ranks all queries.
    V2l,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::L2v => "l2v",
            Direction::V2l => "v2l",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub direction: Direction,
    /// `K → percentage of items whose ground truth ranks ≤ K`.
    pub r_at: BTreeMap<usize, f64>,
    pub mdr: f64,
    pub mnr: f64,
    /// Number of ranked items (queries for l2v, captioned videos for v2l).
    pub count: usize,
}

impl RetrievalMetrics {
    pub fn from_ranks(direction: Direction, ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::Input("no items to rank".into()));
        }
        let n = ranks.len() as f64;
        let r_at = RECALL_CUTOFFS
            .iter()
            .map(|&k| (k, 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
            .collect();
        let mut sorted = ranks.to_vec();
        sorted.sort_unstable();
        Ok(Self {
            direction,
            r_at,
            mdr: sorted[(sorted.len() - 1) / 2] as f64,
            mnr: ranks.iter().sum::<usize>() as f64 / n,
            count: ranks.len(),
        })
    }

    pub fn r(&self, k: usize) -> f64 {
        self.r_at.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Ranks of the ground truth in both directions.
///
/// `scores` rows are videos and columns are queries; `ground_truth[j]` is the
/// video id of query column `j`. Ties are pessimistic: the ground truth is
/// placed after every non-matching candidate with an equal score. For v2l a
/// video's rank is that of its best-scored caption; videos without captions
/// are skipped.
pub fn rank_metrics(
    scores: &SimilarityMatrix,
    ground_truth: &[String],
    direction: Direction,
) -> Result<RetrievalMetrics> {
    let s = &scores.scores;
    if ground_truth.len() != s.cols() || scores.col_ids.len() != s.cols() {
        return Err(Error::Input(format!(
            "{} ground-truth entries for {} queries",
            ground_truth.len(),
            s.cols()
        )));
    }
    let row_of: HashMap<&str, usize> = scores
        .row_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let gt = ground_truth
        .iter()
        .enumerate()
        .map(|(j, v)| {
            row_of.get(v.as_str()).copied().ok_or_else(|| {
                Error::Input(format!(
                    "query {} has no ground-truth video among the candidates ({v:?})",
                    scores.col_ids[j]
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ranks: Vec<usize> = match direction {
        Direction::L2v => (0..s.cols())
            .map(|j| {
                let target = s.get(gt[j], j);
                1 + (0..s.rows())
                    .filter(|&i| i != gt[j] && s.get(i, j) >= target)
                    .count()
            })
            .collect(),
        Direction::V2l => {
            let mut captions: Vec<Vec<usize>> = vec![Vec::new(); s.rows()];
            for (j, &i) in gt.iter().enumerate() {
                captions[i].push(j);
            }
            captions
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.is_empty())
                .map(|(i, c)| {
                    let best = c
                        .iter()
                        .map(|&j| s.get(i, j))
                        .fold(f64::NEG_INFINITY, f64::max);
                    1 + (0..s.cols())
                        .filter(|&j| gt[j] != i && s.get(i, j) >= best)
                        .count()
                })
                .collect()
        }
    };
    RetrievalMetrics::from_ranks(direction, &ranks)
}

/// Metrics for both directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mode: FusionMode,
    pub budget: TokenBudget,
    pub l2v: RetrievalMetrics,
    pub v2l: RetrievalMetrics,
}

pub const METRICS_CSV_HEADER: &str = "mode,budget,direction,r1,r5,r10,mdr,mnr,count";

impl Evaluation {
    pub fn csv_rows(&self) -> Vec<String> {
        [&self.l2v, &self.v2l]
            .iter()
            .map(|m| {
                format!(
                    "{},{},{},{:.4},{:.4},{:.4},{},{:.4},{}",
                    self.mode,
                    self.budget,
                    m.direction,
                    m.r(1),
                    m.r(5),
                    m.r(10),
                    m.mdr,
                    m.mnr,
                    m.count
                )
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_CSV_HEADER);
        out.push('\n');
        for row in self.csv_rows() {
            out.push_str(&row);
            out.push('\n');
        }
        out
    }
}

/// Embeds every test video and query and ranks them against each other.
pub fn similarity_on_split(
    corpus: &Corpus,
    params: &ModelParams,
    mode: FusionMode,
    budget: TokenBudget,
    split: Split,
) -> Result<(SimilarityMatrix, Vec<String>)> {
    let videos = corpus
        .video_ids_in(split)
        .into_iter()
        .map(|id| {
            let clip = corpus.video(id).expect("listed id");
            let tracks = budget.apply(corpus.tracks_of(id));
            Ok((id.to_string(), embed_video(clip, &tracks, params, mode)?.x))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut truth = Vec::new();
    let queries = corpus
        .queries()
        .iter()
        .enumerate()
        .filter(|(_, q)| q.split == split)
        .map(|(j, q)| {
            truth.push(q.video_id.clone());
            Ok((format!("q{j}"), encode_query(&q.text, params)?.w))
        })
        .collect::<Result<Vec<_>>>()?;
    if queries.is_empty() {
        return Err(Error::Input(format!("the {split} split has no queries")));
    }
    Ok((SimilarityMatrix::new(&videos, &queries)?, truth))
}

pub fn evaluate(
    corpus: &Corpus,
    params: &ModelParams,
    mode: FusionMode,
    budget: TokenBudget,
) -> Result<Evaluation> {
    let (s, truth) = similarity_on_split(corpus, params, mode, budget, Split::Test)?;
    Ok(Evaluation {
        mode,
        budget,
        l2v: rank_metrics(&s, &truth, Direction::L2v)?,
        v2l: rank_metrics(&s, &truth, Direction::V2l)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    /// One row per mode, all with the full token budget.
    pub modes: Vec<AblationRow>,
    /// One row per token budget, all in fusion mode.
    pub budgets: Vec<AblationRow>,
}

impl AblationReport {
    pub fn mode(&self, mode: FusionMode) -> Option<&Evaluation> {
        self.modes
            .iter()
            .map(|r| &r.evaluation)
            .find(|e| e.mode == mode)
    }

    pub fn budget(&self, budget: TokenBudget) -> Option<&Evaluation> {
        self.budgets
            .iter()
            .map(|r| &r.evaluation)
            .find(|e| e.budget == budget)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("table,label,{METRICS_CSV_HEADER}\n");
        for (table, rows) in [("mode", &self.modes), ("budget", &self.budgets)] {
            for row in rows {
                for line in row.evaluation.csv_rows() {
                    let _ = writeln!(out, "{table},{},{line}", row.label);
                }
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (title, rows) in [("mode", &self.modes), ("token budget", &self.budgets)] {
            let _ = writeln!(out, "{title:<14} {:>7} {:>7} {:>7} {:>6} {:>8}", "R@1", "R@5", "R@10", "MdR", "MnR");
            for row in rows {
                out.push_str(&metrics_line(&row.label, &row.evaluation.l2v));
            }
            out.push('\n');
        }
        out
    }
}

/// One fixed-width table line: label, R@1, R@5, R@10, MdR, MnR.
pub fn metrics_line(label: &str, m: &RetrievalMetrics) -> String {
    format!(
        "{label:<14} {:>7.2} {:>7.2} {:>7.2} {:>6.1} {:>8.2}\n",
        m.r(1),
        m.r(5),
        m.r(10),
        m.mdr,
        m.mnr
    )
}

/// Trains one model per mode (full budget) and one fusion model per budget
/// from the same configuration and seed, then evaluates each on the test split.
pub fn ablate(
    corpus: &Corpus,
    model: &ModelConfig,
    config: &TrainConfig,
    budgets: &[TokenBudget],
) -> Result<AblationReport> {
    let mut cache: HashMap<(FusionMode, TokenBudget), Evaluation> = HashMap::new();
    let mut run = |mode: FusionMode, budget: TokenBudget| -> Result<Evaluation> {
        if let Some(e) = cache.get(&(mode, budget)) {
            return Ok(e.clone());
        }
        let cfg = TrainConfig {
            mode,
            token_budget: budget,
            ..config.clone()
        };
        let init = ModelParams::init(model.clone(), Vocab::from_corpus(corpus), cfg.seed)?;
        let outcome = train(corpus, init, &cfg)?;
        let e = evaluate(corpus, &outcome.params, mode, budget)?;
        cache.insert((mode, budget), e.clone());
        Ok(e)
    };
    let modes = FusionMode::ALL
        .iter()
        .map(|&m| {
            Ok(AblationRow {
                label: m.to_string(),
                evaluation: run(m, TokenBudget::All)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let budgets = budgets
        .iter()
        .map(|&b| {
            Ok(AblationRow {
                label: b.to_string(),
                evaluation: run(FusionMode::Fusion, b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        seed: config.seed,
        modes,
        budgets,
    })
}
