//! Symmetric contrastive training of the video and query encoders.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::encoders::{query_on, ModelParams};
use crate::evaluation::TokenBudget;
use crate::fusion::{video_embedding_on, FusionMode, VideoInput};
use crate::nn::{clip_global_norm, l2_norm, AdamW, AdamWConfig, Grads, Matrix, Tape};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_after_decay: f64,
    /// First (0-based) epoch that runs at `lr_after_decay`.
    pub decay_epoch: usize,
    pub temperature: f64,
    pub seed: u64,
    pub mode: FusionMode,
    pub token_budget: TokenBudget,
    pub optimizer: AdamWConfig,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 50,
            lr_initial: 3e-5,
            lr_after_decay: 3e-6,
            decay_epoch: 30,
            temperature: 0.05,
            seed: 0,
            mode: FusionMode::Fusion,
            token_budget: TokenBudget::All,
            optimizer: AdamWConfig::default(),
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size < 2 {
            return fail("`batch_size` must be at least 2");
        }
        if !(self.lr_initial > 0.0 && self.lr_after_decay > 0.0) {
            return fail("learning rates must be positive");
        }
        if !(self.temperature > 0.0) {
            return fail("`temperature` must be positive");
        }
        if !(self.clip_norm >= 0.0) {
            return fail("`clip_norm` must be non-negative");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.lr_initial
        } else {
            self.lr_after_decay
        }
    }
}

/// Loss value, both directional terms and the gradients with respect to the
/// (already normalized) embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveLoss {
    pub loss: f64,
    pub v2l: f64,
    pub l2v: f64,
    pub grad_x: Matrix,
    pub grad_y: Matrix,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `L_v2l + L_l2v` over the `N × N` in-batch similarity `X Yᵀ / σ`, where
/// row `i` of `x` matches row `i` of `y`.
pub fn contrastive_loss(x: &Matrix, y: &Matrix, temperature: f64) -> Result<ContrastiveLoss> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    if x.shape() != y.shape() || x.rows() == 0 {
        return Err(Error::Input(format!(
            "embedding batches must be equal and non-empty, got {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    for (name, m) in [("video", x), ("query", y)] {
        for r in 0..m.rows() {
            let n = l2_norm(m.row(r));
            if !((n - 1.0).abs() <= 1e-6) {
                return Err(Error::Input(format!("{name} embedding {r} has norm {n}, expected 1")));
            }
        }
    }
    Ok(contrastive_loss_unchecked(x, y, temperature))
}

pub(crate) fn contrastive_loss_unchecked(x: &Matrix, y: &Matrix, temperature: f64) -> ContrastiveLoss {
    let n = x.rows();
    let mut s = x.matmul_t(y);
    s.scale(1.0 / temperature);

    let row_lse: Vec<f64> = (0..n).map(|i| log_sum_exp(s.row(i).iter().copied())).collect();
    let col_lse: Vec<f64> = (0..n)
        .map(|j| log_sum_exp((0..n).map(|i| s.get(i, j))))
        .collect();
    let v2l = -(0..n).map(|i| s.get(i, i) - row_lse[i]).sum::<f64>() / n as f64;
    let l2v = -(0..n).map(|j| s.get(j, j) - col_lse[j]).sum::<f64>() / n as f64;

    // dL/dS = ((P − I) + (Q − I)) / N with P the row softmax and Q the column softmax.
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let p = (s.get(i, j) - row_lse[i]).exp();
            let q = (s.get(i, j) - col_lse[j]).exp();
            let diag = if i == j { 2.0 } else { 0.0 };
            g.set(i, j, (p + q - diag) / n as f64);
        }
    }
    let mut grad_x = g.matmul(y);
    grad_x.scale(1.0 / temperature);
    let mut grad_y = g.t_matmul(x);
    grad_y.scale(1.0 / temperature);
    ContrastiveLoss {
        loss: v2l + l2v,
        v2l,
        l2v,
        grad_x,
        grad_y,
    }
}

/// `(video_id, query index into corpus.queries())` pairs with distinct videos.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub pairs: Vec<(String, usize)>,
}

/// Shuffles the training videos that have at least one training query, picks
/// one of each video's queries uniformly and cuts full batches of `n`; the
/// remainder is dropped. Deterministic in `(seed, epoch)`.
pub fn make_batches(corpus: &Corpus, n: usize, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
    if n == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut by_video: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (j, q) in corpus.queries().iter().enumerate() {
        if q.split == Split::Train {
            by_video.entry(q.video_id.as_str()).or_default().push(j);
        }
    }
    if by_video.len() < n {
        return Err(Error::Config(format!(
            "batch size {n} exceeds the {} training videos with queries",
            by_video.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut videos: Vec<(&str, &Vec<usize>)> = by_video.iter().map(|(k, v)| (*k, v)).collect();
    videos.shuffle(&mut rng);
    let pairs: Vec<(String, usize)> = videos
        .into_iter()
        .map(|(id, qs)| (id.to_string(), qs[rng.gen_range(0..qs.len())]))
        .collect();
    Ok(pairs
        .chunks_exact(n)
        .map(|c| Batch { pairs: c.to_vec() })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

pub const TRACE_CSV_HEADER: &str = "epoch,step,loss,lr";

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_CSV_HEADER}\n");
    for r in trace {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.step, r.loss, r.lr);
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
}

pub fn train(corpus: &Corpus, params: ModelParams, config: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(corpus, params, config, |_| {})
}

/// [`train`], calling `observe` after every optimizer step.
pub fn train_observed(
    corpus: &Corpus,
    mut params: ModelParams,
    config: &TrainConfig,
    mut observe: impl FnMut(&TraceRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    let inputs: std::collections::HashMap<&str, VideoInput> = corpus
        .video_ids_in(Split::Train)
        .into_iter()
        .map(|id| {
            let clip = corpus.video(id).expect("listed id");
            let tracks = config.token_budget.apply(corpus.tracks_of(id));
            Ok((id, VideoInput::new(clip, &tracks, &params)?))
        })
        .collect::<Result<_>>()?;
    let query_ids: Vec<Vec<usize>> = corpus
        .queries()
        .iter()
        .map(|q| params.vocab().encode(&q.text, params.config().max_text_len))
        .collect();

    let mut optimizer = AdamW::new(params.weights(), config.optimizer);
    let mut grads = Grads::zeros_like(params.weights());
    let mut trace = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        for batch in make_batches(corpus, config.batch_size, config.seed, epoch)? {
            let diverged = |detail: String| Error::Divergence { epoch, step, detail };
            grads.zero();
            let loss = {
                let weights = params.weights();
                let mut video_tapes = Vec::with_capacity(batch.pairs.len());
                let mut query_tapes = Vec::with_capacity(batch.pairs.len());
                let mut x_rows = Vec::with_capacity(batch.pairs.len());
                let mut y_rows = Vec::with_capacity(batch.pairs.len());
                for (video_id, q) in &batch.pairs {
                    let mut tape = Tape::new(weights);
                    let out = video_embedding_on(&mut tape, &params, &inputs[video_id.as_str()], config.mode)
                        .map_err(|e| diverged(e.to_string()))?;
                    x_rows.push(tape.value(out).row(0).to_vec());
                    video_tapes.push((tape, out));

                    let mut tape = Tape::new(weights);
                    let out = query_on(&mut tape, &params, &query_ids[*q])
                        .map_err(|e| diverged(e.to_string()))?;
                    y_rows.push(tape.value(out).row(0).to_vec());
                    query_tapes.push((tape, out));
                }
                let x = Matrix::from_rows(&x_rows);
                let y = Matrix::from_rows(&y_rows);
                if !(x.is_finite() && y.is_finite()) {
                    return Err(diverged("non-finite embeddings".into()));
                }
                let l = contrastive_loss_unchecked(&x, &y, config.temperature);
                if !l.loss.is_finite() {
                    return Err(diverged(format!("loss is {}", l.loss)));
                }
                for (i, (tape, out)) in video_tapes.iter().enumerate() {
                    tape.backward(*out, l.grad_x.slice_rows(i, 1), &mut grads);
                }
                for (i, (tape, out)) in query_tapes.iter().enumerate() {
                    tape.backward(*out, l.grad_y.slice_rows(i, 1), &mut grads);
                }
                l.loss
            };
            let norm = if config.clip_norm > 0.0 {
                clip_global_norm(&mut grads, config.clip_norm)
            } else {
                grads.global_norm()
            };
            if !norm.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: format!("gradient norm is {norm}"),
                });
            }
            optimizer.step(params.weights_mut(), &grads, lr);
            if !params.weights().all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: "non-finite weights after update".into(),
                });
            }
            let row = TraceRow { epoch, step, loss, lr };
            observe(&row);
            trace.push(row);
            step += 1;
        }
    }
    Ok(TrainOutcome { params, trace })
}
