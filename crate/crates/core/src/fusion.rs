//! Fusion of visual and scene-text tokens, pooling, similarity and search.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{decode_container, encode_container, read_file, write_file, KIND_INDEX};
use crate::corpus::{TextTrack, VideoClip};
use crate::encoders::{
    patchify, track_embeddings_on, video_tokens_on, ModelParams, Patches, PreparedTracks,
    TrackEmbeddings, VisualTokens,
};
use crate::nn::{dot, l2_norm, Matrix, Tape, Var};
use crate::{Error, Result};

/// Which token streams reach the fusion block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[serde(alias = "vision")]
    VisionOnly,
    #[serde(alias = "text")]
    TextOnly,
    Fusion,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::VisionOnly, FusionMode::TextOnly, FusionMode::Fusion];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::VisionOnly => "vision_only",
            FusionMode::TextOnly => "text_only",
            FusionMode::Fusion => "fusion",
        }
    }

    pub fn uses_video(self) -> bool {
        self != FusionMode::TextOnly
    }

    pub fn uses_text(self) -> bool {
        self != FusionMode::VisionOnly
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vision" | "vision_only" => Ok(FusionMode::VisionOnly),
            "text" | "text_only" => Ok(FusionMode::TextOnly),
            "fusion" => Ok(FusionMode::Fusion),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected vision, text or fusion)"
            ))),
        }
    }
}

/// Unit-norm video embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedEmbedding {
    pub x: Vec<f64>,
}

/// Runs the fusion stack over `tokens`; `keep` masks attention keys.
pub(crate) fn fusion_stack_on(
    tape: &mut Tape,
    params: &ModelParams,
    mut x: Var,
    keep: Option<&[bool]>,
) -> Var {
    for block in &params.layout.fusion_blocks {
        x = block.forward(tape, x, keep);
    }
    x
}

/// Assembles the fusion input for `mode` and runs the fusion stack.
pub(crate) fn fuse_on(
    tape: &mut Tape,
    params: &ModelParams,
    visual: Option<Var>,
    text: Option<(Var, Var)>,
    mode: FusionMode,
) -> Result<Var> {
    let d = params.config().embed_dim;
    let text_tokens = |tape: &mut Tape| -> Result<Var> {
        let (st, tc) = text.ok_or_else(|| Error::Config(format!("{mode} needs track embeddings")))?;
        if tape.value(st).shape() != tape.value(tc).shape() {
            return Err(Error::Config(format!(
                "R_ST {:?} and R_TC {:?} differ in shape",
                tape.value(st).shape(),
                tape.value(tc).shape()
            )));
        }
        Ok(tape.add(st, tc))
    };
    let visual_tokens = || visual.ok_or_else(|| Error::Config(format!("{mode} needs visual tokens")));
    let x = match mode {
        FusionMode::VisionOnly => visual_tokens()?,
        FusionMode::TextOnly => text_tokens(tape)?,
        FusionMode::Fusion => {
            let v = visual_tokens()?;
            let t = text_tokens(tape)?;
            tape.concat_rows(&[v, t])
        }
    };
    if tape.value(x).cols() != d {
        return Err(Error::Config(format!(
            "token width {} does not match embed_dim {d}",
            tape.value(x).cols()
        )));
    }
    Ok(fusion_stack_on(tape, params, x, None))
}

/// Mean over the kept rows, then L2 normalization.
pub(crate) fn pool_on(tape: &mut Tape, x: Var, keep: Option<&[bool]>) -> Result<Var> {
    if tape.value(x).rows() == 0 || keep.is_some_and(|k| !k.contains(&true)) {
        return Err(Error::Input("pooling needs at least one token".into()));
    }
    let m = tape.mean_rows(x, keep);
    let norm = l2_norm(tape.value(m).row(0));
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Numeric(format!(
            "degenerate pooled embedding (norm {norm})"
        )));
    }
    Ok(tape.l2_normalize(m))
}

pub fn fuse(
    visual: &VisualTokens,
    tracks: &TrackEmbeddings,
    params: &ModelParams,
    mode: FusionMode,
) -> Result<Matrix> {
    let mut tape = Tape::new(params.weights());
    let v = tape.input(visual.tokens.clone());
    let st = tape.input(tracks.spacetime.clone());
    let tc = tape.input(tracks.context.clone());
    let out = fuse_on(&mut tape, params, Some(v), Some((st, tc)), mode)?;
    Ok(tape.value(out).clone())
}

pub fn pool_normalize(tokens: &Matrix) -> Result<FusedEmbedding> {
    let store = crate::nn::ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = tape.input(tokens.clone());
    let out = pool_on(&mut tape, x, None)?;
    Ok(FusedEmbedding {
        x: tape.value(out).row(0).to_vec(),
    })
}

/// Everything the video side needs, preprocessed once.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoInput {
    pub patches: Patches,
    pub tracks: PreparedTracks,
}

impl VideoInput {
    pub fn new(video: &VideoClip, tracks: &[TextTrack], params: &ModelParams) -> Result<Self> {
        params.check_video(video)?;
        Ok(Self {
            patches: patchify(video, params.config())?,
            tracks: PreparedTracks::new(
                tracks,
                (video.width, video.height, video.frame_count()),
                params,
            ),
        })
    }
}

/// Video encoder → track encoder → fusion → pooling, on one tape.
pub(crate) fn video_embedding_on(
    tape: &mut Tape,
    params: &ModelParams,
    input: &VideoInput,
    mode: FusionMode,
) -> Result<Var> {
    let visual = if mode.uses_video() {
        Some(video_tokens_on(tape, params, &input.patches)?)
    } else {
        None
    };
    let text = if mode.uses_text() {
        Some(track_embeddings_on(tape, params, &input.tracks)?)
    } else {
        None
    };
    let fused = fuse_on(tape, params, visual, text, mode)?;
    pool_on(tape, fused, None)
}

pub fn embed_video_input(
    input: &VideoInput,
    params: &ModelParams,
    mode: FusionMode,
) -> Result<FusedEmbedding> {
    let mut tape = Tape::new(params.weights());
    let out = video_embedding_on(&mut tape, params, input, mode)?;
    Ok(FusedEmbedding {
        x: tape.value(out).row(0).to_vec(),
    })
}

pub fn embed_video(
    video: &VideoClip,
    tracks: &[TextTrack],
    params: &ModelParams,
    mode: FusionMode,
) -> Result<FusedEmbedding> {
    embed_video_input(&VideoInput::new(video, tracks, params)?, params, mode)
}

/// `S[i][j] = x_i · y_j` with row and column ids.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub scores: Matrix,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
}

impl SimilarityMatrix {
    pub fn new(rows: &[(String, Vec<f64>)], cols: &[(String, Vec<f64>)]) -> Result<Self> {
        let x: Vec<&[f64]> = rows.iter().map(|r| r.1.as_slice()).collect();
        let y: Vec<&[f64]> = cols.iter().map(|c| c.1.as_slice()).collect();
        Ok(Self {
            scores: similarity_matrix(&x, &y)?,
            row_ids: rows.iter().map(|r| r.0.clone()).collect(),
            col_ids: cols.iter().map(|c| c.0.clone()).collect(),
        })
    }
}

pub fn similarity_matrix(x: &[&[f64]], y: &[&[f64]]) -> Result<Matrix> {
    let dim = x.first().or(y.first()).map_or(0, |v| v.len());
    if let Some(bad) = x.iter().chain(y).find(|v| v.len() != dim) {
        return Err(Error::Config(format!(
            "embedding dimension {} does not match {dim}",
            bad.len()
        )));
    }
    let mut s = Matrix::zeros(x.len(), y.len());
    for (i, xi) in x.iter().enumerate() {
        for (j, yj) in y.iter().enumerate() {
            s.set(i, j, dot(xi, yj));
        }
    }
    Ok(s)
}

/// Brute-force cosine index over unit-norm video embeddings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingIndex {
    entries: Vec<(String, Vec<f64>)>,
}

impl EmbeddingIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Vec<f64>)] {
        &self.entries
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.1.len())
    }

    pub fn insert(&mut self, id: impl Into<String>, embedding: Vec<f64>) -> Result<()> {
        let id = id.into();
        if self.entries.iter().any(|(e, _)| *e == id) {
            return Err(Error::Input(format!("video id {id:?} is already indexed")));
        }
        if let Some(d) = self.dim().filter(|&d| d != embedding.len()) {
            return Err(Error::Config(format!(
                "embedding for {id:?} has dimension {}, index holds {d}",
                embedding.len()
            )));
        }
        if embedding.is_empty() || embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("embedding for {id:?} is empty or non-finite")));
        }
        self.entries.push((id, embedding));
        Ok(())
    }

    /// Top `k` entries by cosine score, descending; equal scores keep
    /// insertion order.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
        let dim = self
            .dim()
            .ok_or_else(|| Error::Lookup("search on an empty index".into()))?;
        if k == 0 {
            return Err(Error::Input("k must be at least 1".into()));
        }
        if query.len() != dim {
            return Err(Error::Config(format!(
                "query has dimension {}, index holds {dim}",
                query.len()
            )));
        }
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, (_, e))| (i, dot(query, e)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (self.entries[i].0.clone(), s))
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mats: Vec<Matrix> = self
            .entries
            .iter()
            .map(|(_, e)| Matrix::row_vector(e.clone()))
            .collect();
        let tensors: Vec<(&str, &Matrix)> = self
            .entries
            .iter()
            .zip(&mats)
            .map(|((id, _), m)| (id.as_str(), m))
            .collect();
        encode_container(KIND_INDEX, serde_json::json!({ "dim": self.dim() }), &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = decode_container(bytes, KIND_INDEX)?;
        let mut index = Self::new();
        for (id, m) in c.tensors {
            if m.rows() != 1 {
                return Err(Error::Checkpoint(format!("index record `{id}` is not a vector")));
            }
            index
                .insert(id, m.into_vec())
                .map_err(|e| Error::Checkpoint(format!("bad index record: {e}")))?;
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
