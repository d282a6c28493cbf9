//! Video, scene-text and query encoders.
//!
//! * video: uniformly sampled frames are cut into `P×P` patches, projected to
//!   `D` dimensions, given temporal + spatial positional embeddings and run
//!   through a transformer stack (joint attention over all `K·L` tokens);
//! * scene-text geometry: an 11-d box/time descriptor per track, embedded by
//!   one affine layer;
//! * scene-text context and queries: a bidirectional transformer over the
//!   tokenized text, read out at the appended `[EOS]` position. Track words
//!   and queries share this encoder; queries get an extra projection and are
//!   L2-normalized.

use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_words, Corpus, TextTrack, VideoClip};
use crate::nn::{
    normal_matrix, LayerNormParams, Linear, Matrix, ParamId, ParamStore, Tape, TransformerBlock,
    Var,
};
use crate::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const EOS: &str = "[EOS]";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const EOS_ID: usize = 2;

/// Number of entries in a [`SpaceTimeDescriptor`].
pub const DESCRIPTOR_DIM: usize = 11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub patch_size: usize,
    /// Frames sampled per video (`K`).
    pub frames_sampled: usize,
    pub heads: usize,
    pub video_layers: usize,
    pub text_layers: usize,
    pub fusion_layers: usize,
    pub ffn_mult: usize,
    /// Frame size every video must have.
    pub frame_width: usize,
    pub frame_height: usize,
    /// Longest token sequence (including `[EOS]`); longer text is truncated.
    pub max_text_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            patch_size: 16,
            frames_sampled: 4,
            heads: 4,
            video_layers: 2,
            text_layers: 2,
            fusion_layers: 1,
            ffn_mult: 4,
            frame_width: 32,
            frame_height: 32,
            max_text_len: 24,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return fail("`embed_dim` must be a positive multiple of `heads`");
        }
        if self.patch_size == 0 || self.frames_sampled == 0 {
            return fail("`patch_size` and `frames_sampled` must be positive");
        }
        if self.frame_width < self.patch_size || self.frame_height < self.patch_size {
            return fail("frames must be at least one patch wide and high");
        }
        if self.max_text_len < 2 {
            return fail("`max_text_len` must leave room for one word and [EOS]");
        }
        if self.ffn_mult == 0 {
            return fail("`ffn_mult` must be positive");
        }
        Ok(())
    }

    /// Patches per frame (`L`).
    pub fn patches_per_frame(&self) -> usize {
        (self.frame_height / self.patch_size) * (self.frame_width / self.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn visual_tokens(&self) -> usize {
        self.frames_sampled * self.patches_per_frame()
    }
}

/// Word-level vocabulary with `[PAD]`, `[UNK]`, `[EOS]` at ids 0, 1, 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Vocabulary over the normalized words of `texts`, sorted.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(split_words).collect();
        let tokens = [PAD, UNK, EOS]
            .into_iter()
            .map(String::from)
            .chain(words)
            .collect();
        Self::from_tokens(tokens).expect("reserved tokens present")
    }

    /// Vocabulary over every query and track word of `corpus`, all splits.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let queries = corpus.queries().iter().map(|q| q.text.as_str());
        let tracks = corpus
            .tracks()
            .values()
            .flatten()
            .map(|t| t.word.as_str());
        Self::build(queries.chain(tracks))
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[PAD_ID] != PAD || tokens[UNK_ID] != UNK || tokens[EOS_ID] != EOS
        {
            return Err(Error::Checkpoint(
                "vocabulary must start with [PAD], [UNK], [EOS]".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    /// Word ids of `text` followed by `[EOS]`, truncated to `max_len` tokens.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = split_words(text)
            .iter()
            .take(max_len.saturating_sub(1))
            .map(|w| self.id(w))
            .collect();
        ids.push(EOS_ID);
        ids
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub patch: Linear,
    pub temporal_pos: ParamId,
    pub spatial_pos: ParamId,
    pub video_blocks: Vec<TransformerBlock>,
    pub video_norm: LayerNormParams,
    pub descriptor: Linear,
    pub token_embedding: ParamId,
    pub text_pos: ParamId,
    pub text_blocks: Vec<TransformerBlock>,
    pub text_norm: LayerNormParams,
    pub query_proj: ParamId,
    pub no_text_spacetime: ParamId,
    pub no_text_context: ParamId,
    pub fusion_blocks: Vec<TransformerBlock>,
}

impl Layout {
    fn register(store: &mut ParamStore, cfg: &ModelConfig, vocab_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.embed_dim;
        let ffn = d * cfg.ffn_mult;
        let blocks = |store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, n: usize| {
            (0..n)
                .map(|i| {
                    TransformerBlock::register(store, rng, &format!("{prefix}.{i}"), d, cfg.heads, ffn)
                })
                .collect::<Vec<_>>()
        };

        let patch = Linear::register(store, &mut rng, "video.patch", cfg.patch_dim(), d);
        let temporal_pos = store.add(
            "video.temporal_pos",
            normal_matrix(&mut rng, cfg.frames_sampled, d, 0.1),
        );
        let spatial_pos = store.add(
            "video.spatial_pos",
            normal_matrix(&mut rng, cfg.patches_per_frame(), d, 0.1),
        );
        let video_blocks = blocks(store, &mut rng, "video.block", cfg.video_layers);
        let video_norm = LayerNormParams::register(store, "video.norm", d);

        let descriptor = Linear::register(store, &mut rng, "text.spacetime", DESCRIPTOR_DIM, d);
        let token_embedding = store.add(
            "text.token_embedding",
            normal_matrix(&mut rng, vocab_len, d, 1.0),
        );
        let text_pos = store.add(
            "text.position",
            normal_matrix(&mut rng, cfg.max_text_len, d, 0.1),
        );
        let text_blocks = blocks(store, &mut rng, "text.block", cfg.text_layers);
        let text_norm = LayerNormParams::register(store, "text.norm", d);
        // Identity start: query and track words leave the shared encoder in
        // the same space.
        let mut identity = Matrix::zeros(d, d);
        for i in 0..d {
            identity.set(i, i, 1.0);
        }
        let query_proj = store.add("query.proj", identity);
        let no_text_spacetime = store.add("text.no_text_spacetime", normal_matrix(&mut rng, 1, d, 0.1));
        let no_text_context = store.add("text.no_text_context", normal_matrix(&mut rng, 1, d, 0.1));

        let fusion_blocks = blocks(store, &mut rng, "fusion.block", cfg.fusion_layers);

        Self {
            patch,
            temporal_pos,
            spatial_pos,
            video_blocks,
            video_norm,
            descriptor,
            token_embedding,
            text_pos,
            text_blocks,
            text_norm,
            query_proj,
            no_text_spacetime,
            no_text_context,
            fusion_blocks,
        }
    }
}

/// Configuration, vocabulary and every learnable tensor of the model.
#[derive(Clone, Debug)]
pub struct ModelParams {
    config: ModelConfig,
    vocab: Vocab,
    weights: ParamStore,
    pub(crate) layout: Layout,
}

impl ModelParams {
    /// Freshly initialized weights; a pure function of the arguments.
    pub fn init(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut weights = ParamStore::new();
        let layout = Layout::register(&mut weights, &config, vocab.len(), seed);
        Ok(Self {
            config,
            vocab,
            weights,
            layout,
        })
    }

    /// Rebuilds a model from stored tensors, checking every name and shape
    /// against the layout implied by `config` and `vocab`.
    pub fn from_tensors(
        config: ModelConfig,
        vocab: Vocab,
        tensors: Vec<(String, Matrix)>,
    ) -> Result<Self> {
        let mut model = Self::init(config, vocab, 0)?;
        if tensors.len() != model.weights.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.weights.len(),
                tensors.len()
            )));
        }
        for (name, m) in tensors {
            let id = model
                .weights
                .id_of(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{name}`")))?;
            let expected = model.weights.get(id).shape();
            if m.shape() != expected {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    m.shape(),
                    expected
                )));
            }
            *model.weights.get_mut(id) = m;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn weights(&self) -> &ParamStore {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut ParamStore {
        &mut self.weights
    }

    /// Checks that `video` has the frame size this model was built for.
    pub fn check_video(&self, video: &VideoClip) -> Result<()> {
        if video.width != self.config.frame_width || video.height != self.config.frame_height {
            return Err(Error::Config(format!(
                "video {} is {}x{} but the model expects {}x{} frames",
                video.id, video.width, video.height, self.config.frame_width, self.config.frame_height
            )));
        }
        Ok(())
    }
}

/// Raw space-time patches: `K·L` rows of `3·P·P` values, frame-major, patches
/// row-major within a frame, pixels row-major and RGB-interleaved within a patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Patches {
    pub frames_sampled: usize,
    pub per_frame: usize,
    pub data: Matrix,
}

/// Frame indices `round(i·(F−1)/(K−1))`; all zero when `F = 1` or `K = 1`.
pub fn sample_frame_indices(frame_count: usize, k: usize) -> Vec<usize> {
    if k <= 1 || frame_count <= 1 {
        return vec![0; k];
    }
    (0..k)
        .map(|i| ((i * (frame_count - 1)) as f64 / (k - 1) as f64).round() as usize)
        .collect()
}

pub fn patchify(video: &VideoClip, config: &ModelConfig) -> Result<Patches> {
    let p = config.patch_size;
    if p == 0 || video.width < p || video.height < p {
        return Err(Error::Config(format!(
            "video {} frames ({}x{}) are smaller than the {p}x{p} patch",
            video.id, video.width, video.height
        )));
    }
    if video.frames.is_empty() {
        return Err(Error::Input(format!("video {} has no frames", video.id)));
    }
    let (rows, cols) = (video.height / p, video.width / p);
    let per_frame = rows * cols;
    let k = config.frames_sampled;
    let dim = 3 * p * p;
    let mut data = Vec::with_capacity(k * per_frame * dim);
    for fi in sample_frame_indices(video.frame_count(), k) {
        let frame = &video.frames[fi];
        for pr in 0..rows {
            for pc in 0..cols {
                for y in pr * p..(pr + 1) * p {
                    for x in pc * p..(pc + 1) * p {
                        data.extend(frame.pixel(x, y).iter().map(|&v| v as f64));
                    }
                }
            }
        }
    }
    Ok(Patches {
        frames_sampled: k,
        per_frame,
        data: Matrix::from_vec(k * per_frame, dim, data),
    })
}

/// `V_{K,L}`: one `D`-dimensional token per space-time patch.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualTokens {
    pub tokens: Matrix,
}

fn check_patches(patches: &Patches, cfg: &ModelConfig) -> Result<()> {
    if patches.frames_sampled != cfg.frames_sampled
        || patches.per_frame != cfg.patches_per_frame()
        || patches.data.rows() != cfg.visual_tokens()
        || patches.data.cols() != cfg.patch_dim()
    {
        return Err(Error::Config(format!(
            "patch tensor {:?} does not match the model ({} x {} tokens of width {})",
            patches.data.shape(),
            cfg.frames_sampled,
            cfg.patches_per_frame(),
            cfg.patch_dim()
        )));
    }
    Ok(())
}

pub(crate) fn video_tokens_on(tape: &mut Tape, params: &ModelParams, patches: &Patches) -> Result<Var> {
    let cfg = &params.config;
    check_patches(patches, cfg)?;
    let l = &params.layout;
    let x = tape.input(patches.data.clone());
    let x = l.patch.forward(tape, x);

    // Positional rows laid out to match the K·L token order.
    let mut temporal_ids = Vec::with_capacity(cfg.visual_tokens());
    let mut spatial_ids = Vec::with_capacity(cfg.visual_tokens());
    for k in 0..patches.frames_sampled {
        for s in 0..patches.per_frame {
            temporal_ids.push(k);
            spatial_ids.push(s);
        }
    }
    let t_pos = tape.gather(l.temporal_pos, &temporal_ids);
    let s_pos = tape.gather(l.spatial_pos, &spatial_ids);
    let x = tape.add(x, t_pos);
    let mut x = tape.add(x, s_pos);
    for block in &l.video_blocks {
        x = block.forward(tape, x, None);
    }
    Ok(l.video_norm.forward(tape, x))
}

pub fn encode_video(patches: &Patches, params: &ModelParams) -> Result<VisualTokens> {
    let mut tape = Tape::new(params.weights());
    let out = video_tokens_on(&mut tape, params, patches)?;
    Ok(VisualTokens {
        tokens: tape.value(out).clone(),
    })
}

/// Normalized box trajectory and time slot of one track:
/// `(x_LT/W, y_LT/H, x_RB/W, y_RB/H, Δx_c/W, Δy_c/H, Δw/W, Δh/H, t_S/F, t_E/F, t_E/F − t_S/F)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceTimeDescriptor(pub [f64; DESCRIPTOR_DIM]);

/// Boxes and average corners are clamped to the frame first. Centers and
/// sizes come from the first and last box of the track; frame indices are
/// 0-based and normalized by the total frame count `F`.
pub fn spacetime_descriptor(
    track: &TextTrack,
    width: usize,
    height: usize,
    frame_count: usize,
) -> SpaceTimeDescriptor {
    let (w, h, f) = (width as f64, height as f64, frame_count as f64);
    let start = track.box_start.clamped(w, h);
    let end = track.box_end.clamped(w, h);
    let (xs, ys) = start.center();
    let (xe, ye) = end.center();
    let tl = (
        track.avg_top_left.0.clamp(0.0, w),
        track.avg_top_left.1.clamp(0.0, h),
    );
    let br = (
        track.avg_bottom_right.0.clamp(0.0, w),
        track.avg_bottom_right.1.clamp(0.0, h),
    );
    let ts = track.t_start as f64 / f;
    let te = track.t_end as f64 / f;
    SpaceTimeDescriptor([
        tl.0 / w,
        tl.1 / h,
        br.0 / w,
        br.1 / h,
        (xe - xs) / w,
        (ye - ys) / h,
        (end.w - start.w) / w,
        (end.h - start.h) / h,
        ts,
        te,
        te - ts,
    ])
}

/// `R_ST` and `R_TC`, one row per track (or the no-text token for `∅`).
#[derive(Clone, Debug, PartialEq)]
pub struct TrackEmbeddings {
    pub spacetime: Matrix,
    pub context: Matrix,
}

impl TrackEmbeddings {
    pub fn len(&self) -> usize {
        self.spacetime.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Track inputs after the deterministic preprocessing step.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedTracks {
    pub descriptors: Vec<SpaceTimeDescriptor>,
    pub word_ids: Vec<Vec<usize>>,
}

impl PreparedTracks {
    pub fn new(
        tracks: &[TextTrack],
        dims: (usize, usize, usize),
        params: &ModelParams,
    ) -> Self {
        let (w, h, f) = dims;
        Self {
            descriptors: tracks
                .iter()
                .map(|t| spacetime_descriptor(t, w, h, f))
                .collect(),
            word_ids: tracks
                .iter()
                .map(|t| params.vocab.encode(&t.word, params.config.max_text_len))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

/// Runs the shared text transformer on `ids` (padding masked) and returns the
/// `1 × D` output at the `[EOS]` position.
pub(crate) fn text_eos_on(tape: &mut Tape, params: &ModelParams, ids: &[usize]) -> Result<Var> {
    let l = &params.layout;
    let n = ids.len();
    if n > params.config.max_text_len {
        return Err(Error::Input(format!(
            "token sequence of length {n} exceeds max_text_len {}",
            params.config.max_text_len
        )));
    }
    let eos = ids
        .iter()
        .rposition(|&i| i == EOS_ID)
        .ok_or_else(|| Error::Input("token sequence has no [EOS]".into()))?;
    if let Some(&bad) = ids.iter().find(|&&i| i >= params.vocab.len()) {
        return Err(Error::Input(format!("token id {bad} outside vocabulary")));
    }
    let keep: Vec<bool> = ids.iter().map(|&i| i != PAD_ID).collect();
    let masked = keep.iter().any(|k| !k);

    let tok = tape.gather(l.token_embedding, ids);
    let positions: Vec<usize> = (0..n).collect();
    let pos = tape.gather(l.text_pos, &positions);
    let mut x = tape.add(tok, pos);
    for block in &l.text_blocks {
        x = block.forward(tape, x, masked.then_some(keep.as_slice()));
    }
    let x = l.text_norm.forward(tape, x);
    Ok(tape.slice_rows(x, eos, 1))
}

/// `(R_ST, R_TC)` on the tape, each `n × D` (`1 × D` for the empty set).
pub(crate) fn track_embeddings_on(
    tape: &mut Tape,
    params: &ModelParams,
    tracks: &PreparedTracks,
) -> Result<(Var, Var)> {
    let l = &params.layout;
    if tracks.is_empty() {
        let st = tape.param(l.no_text_spacetime);
        let tc = tape.param(l.no_text_context);
        return Ok((st, tc));
    }
    let desc = Matrix::from_rows(
        &tracks
            .descriptors
            .iter()
            .map(|d| d.0.to_vec())
            .collect::<Vec<_>>(),
    );
    let desc = tape.input(desc);
    let st = l.descriptor.forward(tape, desc);
    let rows = tracks
        .word_ids
        .iter()
        .map(|ids| text_eos_on(tape, params, ids))
        .collect::<Result<Vec<_>>>()?;
    let tc = if rows.len() == 1 {
        rows[0]
    } else {
        tape.concat_rows(&rows)
    };
    Ok((st, tc))
}

pub fn embed_tracks(
    tracks: &[TextTrack],
    dims: (usize, usize, usize),
    params: &ModelParams,
) -> Result<TrackEmbeddings> {
    let prepared = PreparedTracks::new(tracks, dims, params);
    let mut tape = Tape::new(params.weights());
    let (st, tc) = track_embeddings_on(&mut tape, params, &prepared)?;
    Ok(TrackEmbeddings {
        spacetime: tape.value(st).clone(),
        context: tape.value(tc).clone(),
    })
}

/// Unit-norm sentence embedding `w_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryEmbedding {
    pub w: Vec<f64>,
}

pub(crate) fn query_on(tape: &mut Tape, params: &ModelParams, ids: &[usize]) -> Result<Var> {
    let h = text_eos_on(tape, params, ids)?;
    let proj = tape.param(params.layout.query_proj);
    let h = tape.matmul(h, proj);
    let norm = crate::nn::l2_norm(tape.value(h).row(0));
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Numeric(format!("query embedding has norm {norm}")));
    }
    Ok(tape.l2_normalize(h))
}

/// Embeds already tokenized query ids (which may carry trailing `[PAD]`s).
pub fn encode_query_ids(ids: &[usize], params: &ModelParams) -> Result<QueryEmbedding> {
    let mut tape = Tape::new(params.weights());
    let out = query_on(&mut tape, params, ids)?;
    Ok(QueryEmbedding {
        w: tape.value(out).row(0).to_vec(),
    })
}

pub fn encode_query(sentence: &str, params: &ModelParams) -> Result<QueryEmbedding> {
    if split_words(sentence).is_empty() {
        return Err(Error::Input("query sentence is empty".into()));
    }
    encode_query_ids(
        &params.vocab.encode(sentence, params.config.max_text_len),
        params,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BoundingBox, Frame};
    use crate::nn::l2_norm;
    use proptest::prelude::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 16,
            heads: 2,
            video_layers: 1,
            text_layers: 1,
            ..Default::default()
        }
    }

    fn model() -> ModelParams {
        let vocab = Vocab::build(["a sign reads exit", "food court open", "carbon"]);
        ModelParams::init(tiny_config(), vocab, 1).unwrap()
    }

    fn noise_clip(frames: usize, w: usize, h: usize) -> VideoClip {
        let frames = (0..frames)
            .map(|f| {
                let data = (0..w * h * 3)
                    .map(|i| ((i * 31 + f * 17) % 97) as f32 / 96.0)
                    .collect();
                Frame::new(w, h, data).unwrap()
            })
            .collect();
        VideoClip::new("v", frames, None).unwrap()
    }

    fn track(bs: BoundingBox, be: BoundingBox, tl: (f64, f64), br: (f64, f64), ts: usize, te: usize) -> TextTrack {
        TextTrack {
            word: "EXIT".into(),
            confidence: 0.5,
            box_start: bs,
            box_end: be,
            avg_top_left: tl,
            avg_bottom_right: br,
            t_start: ts,
            t_end: te,
        }
    }

    #[test]
    fn patch_counts() {
        let cfg = tiny_config();
        let p = patchify(&noise_clip(5, 32, 32), &cfg).unwrap();
        assert_eq!(p.data.rows(), 16);
        assert_eq!(p.data.cols(), 768);
        // residual border discarded
        let p = patchify(&noise_clip(5, 40, 33), &cfg).unwrap();
        assert_eq!(p.per_frame, 4);
    }

    #[test]
    fn frame_sampling() {
        assert_eq!(sample_frame_indices(10, 4), vec![0, 3, 6, 9]);
        assert_eq!(sample_frame_indices(1, 4), vec![0, 0, 0, 0]);
        let cfg = tiny_config();
        let p = patchify(&noise_clip(1, 32, 32), &cfg).unwrap();
        let per = p.per_frame;
        for k in 1..4 {
            assert_eq!(p.data.slice_rows(k * per, per), p.data.slice_rows(0, per));
        }
    }

    #[test]
    fn small_frames_are_config_errors() {
        let err = patchify(&noise_clip(2, 8, 32), &tiny_config()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn patch_layout_is_row_major() {
        let cfg = ModelConfig {
            patch_size: 2,
            frames_sampled: 1,
            ..tiny_config()
        };
        let mut frame = Frame::filled(4, 2, [0.0; 3]);
        frame.set_pixel(2, 0, [1.0, 0.5, 0.25]);
        let clip = VideoClip::new("v", vec![frame], None).unwrap();
        let p = patchify(&clip, &cfg).unwrap();
        assert_eq!(p.data.rows(), 2);
        assert_eq!(&p.data.row(1)[..3], &[1.0, 0.5, 0.25]);
        assert!(p.data.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn video_encoding_shape_and_determinism() {
        let m = model();
        let p = patchify(&noise_clip(7, 32, 32), m.config()).unwrap();
        let a = encode_video(&p, &m).unwrap();
        assert_eq!(a.tokens.shape(), (16, 16));
        assert_eq!(a, encode_video(&p, &m).unwrap());
    }

    #[test]
    fn zero_frames_give_zero_patch_embeddings() {
        let mut m = model();
        let l = m.layout.clone();
        for id in [l.temporal_pos, l.spatial_pos, l.patch.bias] {
            m.weights_mut().get_mut(id).data_mut().fill(0.0);
        }
        let clip = VideoClip::new("z", vec![Frame::filled(32, 32, [0.0; 3]); 3], None).unwrap();
        let p = patchify(&clip, m.config()).unwrap();
        let mut tape = Tape::new(m.weights());
        let x = tape.input(p.data.clone());
        let x = l.patch.forward(&mut tape, x);
        assert!(tape.value(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn video_attention_is_permutation_equivariant_without_positions() {
        let mut m = model();
        let l = m.layout.clone();
        for id in [l.temporal_pos, l.spatial_pos] {
            m.weights_mut().get_mut(id).data_mut().fill(0.0);
        }
        let p = patchify(&noise_clip(4, 32, 32), m.config()).unwrap();
        let n = p.data.rows();
        let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
        let mut shuffled = Matrix::zeros(n, p.data.cols());
        for (dst, &src) in perm.iter().enumerate() {
            shuffled.row_mut(dst).copy_from_slice(p.data.row(src));
        }
        let a = encode_video(&p, &m).unwrap().tokens;
        let b = encode_video(&Patches { data: shuffled, ..p }, &m).unwrap().tokens;
        for (dst, &src) in perm.iter().enumerate() {
            for (x, y) in b.row(dst).iter().zip(a.row(src)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn descriptor_for_static_full_frame_box() {
        let f = 10;
        let full = BoundingBox::new(0.0, 0.0, 64.0, 48.0);
        let t = track(full, full, (0.0, 0.0), (64.0, 48.0), 0, f - 1);
        let d = spacetime_descriptor(&t, 64, 48, f).0;
        let e = 0.9;
        assert_eq!(d, [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, e, e]);
    }

    #[test]
    fn descriptor_for_moving_box() {
        // centers (10,10) -> (30,10), size 20x10
        let t = track(
            BoundingBox::new(0.0, 5.0, 20.0, 10.0),
            BoundingBox::new(20.0, 5.0, 20.0, 10.0),
            (10.0, 5.0),
            (30.0, 15.0),
            2,
            6,
        );
        let d = spacetime_descriptor(&t, 100, 100, 10).0;
        let expected = [0.1, 0.05, 0.3, 0.15, 0.2, 0.0, 0.0, 0.0, 0.2, 0.6, 0.4];
        for (a, b) in d.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn descriptor_clamps_boxes() {
        let b = BoundingBox::new(-10.0, 5.0, 30.0, 10.0);
        let t = track(b, b, (-10.0, 5.0), (20.0, 15.0), 0, 0);
        assert_eq!(spacetime_descriptor(&t, 100, 100, 4).0[0], 0.0);
    }

    fn arb_track() -> impl Strategy<Value = (TextTrack, usize, usize, usize)> {
        (8usize..200, 8usize..200, 1usize..50).prop_flat_map(|(w, h, f)| {
            let coord = -50.0..250.0f64;
            let size = 0.0..120.0f64;
            (
                Just(w),
                Just(h),
                Just(f),
                (coord.clone(), coord.clone(), size.clone(), size.clone()),
                (coord.clone(), coord.clone(), size.clone(), size),
                (coord.clone(), coord.clone(), coord.clone(), coord),
                0..f,
            )
                .prop_flat_map(|(w, h, f, bs, be, avg, ts)| {
                    (Just((w, h, f, bs, be, avg, ts)), ts..f)
                })
                .prop_map(|((w, h, f, bs, be, avg, ts), te)| {
                    let t = track(
                        BoundingBox::new(bs.0, bs.1, bs.2, bs.3),
                        BoundingBox::new(be.0, be.1, be.2, be.3),
                        (avg.0, avg.1),
                        (avg.2, avg.3),
                        ts,
                        te,
                    );
                    (t, w, h, f)
                })
        })
    }

    proptest! {
        #[test]
        fn descriptor_ranges((t, w, h, f) in arb_track()) {
            let d = spacetime_descriptor(&t, w, h, f).0;
            prop_assert_eq!(d[10], d[9] - d[8]);
            for v in &d[0..4] { prop_assert!((0.0..=1.0).contains(v)); }
            for v in &d[4..8] { prop_assert!((-1.0..=1.0).contains(v)); }
            for v in &d[8..11] { prop_assert!((0.0..=1.0).contains(v)); }
        }

        #[test]
        fn descriptor_is_scale_invariant((t, w, h, f) in arb_track(), s in 1usize..5) {
            let sf = s as f64;
            let scale = |b: BoundingBox| BoundingBox::new(b.x * sf, b.y * sf, b.w * sf, b.h * sf);
            let scaled = TextTrack {
                box_start: scale(t.box_start),
                box_end: scale(t.box_end),
                avg_top_left: (t.avg_top_left.0 * sf, t.avg_top_left.1 * sf),
                avg_bottom_right: (t.avg_bottom_right.0 * sf, t.avg_bottom_right.1 * sf),
                ..t.clone()
            };
            let a = spacetime_descriptor(&t, w, h, f).0;
            let b = spacetime_descriptor(&scaled, w * s, h * s, f).0;
            for (x, y) in a.iter().zip(b) { prop_assert!((x - y).abs() < 1e-12); }
        }
    }

    #[test]
    fn empty_track_set_uses_no_text_token() {
        let m = model();
        let e = embed_tracks(&[], (32, 32, 4), &m).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.spacetime.row(0), m.weights().get(m.layout.no_text_spacetime).row(0));
        assert_eq!(e.context.row(0), m.weights().get(m.layout.no_text_context).row(0));
    }

    #[test]
    fn geometry_only_enters_spacetime_rows() {
        let m = model();
        let a = track(BoundingBox::new(0.0, 0.0, 5.0, 5.0), BoundingBox::new(0.0, 0.0, 5.0, 5.0), (0.0, 0.0), (5.0, 5.0), 0, 1);
        let b = track(BoundingBox::new(9.0, 3.0, 8.0, 5.0), BoundingBox::new(12.0, 3.0, 8.0, 5.0), (10.0, 3.0), (18.0, 8.0), 1, 3);
        let tracks: Vec<TextTrack> = vec![a.clone(), b, a.clone(), a.clone(), TextTrack { word: "unknownword".into(), ..a }];
        let e = embed_tracks(&tracks, (32, 32, 4), &m).unwrap();
        assert_eq!(e.spacetime.shape(), (5, 16));
        assert_eq!(e.context.shape(), (5, 16));
        assert_eq!(e.context.row(0), e.context.row(1));
        assert_ne!(e.spacetime.row(0), e.spacetime.row(1));
    }

    #[test]
    fn query_embedding_is_unit_and_deterministic() {
        let m = model();
        let a = encode_query("A sign reads EXIT!", &m).unwrap();
        assert!((l2_norm(&a.w) - 1.0).abs() < 1e-6);
        assert_eq!(a, encode_query("A sign reads EXIT!", &m).unwrap());
        assert_eq!(a, encode_query("a SIGN reads exit", &m).unwrap());
        assert!(matches!(encode_query("  ", &m), Err(Error::Input(_))));
    }

    #[test]
    fn padding_is_masked() {
        let m = model();
        let ids = m.vocab().encode("food court open now", 24);
        let mut padded = ids.clone();
        padded.extend([PAD_ID; 5]);
        assert_eq!(encode_query_ids(&ids, &m).unwrap(), encode_query_ids(&padded, &m).unwrap());
    }

    #[test]
    fn vocabulary_reserves_special_tokens() {
        let v = Vocab::build(["Hello world", "hello, there"]);
        assert_eq!(&v.tokens()[..3], &[PAD, UNK, EOS]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.encode("hello MARS", 8), vec![v.id("hello"), UNK_ID, EOS_ID]);
        assert_eq!(v.encode("a b c d e", 3).len(), 3);
    }
}
