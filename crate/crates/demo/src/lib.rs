//! Browser demo bindings. Each exported function wraps a plain Rust function
//! that returns `Result<_, String>`, so the logic is testable off the browser.

use scenetext_core::corpus::{
    generate_synthetic, BoundingBox, Corpus, SyntheticConfig, TextTrack, Vocabulary,
};
use scenetext_core::encoders::spacetime_descriptor;
use scenetext_core::evaluation::{rank_metrics, Direction, RetrievalMetrics};
use scenetext_core::fusion::SimilarityMatrix;
use scenetext_core::nn::Matrix;
use serde_json::json;
use wasm_bindgen::prelude::*;

const FRAME_SIDE: usize = 64;
const FRAMES: usize = 6;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// A small generated corpus held in browser memory.
#[wasm_bindgen]
pub struct DemoCorpus {
    corpus: Corpus,
    ids: Vec<String>,
}

impl DemoCorpus {
    pub fn build(seed: u64, videos: usize) -> Result<Self, String> {
        if !(1..=64).contains(&videos) {
            return Err("choose between 1 and 64 videos".into());
        }
        let cfg = SyntheticConfig {
            videos,
            frame_width: FRAME_SIDE,
            frame_height: FRAME_SIDE,
            frame_count: FRAMES,
            queries_per_video: 2,
            tracks_per_video: 3,
            ocr_vocabulary: Vocabulary::Generated { generated: videos * 3 + 10 },
            ..Default::default()
        };
        let corpus = generate_synthetic(&cfg, seed).map_err(|e| e.to_string())?;
        let ids = corpus.videos().keys().cloned().collect();
        Ok(Self { corpus, ids })
    }

    fn id(&self, video: usize) -> Result<&str, String> {
        self.ids
            .get(video)
            .map(String::as_str)
            .ok_or_else(|| format!("no video {video}"))
    }

    /// JSON with the video id, split, OCR tracks and queries of one video.
    pub fn describe(&self, video: usize) -> Result<String, String> {
        let id = self.id(video)?;
        let tracks: Vec<_> = self
            .corpus
            .tracks_of(id)
            .iter()
            .map(|t| json!({"word": t.word, "t_start": t.t_start, "t_end": t.t_end, "confidence": t.confidence}))
            .collect();
        let queries: Vec<_> = self
            .corpus
            .queries()
            .iter()
            .filter(|q| q.video_id == id)
            .map(|q| json!({"text": q.text, "split": q.split}))
            .collect();
        Ok(json!({"id": id, "tracks": tracks, "queries": queries}).to_string())
    }

    /// RGBA bytes of one frame, ready for `ImageData`.
    pub fn rgba(&self, video: usize, frame: usize) -> Result<Vec<u8>, String> {
        let clip = &self.corpus.videos()[self.id(video)?];
        let f = clip
            .frames
            .get(frame)
            .ok_or_else(|| format!("no frame {frame}"))?;
        Ok(f.to_rgb8()
            .chunks(3)
            .flat_map(|p| [p[0], p[1], p[2], 255])
            .collect())
    }
}

#[wasm_bindgen]
impl DemoCorpus {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, videos: usize) -> Result<DemoCorpus, JsError> {
        Self::build(seed, videos).map_err(js)
    }

    pub fn video_count(&self) -> usize {
        self.ids.len()
    }

    pub fn frame_count(&self) -> usize {
        FRAMES
    }

    /// Frames are square, this many pixels per side.
    pub fn frame_size(&self) -> usize {
        FRAME_SIDE
    }

    pub fn video_json(&self, video: usize) -> Result<String, JsError> {
        self.describe(video).map_err(js)
    }

    pub fn frame_rgba(&self, video: usize, frame: usize) -> Result<Vec<u8>, JsError> {
        self.rgba(video, frame).map_err(js)
    }
}

/// Descriptor of a track whose box moves linearly from `start` to `end`
/// (each `[x, y, w, h]`) over frames `t_start..=t_end`.
pub fn descriptor_for(
    start: &[f64],
    end: &[f64],
    t_start: usize,
    t_end: usize,
    dims: (usize, usize, usize),
) -> Result<Vec<f64>, String> {
    let (width, height, frames) = dims;
    if start.len() != 4 || end.len() != 4 {
        return Err("boxes need four numbers: x, y, w, h".into());
    }
    if t_end < t_start || t_end >= frames || width == 0 || height == 0 {
        return Err("need 0 <= t_start <= t_end < frames and a non-empty frame".into());
    }
    let steps = t_end - t_start;
    let boxes: Vec<BoundingBox> = (0..=steps)
        .map(|k| {
            let a = if steps == 0 { 0.0 } else { k as f64 / steps as f64 };
            let lerp = |i: usize| start[i] + a * (end[i] - start[i]);
            BoundingBox::new(lerp(0), lerp(1), lerp(2), lerp(3))
        })
        .collect();
    let track = TextTrack::from_boxes("demo", 1.0, t_start, &boxes).map_err(|e| e.to_string())?;
    Ok(spacetime_descriptor(&track, width, height, frames).0.to_vec())
}

#[wasm_bindgen]
pub fn descriptor(
    start: &[f64],
    end: &[f64],
    t_start: usize,
    t_end: usize,
    width: usize,
    height: usize,
    frames: usize,
) -> Result<Vec<f64>, JsError> {
    descriptor_for(start, end, t_start, t_end, (width, height, frames)).map_err(js)
}

fn metrics_json(m: &RetrievalMetrics) -> serde_json::Value {
    json!({"r1": m.r(1), "r5": m.r(5), "r10": m.r(10), "mdr": m.mdr, "mnr": m.mnr, "count": m.count})
}

/// Parses a square score matrix (rows are videos, columns are queries, one
/// row per line) whose diagonal holds the matching pairs.
pub fn metrics_for(text: &str) -> Result<String, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err("enter a square matrix, one row per line".into());
    }
    let ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let sim = SimilarityMatrix {
        scores: Matrix::from_rows(&rows),
        row_ids: ids.clone(),
        col_ids: (0..n).map(|j| format!("q{j}")).collect(),
    };
    let l2v = rank_metrics(&sim, &ids, Direction::L2v).map_err(|e| e.to_string())?;
    let v2l = rank_metrics(&sim, &ids, Direction::V2l).map_err(|e| e.to_string())?;
    Ok(json!({"l2v": metrics_json(&l2v), "v2l": metrics_json(&v2l)}).to_string())
}

#[wasm_bindgen]
pub fn metrics(text: &str) -> Result<String, JsError> {
    metrics_for(text).map_err(js)
}
