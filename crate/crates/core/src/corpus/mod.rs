//! Corpus data model: videos, OCR text tracks and sentence queries.

pub mod font;
mod io;
mod stats;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{load_corpus, save_corpus};
pub use stats::{
    corpus_stats, match_tokens_to_query, normalize_word, recall_of_correlation, split_words,
    Histogram, StatsReport,
};
pub use synth::{
    generate_synthetic, pseudo_words, subsample_tracks, SyntheticConfig, Vocabulary, PALETTE,
};

/// One RGB raster, channels interleaved, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Input(format!(
                "frame buffer has {} values, expected {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Frame with 8-bit channels mapped to `v / 255`.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| channel_from_u8(b)).collect())
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

#[inline]
pub(crate) fn channel_from_u8(b: u8) -> f32 {
    b as f32 / 255.0
}

/// The eight scenario domains a video may be labelled with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    StreetViewIndoor,
    StreetViewOutdoor,
    Game,
    Sports,
    Driving,
    Activity,
    TvShow,
    Cooking,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::StreetViewIndoor,
        Scenario::StreetViewOutdoor,
        Scenario::Game,
        Scenario::Sports,
        Scenario::Driving,
        Scenario::Activity,
        Scenario::TvShow,
        Scenario::Cooking,
    ];
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Frame>,
    pub scenario: Option<Scenario>,
}

impl VideoClip {
    pub fn new(
        id: impl Into<String>,
        frames: Vec<Frame>,
        scenario: Option<Scenario>,
    ) -> Result<Self> {
        let id = id.into();
        let first = frames
            .first()
            .ok_or_else(|| Error::validation(format!("video {id}"), "frames", "no frames"))?;
        let (width, height) = (first.width, first.height);
        if width == 0 || height == 0 {
            return Err(Error::validation(
                format!("video {id}"),
                "frames",
                "zero-sized frame",
            ));
        }
        if let Some(i) = frames
            .iter()
            .position(|f| f.width != width || f.height != height)
        {
            return Err(Error::validation(
                format!("video {id}"),
                "frames",
                format!("frame {i} is not {width}x{height}"),
            ));
        }
        Ok(Self {
            id,
            width,
            height,
            frames,
            scenario,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// Axis-aligned box in pixels: top-left corner plus size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// The box intersected with `[0, width] × [0, height]`.
    pub fn clamped(&self, width: f64, height: f64) -> Self {
        let x0 = self.x.clamp(0.0, width);
        let y0 = self.y.clamp(0.0, height);
        let x1 = (self.x + self.w).clamp(0.0, width);
        let y1 = (self.y + self.h).clamp(0.0, height);
        Self::new(x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0))
    }
}

impl From<[f64; 4]> for BoundingBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// One tracked OCR instance. Only trajectory aggregates are kept: the boxes at
/// the first and last frame and the average corner positions.
#[derive(Clone, Debug, PartialEq)]
pub struct TextTrack {
    /// Highest-confidence recognition over the trajectory.
    pub word: String,
    pub confidence: f64,
    pub box_start: BoundingBox,
    pub box_end: BoundingBox,
    pub avg_top_left: (f64, f64),
    pub avg_bottom_right: (f64, f64),
    pub t_start: usize,
    pub t_end: usize,
}

impl TextTrack {
    /// Reduces a per-frame box list (frames `t_start..=t_end`) to the stored
    /// aggregates.
    pub fn from_boxes(
        word: impl Into<String>,
        confidence: f64,
        t_start: usize,
        boxes: &[BoundingBox],
    ) -> Result<Self> {
        let word = word.into();
        if boxes.is_empty() {
            return Err(Error::validation(
                format!("track {word:?}"),
                "boxes",
                "empty box list",
            ));
        }
        let n = boxes.len() as f64;
        let avg = |f: &dyn Fn(&BoundingBox) -> f64| boxes.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            avg_top_left: (avg(&|b| b.x), avg(&|b| b.y)),
            avg_bottom_right: (avg(&|b| b.x + b.w), avg(&|b| b.y + b.h)),
            box_start: boxes[0],
            box_end: boxes[boxes.len() - 1],
            t_start,
            t_end: t_start + boxes.len() - 1,
            word,
            confidence,
        })
    }

    /// Checks the track against a video with `frame_count` frames.
    pub fn validate(&self, frame_count: usize, record: &str) -> Result<()> {
        if self.word.trim().is_empty() {
            return Err(Error::validation(record, "word", "must be non-empty"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::validation(
                record,
                "confidence",
                format!("{} is outside [0, 1]", self.confidence),
            ));
        }
        if self.t_end < self.t_start {
            return Err(Error::validation(
                record,
                "t_end",
                format!("t_end {} < t_start {}", self.t_end, self.t_start),
            ));
        }
        if self.t_end >= frame_count {
            return Err(Error::validation(
                record,
                "t_end",
                format!("t_end {} beyond last frame {}", self.t_end, frame_count - 1),
            ));
        }
        let coords = [
            self.box_start.x,
            self.box_start.y,
            self.box_start.w,
            self.box_start.h,
            self.box_end.x,
            self.box_end.y,
            self.box_end.w,
            self.box_end.h,
            self.avg_top_left.0,
            self.avg_top_left.1,
            self.avg_bottom_right.0,
            self.avg_bottom_right.1,
        ];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation(record, "box", "non-finite coordinate"));
        }
        if self.box_start.w < 0.0
            || self.box_start.h < 0.0
            || self.box_end.w < 0.0
            || self.box_end.h < 0.0
        {
            return Err(Error::validation(record, "box", "negative box size"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub video_id: String,
    pub split: Split,
}

/// Validated, immutable collection of videos, their tracks and queries.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    videos: BTreeMap<String, VideoClip>,
    tracks: BTreeMap<String, Vec<TextTrack>>,
    queries: Vec<Query>,
}

impl Corpus {
    /// Builds a corpus and checks every invariant. Videos missing from
    /// `tracks` get an empty track list.
    pub fn new(
        videos: impl IntoIterator<Item = VideoClip>,
        tracks: BTreeMap<String, Vec<TextTrack>>,
        queries: Vec<Query>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for v in videos {
            if map.contains_key(&v.id) {
                return Err(Error::validation(
                    format!("video {}", v.id),
                    "id",
                    "duplicate video id",
                ));
            }
            map.insert(v.id.clone(), v);
        }

        let mut all_tracks = BTreeMap::new();
        for (vid, list) in tracks {
            let video = map.get(&vid).ok_or_else(|| Error::Referential {
                video_id: vid.clone(),
                context: "track".into(),
            })?;
            for (i, t) in list.iter().enumerate() {
                t.validate(video.frame_count(), &format!("track {i} of video {vid}"))?;
            }
            all_tracks.insert(vid, list);
        }
        for id in map.keys() {
            all_tracks.entry(id.clone()).or_default();
        }

        let mut split_of: BTreeMap<&str, Split> = BTreeMap::new();
        for (i, q) in queries.iter().enumerate() {
            if q.text.trim().is_empty() {
                return Err(Error::validation(
                    format!("query {i}"),
                    "text",
                    "must be non-empty",
                ));
            }
            if !map.contains_key(&q.video_id) {
                return Err(Error::Referential {
                    video_id: q.video_id.clone(),
                    context: format!("query {i}"),
                });
            }
            match split_of.insert(&q.video_id, q.split) {
                Some(prev) if prev != q.split => {
                    return Err(Error::validation(
                        format!("query {i}"),
                        "split",
                        format!(
                            "video {} already has {prev} queries; a video belongs to one split",
                            q.video_id
                        ),
                    ))
                }
                _ => {}
            }
        }

        Ok(Self {
            videos: map,
            tracks: all_tracks,
            queries,
        })
    }

    pub fn videos(&self) -> &BTreeMap<String, VideoClip> {
        &self.videos
    }

    pub fn video(&self, id: &str) -> Option<&VideoClip> {
        self.videos.get(id)
    }

    pub fn tracks(&self) -> &BTreeMap<String, Vec<TextTrack>> {
        &self.tracks
    }

    /// Tracks of `video_id`; empty for unknown ids or videos without text.
    pub fn tracks_of(&self, video_id: &str) -> &[TextTrack] {
        self.tracks.get(video_id).map_or(&[], Vec::as_slice)
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn queries_in(&self, split: Split) -> impl Iterator<Item = &Query> {
        self.queries.iter().filter(move |q| q.split == split)
    }

    /// Ids (sorted) of videos that have at least one query in `split`.
    pub fn video_ids_in(&self, split: Split) -> Vec<&str> {
        let set: BTreeSet<&str> = self
            .queries_in(split)
            .map(|q| q.video_id.as_str())
            .collect();
        set.into_iter().collect()
    }

    /// Copy of the corpus with every track list replaced by `f(video_id, tracks)`.
    pub fn map_tracks<F>(&self, mut f: F) -> Result<Corpus>
    where
        F: FnMut(&str, &[TextTrack]) -> Vec<TextTrack>,
    {
        let tracks = self
            .tracks
            .iter()
            .map(|(id, list)| (id.clone(), f(id, list)))
            .collect();
        Corpus::new(self.videos.values().cloned(), tracks, self.queries.clone())
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn empty_track_lists_are_filled_in() {
        let c = small_corpus();
        assert_eq!(c.videos().len(), 3);
        assert_eq!(c.queries().len(), 12);
        assert!(c.tracks_of("v2").is_empty());
        assert_eq!(c.tracks().len(), 3);
    }

    #[test]
    fn dangling_query_is_referential_error() {
        let err = Corpus::new(
            vec![clip("v0", 2)],
            BTreeMap::new(),
            vec![Query {
                text: "hello".into(),
                video_id: "v99".into(),
                split: Split::Train,
            }],
        )
        .unwrap_err();
        assert!(matches!(&err, Error::Referential { video_id, .. } if video_id == "v99"));
        assert!(err.to_string().contains("v99"));
    }

    #[test]
    fn reversed_time_slot_is_rejected() {
        let mut tracks = BTreeMap::new();
        tracks.insert("v0".to_string(), vec![track("EXIT", 0.5, 3, 1)]);
        let err = Corpus::new(vec![clip("v0", 4)], tracks, vec![]).unwrap_err();
        assert!(matches!(&err, Error::Validation { field, .. } if field == "t_end"));
    }

    #[test]
    fn video_in_two_splits_is_rejected() {
        let q = |split| Query {
            text: "x".into(),
            video_id: "v0".into(),
            split,
        };
        let err = Corpus::new(
            vec![clip("v0", 2)],
            BTreeMap::new(),
            vec![q(Split::Train), q(Split::Test)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
    }

    #[test]
    fn mismatched_frame_sizes_are_rejected() {
        let err = VideoClip::new(
            "v",
            vec![Frame::filled(8, 8, [0.0; 3]), Frame::filled(8, 9, [0.0; 3])],
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("frame 1"));
    }

    #[test]
    fn per_frame_boxes_reduce_to_aggregates() {
        let boxes = [
            BoundingBox::new(0.0, 0.0, 10.0, 4.0),
            BoundingBox::new(2.0, 1.0, 10.0, 4.0),
            BoundingBox::new(4.0, 2.0, 12.0, 4.0),
        ];
        let t = TextTrack::from_boxes("A", 0.5, 2, &boxes).unwrap();
        assert_eq!(t.t_end, 4);
        assert_eq!(t.avg_top_left, (2.0, 1.0));
        assert!((t.avg_bottom_right.0 - (10.0 + 12.0 + 16.0) / 3.0).abs() < 1e-12);
        assert_eq!(t.box_end, boxes[2]);
    }

    #[test]
    fn clamping_keeps_box_inside_frame() {
        let b = BoundingBox::new(-5.0, 90.0, 20.0, 20.0).clamped(100.0, 100.0);
        assert_eq!(b, BoundingBox::new(0.0, 90.0, 15.0, 10.0));
    }
}
