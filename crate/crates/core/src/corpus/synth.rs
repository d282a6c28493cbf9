//! Deterministic synthetic corpora with planted OCR words.
//!
//! Every video gets a solid background whose color encodes an attribute word
//! and a set of OCR tracks whose words are drawn into the frames with the
//! built-in bitmap font. Queries combine the attribute word with, for a
//! configured fraction of queries, one of the video's planted words.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::font::{self, GLYPH_HEIGHT};
use super::{
    normalize_word, split_words, BoundingBox, Corpus, Frame, Query, Scenario, Split, TextTrack,
    VideoClip,
};
use crate::{Error, Result};

/// Background colors, indexed by attribute position.
pub const PALETTE: [[u8; 3]; 12] = [
    [220, 40, 40],
    [40, 170, 60],
    [40, 70, 210],
    [235, 210, 50],
    [60, 200, 210],
    [200, 60, 200],
    [240, 240, 240],
    [110, 110, 110],
    [240, 140, 30],
    [120, 60, 20],
    [150, 200, 120],
    [25, 25, 60],
];

const WITH_ATTRIBUTE_AND_WORD: [&str; 4] = [
    "a {attr} scene with the sign {word}",
    "the word {word} on a {attr} background",
    "{word} written over a {attr} backdrop",
    "a {attr} video showing {word}",
];
const WITH_ATTRIBUTE: [&str; 3] = ["a {attr} scene", "a plain {attr} background", "a {attr} video clip"];
const WITH_WORD: [&str; 3] = ["the sign reads {word}", "{word} appears on screen", "text showing {word}"];
const WITH_NOTHING: [&str; 1] = ["an unremarkable scene"];

fn template_words() -> BTreeSet<String> {
    WITH_ATTRIBUTE_AND_WORD
        .iter()
        .chain(&WITH_ATTRIBUTE)
        .chain(&WITH_WORD)
        .chain(&WITH_NOTHING)
        .flat_map(|t| split_words(t))
        .filter(|w| !w.starts_with('{') && w != "attr" && w != "word")
        .collect()
}

/// OCR vocabulary: an explicit word list or a number of generated pseudo-words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Vocabulary {
    Words(Vec<String>),
    Generated { generated: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub videos: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    pub frame_count: usize,
    pub queries_per_video: usize,
    pub tracks_per_video: usize,
    /// Fraction of queries that mention one of their video's planted words.
    pub planted_fraction: f64,
    pub ocr_vocabulary: Vocabulary,
    /// Visual attribute words; the i-th word maps to `PALETTE[i]`.
    pub attribute_vocabulary: Vec<String>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Every OCR word is used by at most one video.
    #[serde(default = "default_true")]
    pub unique_words: bool,
    #[serde(default = "default_true")]
    pub render_glyphs: bool,
    #[serde(default = "default_true")]
    pub attribute_in_query: bool,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            videos: 200,
            frame_width: 32,
            frame_height: 32,
            frame_count: 8,
            queries_per_video: 4,
            tracks_per_video: 4,
            planted_fraction: 1.0,
            ocr_vocabulary: Vocabulary::Generated { generated: 1000 },
            attribute_vocabulary: ["red", "green", "blue", "yellow", "cyan", "magenta", "white", "gray"]
                .map(String::from)
                .to_vec(),
            test_fraction: 0.2,
            unique_words: true,
            render_glyphs: true,
            attribute_in_query: true,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.videos == 0 {
            return err("`videos` must be positive".into());
        }
        if self.frame_width == 0 || self.frame_height == 0 || self.frame_count == 0 {
            return err("frame dimensions and `frame_count` must be positive".into());
        }
        if self.queries_per_video == 0 {
            return err("`queries_per_video` must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.planted_fraction) {
            return err("`planted_fraction` must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return err("`test_fraction` must lie in [0, 1]".into());
        }
        if self.attribute_vocabulary.is_empty() {
            return err("`attribute_vocabulary` is empty".into());
        }
        if self.attribute_vocabulary.len() > PALETTE.len() {
            return err(format!(
                "`attribute_vocabulary` has {} words but only {} colors are available",
                self.attribute_vocabulary.len(),
                PALETTE.len()
            ));
        }
        match &self.ocr_vocabulary {
            Vocabulary::Words(w) if w.is_empty() => return err("`ocr_vocabulary` is empty".into()),
            Vocabulary::Generated { generated: 0 } => {
                return err("`ocr_vocabulary` is empty".into())
            }
            _ => {}
        }
        if self.planted_fraction > 0.0 && self.tracks_per_video == 0 {
            return err("`planted_fraction` > 0 needs `tracks_per_video` > 0".into());
        }
        Ok(())
    }

    fn reserved_words(&self) -> BTreeSet<String> {
        let mut r = template_words();
        for a in &self.attribute_vocabulary {
            r.extend(split_words(a));
        }
        r
    }

    fn resolve_vocabulary(&self, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
        let reserved = self.reserved_words();
        let words = match &self.ocr_vocabulary {
            Vocabulary::Generated { generated } => pseudo_words(*generated, rng.gen(), &reserved),
            Vocabulary::Words(list) => {
                let mut seen = HashSet::new();
                for w in list {
                    let n = normalize_word(w);
                    if n.is_empty() || w.split_whitespace().count() != 1 {
                        return Err(Error::Config(format!(
                            "OCR vocabulary word {w:?} must be a single non-empty word"
                        )));
                    }
                    if reserved.contains(&n) {
                        return Err(Error::Config(format!(
                            "OCR vocabulary word {w:?} collides with a query template or attribute word"
                        )));
                    }
                    if !seen.insert(n) {
                        return Err(Error::Config(format!("OCR vocabulary repeats {w:?}")));
                    }
                }
                list.clone()
            }
        };
        let needed = if self.unique_words {
            self.videos * self.tracks_per_video
        } else {
            self.tracks_per_video
        };
        if words.len() < needed {
            return Err(Error::Config(format!(
                "OCR vocabulary has {} words, {} needed",
                words.len(),
                needed
            )));
        }
        Ok(words)
    }
}

/// `n` distinct pronounceable upper-case pseudo-words (4 to 6 letters) that
/// avoid every word in `reserved` (compared case-insensitively).
pub fn pseudo_words(n: usize, seed: u64, reserved: &BTreeSet<String>) -> Vec<String> {
    const CONSONANTS: &[u8] = b"BCDFGHJKLMNPRSTVWZ";
    const VOWELS: &[u8] = b"AEIOU";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.gen_range(4..=6);
        let word: String = (0..len)
            .map(|i| {
                let set = if i % 2 == 0 { CONSONANTS } else { VOWELS };
                set[rng.gen_range(0..set.len())] as char
            })
            .collect();
        let key = word.to_lowercase();
        if !reserved.contains(&key) && seen.insert(key) {
            out.push(word);
        }
    }
    out
}

fn fill(template: &str, attr: &str, word: &str) -> String {
    template.replace("{attr}", attr).replace("{word}", word)
}

fn glyph_color(bg: [u8; 3]) -> [f32; 3] {
    let lum = 0.299 * bg[0] as f32 + 0.587 * bg[1] as f32 + 0.114 * bg[2] as f32;
    if lum > 128.0 {
        [0.0; 3]
    } else {
        [1.0; 3]
    }
}

struct PlannedTrack {
    track: TextTrack,
    boxes: Vec<BoundingBox>,
}

fn plan_track(rng: &mut ChaCha8Rng, word: &str, cfg: &SyntheticConfig) -> PlannedTrack {
    let f = cfg.frame_count;
    let t_start = rng.gen_range(0..f);
    let t_end = rng.gen_range(t_start..f);
    let w = font::text_width(word);
    let h = GLYPH_HEIGHT;
    let max_x = cfg.frame_width.saturating_sub(w) as i64;
    let max_y = cfg.frame_height.saturating_sub(h) as i64;
    let xs = rng.gen_range(0..=max_x);
    let ys = rng.gen_range(0..=max_y);
    let xe = (xs + rng.gen_range(-4..=4)).clamp(0, max_x);
    let ye = (ys + rng.gen_range(-4..=4)).clamp(0, max_y);
    let confidence = rng.gen_range(300..1000) as f64 / 1000.0;

    let span = (t_end - t_start) as f64;
    let boxes: Vec<BoundingBox> = (t_start..=t_end)
        .map(|t| {
            let s = if span == 0.0 {
                0.0
            } else {
                (t - t_start) as f64 / span
            };
            let x = (xs as f64 + s * (xe - xs) as f64).round();
            let y = (ys as f64 + s * (ye - ys) as f64).round();
            BoundingBox::new(x, y, w as f64, h as f64)
        })
        .collect();
    let track = TextTrack::from_boxes(word, confidence, t_start, &boxes)
        .expect("non-empty box list");
    PlannedTrack { track, boxes }
}

fn draw_word(frame: &mut Frame, word: &str, b: &BoundingBox, color: [f32; 3]) {
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    font::for_each_pixel(word, b.x as i64, b.y as i64, |x, y| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            frame.set_pixel(x as usize, y as usize, color);
        }
    });
}

/// Generates a corpus that is a pure function of `(config, seed)`.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vocab = config.resolve_vocabulary(&mut rng)?;
    vocab.shuffle(&mut rng);

    let n = config.videos;
    let n_test = (n as f64 * config.test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let test: HashSet<usize> = order[..n_test].iter().copied().collect();

    let digits = n.to_string().len().max(4);
    let mut next_word = 0usize;
    let mut videos = Vec::with_capacity(n);
    let mut tracks = BTreeMap::new();
    let mut queries = Vec::with_capacity(n * config.queries_per_video);
    let fraction = config.planted_fraction;

    for i in 0..n {
        let id = format!("v{i:0digits$}");
        let attr_idx = rng.gen_range(0..config.attribute_vocabulary.len());
        let attr = &config.attribute_vocabulary[attr_idx];
        let bg = PALETTE[attr_idx];
        let scenario = Scenario::ALL[rng.gen_range(0..Scenario::ALL.len())];

        let words: Vec<String> = if config.unique_words {
            let w = vocab[next_word..next_word + config.tracks_per_video].to_vec();
            next_word += config.tracks_per_video;
            w
        } else {
            vocab
                .choose_multiple(&mut rng, config.tracks_per_video)
                .cloned()
                .collect()
        };
        let planned: Vec<PlannedTrack> = words.iter().map(|w| plan_track(&mut rng, w, config)).collect();

        let bg_f = bg.map(super::channel_from_u8);
        let ink = glyph_color(bg);
        let mut frames = vec![Frame::filled(config.frame_width, config.frame_height, bg_f); config.frame_count];
        if config.render_glyphs {
            for p in &planned {
                for (k, b) in p.boxes.iter().enumerate() {
                    draw_word(&mut frames[p.track.t_start + k], &p.track.word, b, ink);
                }
            }
        }
        videos.push(VideoClip::new(id.clone(), frames, Some(scenario))?);

        let split = if test.contains(&i) { Split::Test } else { Split::Train };
        let mut mention_order: Vec<usize> = (0..words.len()).collect();
        mention_order.shuffle(&mut rng);
        let mut mentions = 0usize;
        for q in 0..config.queries_per_video {
            // Error-diffusion assignment: exactly floor(k * fraction) of the
            // first k queries are planted, for every k.
            let k = (i * config.queries_per_video + q) as f64;
            let planted = ((k + 1.0) * fraction).floor() > (k * fraction).floor();
            let text = match (planted, config.attribute_in_query) {
                (true, with_attr) => {
                    let word = &words[mention_order[mentions % words.len()]];
                    mentions += 1;
                    if with_attr {
                        let t = WITH_ATTRIBUTE_AND_WORD.choose(&mut rng).expect("templates");
                        fill(t, attr, word)
                    } else {
                        fill(WITH_WORD.choose(&mut rng).expect("templates"), attr, word)
                    }
                }
                (false, true) => fill(WITH_ATTRIBUTE.choose(&mut rng).expect("templates"), attr, ""),
                (false, false) => WITH_NOTHING[0].to_string(),
            };
            queries.push(Query {
                text,
                video_id: id.clone(),
                split,
            });
        }
        tracks.insert(id, planned.into_iter().map(|p| p.track).collect());
    }

    Corpus::new(videos, tracks, queries)
}

/// Keeps each track independently with probability `recall`. For a fixed
/// seed, lower recalls keep subsets of what higher recalls keep.
pub fn subsample_tracks(corpus: &Corpus, recall: f64, seed: u64) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&recall) {
        return Err(Error::Config(format!("track recall {recall} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus.map_tracks(|_, list| {
        list.iter()
            .filter(|_| rng.gen::<f64>() < recall)
            .cloned()
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_stats, recall_of_correlation};

    fn small(fraction: f64) -> SyntheticConfig {
        SyntheticConfig {
            videos: 20,
            planted_fraction: fraction,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small(1.0), 7).unwrap();
        let b = generate_synthetic(&small(1.0), 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(1.0), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn planted_fraction_is_exact() {
        for (f, expected) in [(0.0, 0.0), (0.5, 50.0), (1.0, 100.0)] {
            let c = generate_synthetic(&small(f), 3).unwrap();
            assert_eq!(recall_of_correlation(&c, None).unwrap(), expected);
            assert_eq!(recall_of_correlation(&c, Some(Split::Test)).unwrap(), expected);
        }
    }

    #[test]
    fn half_planted_gives_half_zero_bin() {
        let cfg = SyntheticConfig {
            videos: 100,
            planted_fraction: 0.5,
            ..Default::default()
        };
        let s = corpus_stats(&generate_synthetic(&cfg, 3).unwrap());
        assert_eq!(s.queries, 400);
        assert_eq!(s.matched_tokens_per_query.count(0), 200);
    }

    #[test]
    fn unique_words_do_not_repeat_across_videos() {
        let c = generate_synthetic(&small(1.0), 1).unwrap();
        let mut seen = HashSet::new();
        for list in c.tracks().values() {
            for t in list {
                assert!(seen.insert(t.word.clone()), "{} repeated", t.word);
            }
        }
    }

    #[test]
    fn glyphs_are_rendered_inside_tracks() {
        let cfg = SyntheticConfig {
            videos: 2,
            tracks_per_video: 1,
            ..Default::default()
        };
        let c = generate_synthetic(&cfg, 5).unwrap();
        let (id, v) = c.videos().iter().next().unwrap();
        let t = &c.tracks_of(id)[0];
        let bg = PALETTE
            .iter()
            .map(|c| c.map(crate::corpus::channel_from_u8))
            .find(|c| v.frames[0].data().chunks(3).filter(|p| p == c).count() > 512)
            .unwrap();
        let inked = |f: &Frame| (0..32).flat_map(|y| (0..32).map(move |x| (x, y))).filter(|&(x, y)| f.pixel(x, y) != bg).count();
        assert!(inked(&v.frames[t.t_start]) > 0);
        let no_glyphs = SyntheticConfig {
            render_glyphs: false,
            ..cfg
        };
        let plain = generate_synthetic(&no_glyphs, 5).unwrap();
        let pv = plain.videos().values().next().unwrap();
        assert_eq!(pv.frames.iter().map(inked).sum::<usize>(), 0);
    }

    #[test]
    fn config_errors() {
        let mut cfg = small(1.0);
        cfg.attribute_vocabulary.clear();
        assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Config(_))));
        let mut cfg = small(1.0);
        cfg.ocr_vocabulary = Vocabulary::Words(vec![]);
        assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Config(_))));
        let mut cfg = small(1.0);
        cfg.ocr_vocabulary = Vocabulary::Words(vec!["SCENE".into(), "EXIT".into()]);
        assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Config(_))));
        let mut cfg = small(1.0);
        cfg.ocr_vocabulary = Vocabulary::Generated { generated: 10 };
        assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn subsampling_is_nested() {
        let c = generate_synthetic(&small(1.0), 2).unwrap();
        let hi = subsample_tracks(&c, 0.6, 9).unwrap();
        let lo = subsample_tracks(&c, 0.3, 9).unwrap();
        for (id, list) in lo.tracks() {
            for t in list {
                assert!(hi.tracks_of(id).contains(t));
            }
        }
        assert_eq!(subsample_tracks(&c, 1.0, 9).unwrap(), c);
        let total = |c: &Corpus| c.tracks().values().map(Vec::len).sum::<usize>();
        assert!(total(&lo) < total(&hi));
    }
}
