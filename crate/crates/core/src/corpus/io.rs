//! JSONL corpus layout: `videos.jsonl`, `tracks.jsonl`, `queries.jsonl` plus
//! one directory of frame images per video.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BoundingBox, Corpus, Frame, Query, Scenario, Split, TextTrack, VideoClip};
use crate::{Error, Result};

pub const VIDEOS_FILE: &str = "videos.jsonl";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoRecord {
    id: String,
    frames_dir: String,
    width: usize,
    height: usize,
    frame_count: usize,
    scenario: Option<Scenario>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackRecord {
    video_id: String,
    word: String,
    confidence: f64,
    t_start: usize,
    t_end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    box_start: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    box_end: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    avg_tl: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    avg_br: Option<[f64; 2]>,
    /// Optional per-frame boxes for frames `t_start..=t_end`; reduced to the
    /// aggregate fields at load time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boxes: Option<Vec<[f64; 4]>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRecord {
    video_id: String,
    text: String,
    split: Split,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(String, T)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::ingest(path, e))?;
    let name = path
        .file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into());
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = format!("{name}:{}", i + 1);
        let mut de = serde_json::Deserializer::from_str(line);
        let value: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let message = e.inner().to_string();
            let path = e.path().to_string();
            let field = if let Some(rest) = message.strip_prefix("missing field `") {
                rest.split('`').next().unwrap_or_default().to_string()
            } else if path == "." {
                "<record>".to_string()
            } else {
                path
            };
            Error::validation(record.clone(), field, message)
        })?;
        out.push((record, value));
    }
    Ok(out)
}

fn load_frames(dir: &Path, rec: &VideoRecord, record: &str) -> Result<Vec<Frame>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::ingest(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg" | "ppm" | "bmp"))
        })
        .collect();
    files.sort();
    if files.len() != rec.frame_count {
        return Err(Error::validation(
            record,
            "frame_count",
            format!(
                "declared {} frames but {} contains {}",
                rec.frame_count,
                dir.display(),
                files.len()
            ),
        ));
    }
    files
        .iter()
        .map(|p| {
            let img = image::open(p)
                .map_err(|e| Error::Image {
                    path: p.clone(),
                    message: e.to_string(),
                })?
                .to_rgb8();
            if img.width() as usize != rec.width || img.height() as usize != rec.height {
                return Err(Error::validation(
                    record,
                    "width",
                    format!(
                        "{} is {}x{}, declared {}x{}",
                        p.display(),
                        img.width(),
                        img.height(),
                        rec.width,
                        rec.height
                    ),
                ));
            }
            Frame::from_rgb8(rec.width, rec.height, img.as_raw())
        })
        .collect()
}

fn track_from_record(rec: TrackRecord, record: &str) -> Result<TextTrack> {
    if let Some(boxes) = rec.boxes {
        let expected = rec.t_end.checked_sub(rec.t_start).map(|d| d + 1);
        if expected != Some(boxes.len()) {
            return Err(Error::validation(
                record,
                "boxes",
                format!(
                    "{} boxes given for frames {}..={}",
                    boxes.len(),
                    rec.t_start,
                    rec.t_end
                ),
            ));
        }
        let boxes: Vec<BoundingBox> = boxes.into_iter().map(BoundingBox::from).collect();
        return TextTrack::from_boxes(rec.word, rec.confidence, rec.t_start, &boxes);
    }
    let missing = |f: &str| Error::validation(record, f, "required when `boxes` is absent");
    Ok(TextTrack {
        box_start: rec.box_start.ok_or_else(|| missing("box_start"))?.into(),
        box_end: rec.box_end.ok_or_else(|| missing("box_end"))?.into(),
        avg_top_left: rec.avg_tl.map(|v| (v[0], v[1])).ok_or_else(|| missing("avg_tl"))?,
        avg_bottom_right: rec.avg_br.map(|v| (v[0], v[1])).ok_or_else(|| missing("avg_br"))?,
        word: rec.word,
        confidence: rec.confidence,
        t_start: rec.t_start,
        t_end: rec.t_end,
    })
}

/// Reads and validates the corpus rooted at `root`.
pub fn load_corpus(root: impl AsRef<Path>) -> Result<Corpus> {
    let root = root.as_ref();
    let mut videos = Vec::new();
    for (record, rec) in read_jsonl::<VideoRecord>(&root.join(VIDEOS_FILE))? {
        let frames = load_frames(&root.join(&rec.frames_dir), &rec, &record)?;
        videos.push(VideoClip::new(rec.id, frames, rec.scenario)?);
    }
    let frame_counts: BTreeMap<String, usize> = videos
        .iter()
        .map(|v| (v.id.clone(), v.frame_count()))
        .collect();

    let mut tracks: BTreeMap<String, Vec<TextTrack>> = BTreeMap::new();
    for (record, rec) in read_jsonl::<TrackRecord>(&root.join(TRACKS_FILE))? {
        let Some(&frames) = frame_counts.get(&rec.video_id) else {
            return Err(Error::Referential {
                video_id: rec.video_id,
                context: record,
            });
        };
        let vid = rec.video_id.clone();
        let track = track_from_record(rec, &record)?;
        track.validate(frames, &record)?;
        tracks.entry(vid).or_default().push(track);
    }

    let queries = read_jsonl::<QueryRecord>(&root.join(QUERIES_FILE))?
        .into_iter()
        .map(|(_, r)| Query {
            text: r.text,
            video_id: r.video_id,
            split: r.split,
        })
        .collect();

    Corpus::new(videos, tracks, queries)
}

fn write_lines<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::ingest(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&r).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::ingest(path, e))?;
    }
    w.flush().map_err(|e| Error::ingest(path, e))
}

/// Writes `corpus` under `root` (created if needed). Frames are stored as
/// 8-bit PNG files in `frames/<video id>/`.
pub fn save_corpus(corpus: &Corpus, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::ingest(root, e))?;

    let mut video_records = Vec::new();
    for v in corpus.videos().values() {
        if v.id.is_empty() || v.id.contains(['/', '\\']) || v.id.starts_with('.') {
            return Err(Error::validation(
                format!("video {}", v.id),
                "id",
                "cannot be used as a directory name",
            ));
        }
        let rel = format!("frames/{}", v.id);
        let dir = root.join(&rel);
        fs::create_dir_all(&dir).map_err(|e| Error::ingest(&dir, e))?;
        for (i, f) in v.frames.iter().enumerate() {
            let path = dir.join(format!("{i:05}.png"));
            image::save_buffer(
                &path,
                &f.to_rgb8(),
                f.width() as u32,
                f.height() as u32,
                image::ExtendedColorType::Rgb8,
            )
            .map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        video_records.push(VideoRecord {
            id: v.id.clone(),
            frames_dir: rel,
            width: v.width,
            height: v.height,
            frame_count: v.frame_count(),
            scenario: v.scenario,
        });
    }
    write_lines(&root.join(VIDEOS_FILE), video_records.into_iter())?;

    let tracks = corpus.tracks().iter().flat_map(|(vid, list)| {
        list.iter().map(move |t| TrackRecord {
            video_id: vid.clone(),
            word: t.word.clone(),
            confidence: t.confidence,
            t_start: t.t_start,
            t_end: t.t_end,
            box_start: Some(t.box_start.into()),
            box_end: Some(t.box_end.into()),
            avg_tl: Some([t.avg_top_left.0, t.avg_top_left.1]),
            avg_br: Some([t.avg_bottom_right.0, t.avg_bottom_right.1]),
            boxes: None,
        })
    });
    write_lines(&root.join(TRACKS_FILE), tracks)?;

    let queries = corpus.queries().iter().map(|q| QueryRecord {
        video_id: q.video_id.clone(),
        text: q.text.clone(),
        split: q.split,
    });
    write_lines(&root.join(QUERIES_FILE), queries)
}
