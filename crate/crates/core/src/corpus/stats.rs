use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Corpus, Split, TextTrack};
use crate::{Error, Result};

/// Case-folds `word` and strips leading/trailing punctuation.
pub fn normalize_word(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Whitespace-delimited words of `text`, normalized, empties dropped.
pub fn split_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_word)
        .filter(|w| !w.is_empty())
        .collect()
}

/// Track words that also occur as whole words of the query.
///
/// Multi-word tracks are split and each piece is matched on its own. The
/// result keeps the track's spelling (minus edge punctuation), deduplicated
/// case-insensitively in first-occurrence order.
pub fn match_tokens_to_query(query_text: &str, tracks: &[TextTrack]) -> Vec<String> {
    let query: HashSet<String> = split_words(query_text).into_iter().collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for t in tracks {
        for piece in t.word.split_whitespace() {
            let key = normalize_word(piece);
            if !key.is_empty() && query.contains(&key) && seen.insert(key) {
                out.push(
                    piece
                        .trim_matches(|c: char| !c.is_alphanumeric())
                        .to_string(),
                );
            }
        }
    }
    out
}

/// Percentage of queries (optionally restricted to one split) sharing at least
/// one word with the OCR tracks of their own video.
pub fn recall_of_correlation(corpus: &Corpus, split: Option<Split>) -> Result<f64> {
    let mut total = 0usize;
    let mut hits = 0usize;
    for q in corpus.queries() {
        if split.is_some_and(|s| s != q.split) {
            continue;
        }
        total += 1;
        if !match_tokens_to_query(&q.text, corpus.tracks_of(&q.video_id)).is_empty() {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::Input(
            "recall of correlation needs at least one query".into(),
        ));
    }
    Ok(100.0 * hits as f64 / total as f64)
}

/// Exact-value histogram: bin `k` counts items with value `k`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: BTreeMap<usize, usize>,
}

impl Histogram {
    pub fn add(&mut self, value: usize) {
        *self.bins.entry(value).or_default() += 1;
    }

    pub fn total(&self) -> usize {
        self.bins.values().sum()
    }

    pub fn count(&self, value: usize) -> usize {
        self.bins.get(&value).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub videos: usize,
    pub queries: usize,
    pub tokens_per_video: Histogram,
    pub words_per_query: Histogram,
    pub matched_tokens_per_query: Histogram,
    /// Normalized track words by descending count, ties alphabetical.
    pub top_tokens: Vec<(String, usize)>,
    pub recall_of_correlation: f64,
}

pub fn corpus_stats(corpus: &Corpus) -> StatsReport {
    let mut tokens_per_video = Histogram::default();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for id in corpus.videos().keys() {
        let tracks = corpus.tracks_of(id);
        tokens_per_video.add(tracks.len());
        for t in tracks {
            for w in split_words(&t.word) {
                *counts.entry(w).or_default() += 1;
            }
        }
    }

    let mut words_per_query = Histogram::default();
    let mut matched = Histogram::default();
    for q in corpus.queries() {
        words_per_query.add(split_words(&q.text).len());
        matched.add(match_tokens_to_query(&q.text, corpus.tracks_of(&q.video_id)).len());
    }

    let mut top_tokens: Vec<(String, usize)> = counts.into_iter().collect();
    top_tokens.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let recall = if corpus.queries().is_empty() {
        0.0
    } else {
        recall_of_correlation(corpus, None).expect("non-empty query list")
    };

    StatsReport {
        videos: corpus.videos().len(),
        queries: corpus.queries().len(),
        tokens_per_video,
        words_per_query,
        matched_tokens_per_query: matched,
        top_tokens,
        recall_of_correlation: recall,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::{small_corpus, track};

    fn tracks(words: &[&str]) -> Vec<TextTrack> {
        words.iter().map(|w| track(w, 0.5, 0, 0)).collect()
    }

    #[test]
    fn direct_membership() {
        let got = match_tokens_to_query(
            "a sign reads EXIT above the door",
            &tracks(&["EXIT", "FOOD"]),
        );
        assert_eq!(got, vec!["EXIT"]);
    }

    #[test]
    fn empty_tracks_match_nothing() {
        assert!(match_tokens_to_query("anything at all", &[]).is_empty());
        assert!(match_tokens_to_query("", &tracks(&["EXIT"])).is_empty());
    }

    #[test]
    fn punctuation_and_numbers() {
        let got = match_tokens_to_query(
            "tourist near the CARBON restaurant, phone 020773491",
            &tracks(&["CARBON", "020773491", "NBA"]),
        );
        assert_eq!(got, vec!["CARBON", "020773491"]);
    }

    #[test]
    fn whole_words_only_and_phrases_split() {
        assert!(match_tokens_to_query("exiting now", &tracks(&["EXIT"])).is_empty());
        let got = match_tokens_to_query("the big cafe", &tracks(&["Carbon Cafe!", "cafe"]));
        assert_eq!(got, vec!["Cafe"]);
    }

    #[test]
    fn stats_on_fixture() {
        let c = small_corpus();
        let s = corpus_stats(&c);
        assert_eq!(s.tokens_per_video.total(), 3);
        assert_eq!(s.tokens_per_video.count(0), 1);
        assert_eq!(s.words_per_query.total(), 12);
        assert_eq!(s.matched_tokens_per_query.count(1), 2);
        assert_eq!(s.matched_tokens_per_query.count(0), 10);
        assert_eq!(s.top_tokens[0].1, 1);
        assert!((s.recall_of_correlation - 100.0 * 2.0 / 12.0).abs() < 1e-12);
        assert!((recall_of_correlation(&c, Some(Split::Test)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn single_query_word_count() {
        let mut h = Histogram::default();
        h.add(split_words("one two three four five six seven eight").len());
        assert_eq!(h.bins.len(), 1);
        assert_eq!(h.count(8), 1);
    }

    proptest::proptest! {
        #[test]
        fn matching_ignores_case(query in "[a-zA-Z ]{0,40}", words in proptest::collection::vec("[a-zA-Z]{1,6}", 0..5)) {
            let t = tracks(&words.iter().map(String::as_str).collect::<Vec<_>>());
            let upper: Vec<TextTrack> = t.iter().map(|x| TextTrack { word: x.word.to_uppercase(), ..x.clone() }).collect();
            let a = match_tokens_to_query(&query, &t);
            let b = match_tokens_to_query(&query.to_lowercase(), &upper);
            let norm = |v: Vec<String>| v.into_iter().map(|s| s.to_lowercase()).collect::<Vec<_>>();
            proptest::prop_assert_eq!(norm(a), norm(b));
        }
    }
}
