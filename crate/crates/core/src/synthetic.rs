//! Seeded synthetic corpora with known ground truth, for tests, benchmarks and
//! demo projects.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Post, PostKind};
use crate::label::Label;

/// A post together with its true label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPost {
    pub post: Post,
    pub label: Label,
}

fn question(id: u64, body: String, tags: BTreeSet<String>) -> Post {
    Post {
        id,
        kind: PostKind::Question,
        parent_id: None,
        title: None,
        body_html: format!("<p>{body}</p>"),
        body_text: body,
        tags,
        created_at: None,
    }
}

fn filler(rng: &mut ChaCha8Rng, words: usize, vocabulary: usize) -> Vec<String> {
    (0..words).map(|_| format!("w{:03}", rng.gen_range(0..vocabulary))).collect()
}

/// Linearly separable posts: positives contain the token `posclass`,
/// negatives `negclass`, both padded with shared filler words. Every fourth
/// post is positive.
pub fn separable(n: usize, seed: u64) -> Vec<LabeledPost> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = if i % 4 == 0 { Label::Positive } else { Label::Negative };
            let mut words = filler(&mut rng, 12, 40);
            let marker = if label == Label::Positive { "posclass" } else { "negclass" };
            let at = rng.gen_range(0..=words.len());
            words.insert(at, marker.to_string());
            LabeledPost { post: question(i as u64 + 1, words.join(" "), BTreeSet::new()), label }
        })
        .collect()
}

/// Topic-style corpus where each class has its own pool of signal words and
/// every post shows only a few of them, so a small labeled set sees part of
/// each pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicConfig {
    pub posts: usize,
    pub positive_rate: f64,
    pub signal_pool: usize,
    pub signal_per_post: usize,
    pub filler_vocabulary: usize,
    pub filler_per_post: usize,
    /// Probability that a post's signal words come from the other class.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for TopicConfig {
    fn default() -> Self {
        Self {
            posts: 1000,
            positive_rate: 0.3,
            signal_pool: 60,
            signal_per_post: 3,
            filler_vocabulary: 200,
            filler_per_post: 10,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

pub fn topic_corpus(config: &TopicConfig) -> Vec<LabeledPost> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.posts)
        .map(|i| {
            let label = if rng.gen_bool(config.positive_rate) { Label::Positive } else { Label::Negative };
            let flipped = config.label_noise > 0.0 && rng.gen_bool(config.label_noise);
            let prefix = match (label, flipped) {
                (Label::Positive, false) | (Label::Negative, true) => "sigp",
                _ => "sign",
            };
            let mut words = filler(&mut rng, config.filler_per_post, config.filler_vocabulary);
            for _ in 0..config.signal_per_post {
                words.push(format!("{prefix}{:03}", rng.gen_range(0..config.signal_pool)));
            }
            words.shuffle(&mut rng);
            LabeledPost { post: question(i as u64 + 1, words.join(" "), BTreeSet::new()), label }
        })
        .collect()
}

/// Tags drawn on by [`tagged_dump`].
pub const DUMP_TAGS: [&str; 8] = ["performance", "apache", "nginx", "rails", "mysql", "java", "python", "caching"];

/// One row of a synthetic dump, as written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpRow {
    pub id: u64,
    pub post_type: u8,
    pub parent_id: Option<u64>,
    /// Only questions carry tags in the dump.
    pub tags: Vec<String>,
}

/// A Posts.xml-style dump of `n` rows: roughly two thirds questions with 1 to
/// 4 tags, the rest answers to earlier questions. Returns the XML and the rows.
pub fn tagged_dump(n: usize, seed: u64) -> (String, Vec<DumpRow>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut questions = Vec::new();
    for i in 0..n {
        let id = i as u64 + 1;
        if questions.is_empty() || rng.gen_bool(0.65) {
            let k = rng.gen_range(1..=4);
            let mut tags: Vec<String> =
                DUMP_TAGS.choose_multiple(&mut rng, k).map(|t| t.to_string()).collect();
            tags.sort();
            questions.push(id);
            rows.push(DumpRow { id, post_type: 1, parent_id: None, tags });
        } else {
            let parent = *questions.choose(&mut rng).expect("at least one question");
            rows.push(DumpRow { id, post_type: 2, parent_id: Some(parent), tags: Vec::new() });
        }
    }
    let mut xml = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<posts>\n");
    for r in &rows {
        let body = format!("&lt;p&gt;post {} about load times&lt;/p&gt;", r.id);
        match r.parent_id {
            None => {
                let tags: String = r.tags.iter().map(|t| format!("&lt;{t}&gt;")).collect();
                writeln!(
                    xml,
                    "  <row Id=\"{}\" PostTypeId=\"1\" Title=\"Question {}\" Body=\"{body}\" Tags=\"{tags}\" />",
                    r.id, r.id
                )
            }
            Some(parent) => writeln!(
                xml,
                "  <row Id=\"{}\" PostTypeId=\"2\" ParentId=\"{parent}\" Body=\"{body}\" />",
                r.id
            ),
        }
        .expect("writing to a String");
    }
    xml.push_str("</posts>\n");
    (xml, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded() {
        assert_eq!(separable(20, 3), separable(20, 3));
        assert_ne!(separable(20, 3), separable(20, 4));
        let cfg = TopicConfig { posts: 50, ..TopicConfig::default() };
        assert_eq!(topic_corpus(&cfg), topic_corpus(&cfg));
        assert_eq!(tagged_dump(30, 1), tagged_dump(30, 1));
    }

    #[test]
    fn separable_markers() {
        for p in separable(40, 0) {
            let pos = p.post.body_text.split(' ').any(|w| w == "posclass");
            assert_eq!(pos, p.label == Label::Positive);
        }
    }

    #[test]
    fn dump_answers_point_to_earlier_questions() {
        let (_, rows) = tagged_dump(50, 7);
        for r in &rows {
            if let Some(p) = r.parent_id {
                let parent = rows.iter().find(|q| q.id == p).unwrap();
                assert_eq!(parent.post_type, 1);
                assert!(p < r.id);
            }
        }
    }
}
