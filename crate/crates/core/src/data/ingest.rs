//! Corpus loaders. Both supported formats are JSON-lines; malformed records
//! are counted and skipped, records without a rating are skipped with a
//! warning.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ItemAttributes, RawInteraction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// Fields: reviewerID, asin, overall, reviewText, unixReviewTime.
    AmazonJsonLines,
    /// Fields: user_id, business_id, stars, text, date.
    YelpJson,
    /// This crate's own export: user, item, rating, review, ts.
    Native,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amazon" | "amazon-json-lines" => Ok(CorpusFormat::AmazonJsonLines),
            "yelp" | "yelp-json" => Ok(CorpusFormat::YelpJson),
            "native" => Ok(CorpusFormat::Native),
            other => Err(Error::UnknownName {
                kind: "corpus format",
                name: other.to_string(),
                known: "amazon-json-lines, yelp-json, native".to_string(),
            }),
        }
    }
}

#[derive(Deserialize)]
struct AmazonRecord {
    #[serde(rename = "reviewerID")]
    reviewer_id: String,
    asin: String,
    overall: Option<f64>,
    #[serde(rename = "reviewText", default)]
    review_text: Option<String>,
    #[serde(rename = "unixReviewTime", default)]
    unix_review_time: Option<i64>,
}

#[derive(Deserialize)]
struct YelpRecord {
    user_id: String,
    business_id: String,
    stars: Option<f64>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    date: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct NativeRecord {
    user: String,
    item: String,
    rating: Option<f64>,
    #[serde(default)]
    review: Option<String>,
    #[serde(default)]
    ts: Option<i64>,
}

/// Outcome of a corpus load: interactions in file order plus skip counters.
#[derive(Debug)]
pub struct CorpusLoad {
    pub interactions: Vec<RawInteraction>,
    pub skipped_malformed: usize,
    pub skipped_no_rating: usize,
}

impl CorpusLoad {
    pub fn skipped(&self) -> usize {
        self.skipped_malformed + self.skipped_no_rating
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parse a Yelp timestamp like "2016-03-09 13:10:54" into epoch-ish seconds.
/// Only ordering matters here, so a simple lexicographic-to-numeric map
/// suffices: we pack the digits into an integer.
fn yelp_date_key(date: &str) -> Option<i64> {
    let digits: String = date.chars().filter(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    digits[..digits.len().min(14)].parse().ok()
}

/// Load a review corpus. One `RawInteraction` per valid record, file order
/// preserved.
pub fn load_review_corpus(path: &Path, format: CorpusFormat) -> Result<CorpusLoad> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = CorpusLoad {
        interactions: Vec::new(),
        skipped_malformed: 0,
        skipped_no_rating: 0,
    };
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_record(&line, format);
        match parsed {
            Ok(Some(r)) => out.interactions.push(r),
            Ok(None) => {
                out.skipped_no_rating += 1;
                eprintln!(
                    "warning: {} line {}: record has no rating, skipped",
                    path.display(),
                    lineno + 1
                );
            }
            Err(_) => out.skipped_malformed += 1,
        }
    }
    Ok(out)
}

fn parse_record(line: &str, format: CorpusFormat) -> std::result::Result<Option<RawInteraction>, ()> {
    match format {
        CorpusFormat::AmazonJsonLines => {
            let r: AmazonRecord = serde_json::from_str(line).map_err(|_| ())?;
            Ok(r.overall.map(|rating| RawInteraction {
                user_external_id: r.reviewer_id,
                item_external_id: r.asin,
                rating,
                review_text: r.review_text.unwrap_or_default(),
                timestamp: r.unix_review_time,
            }))
        }
        CorpusFormat::YelpJson => {
            let r: YelpRecord = serde_json::from_str(line).map_err(|_| ())?;
            Ok(r.stars.map(|rating| RawInteraction {
                user_external_id: r.user_id,
                item_external_id: r.business_id,
                rating,
                review_text: r.text.unwrap_or_default(),
                timestamp: r.date.as_deref().and_then(yelp_date_key),
            }))
        }
        CorpusFormat::Native => {
            let r: NativeRecord = serde_json::from_str(line).map_err(|_| ())?;
            Ok(r.rating.map(|rating| RawInteraction {
                user_external_id: r.user,
                item_external_id: r.item,
                rating,
                review_text: r.review.unwrap_or_default(),
                timestamp: r.ts,
            }))
        }
    }
}

#[derive(Deserialize)]
struct AmazonMeta {
    asin: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    category: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct YelpMeta {
    business_id: String,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    categories: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct NativeMeta {
    item: String,
    name: String,
    #[serde(default)]
    categories: Vec<String>,
}

/// Load item metadata matching the corpus format. Malformed lines are skipped.
pub fn load_item_metadata(path: &Path, format: CorpusFormat) -> Result<Vec<ItemAttributes>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let attrs = match format {
            CorpusFormat::AmazonJsonLines => serde_json::from_str::<AmazonMeta>(&line)
                .ok()
                .map(|m| ItemAttributes {
                    name: m.title.unwrap_or_else(|| m.asin.clone()),
                    item_external_id: m.asin,
                    categories: m.category.unwrap_or_default(),
                }),
            CorpusFormat::YelpJson => serde_json::from_str::<YelpMeta>(&line)
                .ok()
                .map(|m| ItemAttributes {
                    name: m.name.unwrap_or_else(|| m.business_id.clone()),
                    item_external_id: m.business_id,
                    categories: m
                        .categories
                        .map(|c| c.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
                        .unwrap_or_default(),
                }),
            CorpusFormat::Native => serde_json::from_str::<NativeMeta>(&line)
                .ok()
                .map(|m| ItemAttributes {
                    item_external_id: m.item,
                    name: m.name,
                    categories: m.categories,
                }),
        };
        if let Some(a) = attrs {
            out.push(a);
        }
    }
    Ok(out)
}

/// Write a dataset back out in the native JSON-lines layout:
/// `interactions.jsonl` and `items.jsonl` under `dir`.
pub fn write_native(ds: &super::Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let ipath = dir.join("interactions.jsonl");
    let mut f = File::create(&ipath).map_err(|e| io_err(&ipath, e))?;
    for (u, i, v) in ds.ratings.iter() {
        let rec = NativeRecord {
            user: ds.users.id(u).to_string(),
            item: ds.items.id(i).to_string(),
            rating: Some(v),
            review: ds.review(u, i).map(str::to_string),
            ts: ds.timestamps.get(&(u, i)).copied(),
        };
        serde_json::to_writer(&mut f, &rec).map_err(|e| Error::invalid(e.to_string()))?;
        f.write_all(b"\n").map_err(|e| io_err(&ipath, e))?;
    }
    let mpath = dir.join("items.jsonl");
    let mut f = File::create(&mpath).map_err(|e| io_err(&mpath, e))?;
    for a in &ds.attributes {
        let rec = NativeMeta {
            item: a.item_external_id.clone(),
            name: a.name.clone(),
            categories: a.categories.clone(),
        };
        serde_json::to_writer(&mut f, &rec).map_err(|e| Error::invalid(e.to_string()))?;
        f.write_all(b"\n").map_err(|e| io_err(&mpath, e))?;
    }
    Ok(())
}
