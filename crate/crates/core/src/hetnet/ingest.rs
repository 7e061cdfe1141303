//! Line-delimited JSON ingestion for post and profile records.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precomputed caption statistics; parsing captions is out of scope.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionStats {
    pub n_hashtags: u32,
    pub n_usertags: u32,
    pub n_emojis: u32,
    pub length: u32,
    /// Caption sentiment in [-1, 1].
    pub sentiment: f64,
}

/// Either precomputed image statistics or raw pixels to compute them from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageSpec {
    Stats { brightness: f64, colorfulness: f64, color_temperature: f64 },
    Raw { rgb: Vec<u8>, width: usize, height: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub influencer_id: String,
    pub window_index: usize,
    pub likes: u64,
    pub hashtags: Vec<String>,
    pub mentions: Vec<String>,
    pub image_objects: Vec<String>,
    pub image: ImageSpec,
    pub caption_stats: CaptionStats,
    pub post_category: String,
    pub is_ad: bool,
    pub has_influencer_reply: bool,
    /// Seconds; only consumed by the posting-interval feature and window re-binning.
    pub timestamp: f64,
    pub comment_sentiments: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub influencer_id: String,
    pub followers_by_window: Vec<u64>,
    pub followees: u64,
    pub total_posts: u64,
    pub category: String,
}

impl Profile {
    /// Follower count at a window; the last known value carries forward.
    pub fn followers_at(&self, window: usize) -> u64 {
        let last = self.followers_by_window.len().saturating_sub(1);
        self.followers_by_window[window.min(last)]
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Ingest {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_posts(path: &Path) -> Result<Vec<Post>> {
    read_jsonl(path)
}

pub fn read_profiles(path: &Path) -> Result<Vec<Profile>> {
    read_jsonl(path)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut file, rec).map_err(|e| Error::Data(e.to_string()))?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}
