//! Seeded synthetic influencer worlds with planted signal.
//!
//! Three signals are planted so the model components have something real to
//! recover: latent quality follows an AR(1) drift (temporal, for the GRU),
//! entities cluster into topics and a trending topic boosts whoever posts
//! about it (structural, for the GCN), and content observables (sentiment,
//! image stats) are noisy readouts of quality (features). Likes are derived
//! from quality alone and never leak into features.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetnet::ingest::{read_posts, read_profiles, write_jsonl, CaptionStats, ImageSpec, Post, Profile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_influencers: usize,
    pub n_hashtags: usize,
    pub n_objects: usize,
    pub n_other_users: usize,
    pub n_windows: usize,
    /// Poisson mean of posts per influencer per window.
    pub posts_per_window: f64,
    /// AR(1) persistence of latent quality, in [0, 1].
    pub rho: f64,
    /// Scales every observation-noise source (content stats, per-post likes).
    pub noise_scale: f64,
    /// Additive quality boost per unit share of trending-topic entities.
    pub trending_boost: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_influencers: 200,
            n_hashtags: 300,
            n_objects: 120,
            n_other_users: 150,
            n_windows: 8,
            posts_per_window: 6.0,
            rho: 0.9,
            noise_scale: 1.0,
            trending_boost: 1.5,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_influencers", self.n_influencers),
            ("n_hashtags", self.n_hashtags),
            ("n_objects", self.n_objects),
            ("n_other_users", self.n_other_users),
            ("n_windows", self.n_windows),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must be in [0,1], got {}", self.rho)));
        }
        if !(self.posts_per_window > 0.0) {
            return Err(Error::Config("posts_per_window must be positive".into()));
        }
        if self.noise_scale < 0.0 || self.trending_boost < 0.0 {
            return Err(Error::Config("noise_scale and trending_boost must be >= 0".into()));
        }
        Ok(())
    }
}

/// Ground-truth row: one per (influencer, window).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub influencer_id: String,
    pub window_index: usize,
    pub quality: f64,
    pub engagement_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    /// Sorted by influencer id (generation order).
    pub profiles: Vec<Profile>,
    pub posts: Vec<Post>,
    /// Row (t * n_influencers + i) holds influencer i at window t.
    pub truth: Vec<TruthRow>,
}

// Fixed world mechanics (documented constants, deliberately not config):
// engagement rates live on a 0..RATE_SCALE scale so the graded relevance
// thresholds (0.01 .. 0.10) are all populated; QUALITY_GAIN spreads the
// stationary N(0,1) quality across that range.
const RATE_SCALE: f64 = 0.12;
const QUALITY_GAIN: f64 = 2.0;
const N_TOPICS: usize = crate::featurizer::N_INFLUENCER_CATEGORIES;
const OWN_TOPIC_PROB: f64 = 0.85;
const MISLABEL_PROB: f64 = 0.30;
const TRENDING_PERIOD: usize = 8;
const PREFERRED_GENRE_PROB: f64 = 0.70;
const AD_PROB: f64 = 0.10;
/// Lognormal sigma of per-post like noise, multiplied by the noise knob.
const POST_NOISE_SIGMA: f64 = 0.30;
const WORLD_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn influencer_id(i: usize) -> String {
    format!("inf{i:04}")
}

fn topic_label(topic: usize) -> String {
    format!("topic{topic}")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    let n: f64 = Poisson::new(mean).expect("positive mean").sample(rng);
    n as usize
}

/// Draw one entity id from a pool partitioned into topics by index mod
/// N_TOPICS: own topic with probability OWN_TOPIC_PROB, else uniform.
/// Returns (id, topic of the drawn entity).
fn draw_entity(
    rng: &mut ChaCha8Rng,
    pool: usize,
    own_topic: usize,
    prefix: &str,
) -> (String, usize) {
    let n_own = if pool > own_topic { 1 + (pool - 1 - own_topic) / N_TOPICS } else { 0 };
    let j = if n_own > 0 && rng.random::<f64>() < OWN_TOPIC_PROB {
        own_topic + N_TOPICS * rng.random_range(0..n_own)
    } else {
        rng.random_range(0..pool)
    };
    (format!("{prefix}{j:04}"), j % N_TOPICS)
}

struct InfluencerSeed {
    followers: u64,
    home_topic: usize,
    reported_topic: usize,
    followees: u64,
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ WORLD_SALT);
    let n = cfg.n_influencers;

    let seeds: Vec<InfluencerSeed> = (0..n)
        .map(|i| {
            let followers = 10f64.powf(rng.random_range(3.0..6.0)).round() as u64;
            let home_topic = i % N_TOPICS;
            let reported_topic = if rng.random::<f64>() < MISLABEL_PROB {
                rng.random_range(0..N_TOPICS)
            } else {
                home_topic
            };
            let followees = rng.random_range(50..500u64);
            InfluencerSeed { followers, home_topic, reported_topic, followees }
        })
        .collect();
    let mut qualities: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();

    let mut posts = Vec::new();
    let mut truth = Vec::with_capacity(n * cfg.n_windows);
    let mut posts_emitted = vec![0u64; n];

    for t in 0..cfg.n_windows {
        let trending_topic = (t / TRENDING_PERIOD) % N_TOPICS;
        let drift = (1.0 - cfg.rho * cfg.rho).sqrt();
        for i in 0..n {
            if t > 0 {
                qualities[i] = cfg.rho * qualities[i] + drift * normal(&mut rng);
            }
            let q = qualities[i];
            let seed = &seeds[i];
            let n_posts = poisson_count(&mut rng, cfg.posts_per_window);

            let mut window_posts = Vec::with_capacity(n_posts);
            let mut trending_hits = 0usize;
            let mut entity_total = 0usize;
            for _ in 0..n_posts {
                let mut draw_list = |rng: &mut ChaCha8Rng, mean: f64, pool: usize, prefix: &str| {
                    let mut ids = Vec::new();
                    for _ in 0..poisson_count(rng, mean) {
                        let (id, topic) = draw_entity(rng, pool, seed.home_topic, prefix);
                        entity_total += 1;
                        if topic == trending_topic {
                            trending_hits += 1;
                        }
                        ids.push(id);
                    }
                    ids.sort_unstable();
                    ids.dedup();
                    ids
                };
                let hashtags = draw_list(&mut rng, 3.0, cfg.n_hashtags, "#tag");
                let image_objects = draw_list(&mut rng, 2.0, cfg.n_objects, "obj");
                let mentions = draw_list(&mut rng, 1.0, cfg.n_other_users, "usr");

                let genre = if rng.random::<f64>() < PREFERRED_GENRE_PROB {
                    seed.home_topic
                } else {
                    rng.random_range(0..crate::featurizer::N_POST_CATEGORIES)
                };
                let shape = 0.6 * q.tanh();
                let obs = cfg.noise_scale;
                let sentiment = (shape + 0.25 * obs * normal(&mut rng)).clamp(-1.0, 1.0);
                let image = ImageSpec::Stats {
                    brightness: (128.0 + 45.0 * q.tanh() + 18.0 * obs * normal(&mut rng))
                        .clamp(0.0, 255.0),
                    colorfulness: (38.0 + 16.0 * q.tanh() + 8.0 * obs * normal(&mut rng)).max(0.0),
                    color_temperature: (5600.0 + 900.0 * q.tanh()
                        + 350.0 * obs * normal(&mut rng))
                    .max(1000.0),
                };
                let n_comments = poisson_count(&mut rng, 3.0);
                let comment_sentiments: Vec<f64> = (0..n_comments)
                    .map(|_| (shape + 0.30 * obs * normal(&mut rng)).clamp(-1.0, 1.0))
                    .collect();

                window_posts.push(Post {
                    influencer_id: influencer_id(i),
                    window_index: t,
                    likes: 0,
                    caption_stats: CaptionStats {
                        n_hashtags: hashtags.len() as u32,
                        n_usertags: mentions.len() as u32,
                        n_emojis: poisson_count(&mut rng, 2.0) as u32,
                        length: 40 + poisson_count(&mut rng, 60.0) as u32,
                        sentiment,
                    },
                    hashtags,
                    mentions,
                    image_objects,
                    image,
                    post_category: format!("genre{genre}"),
                    is_ad: rng.random::<f64>() < AD_PROB,
                    has_influencer_reply: rng.random::<f64>()
                        < (0.3 + 0.2 * q.tanh()).clamp(0.0, 1.0),
                    timestamp: t as f64 + rng.random::<f64>(),
                    comment_sentiments,
                });
            }

            let share = if entity_total == 0 {
                0.0
            } else {
                trending_hits as f64 / entity_total as f64
            };
            let planted_rate =
                RATE_SCALE * sigmoid(QUALITY_GAIN * q + cfg.trending_boost * share);
            let sigma = POST_NOISE_SIGMA * cfg.noise_scale;
            let mut like_sum = 0u64;
            for post in &mut window_posts {
                // mean-one lognormal so expected rate stays planted_rate
                let m = (sigma * normal(&mut rng) - 0.5 * sigma * sigma).exp();
                post.likes = (seed.followers as f64 * planted_rate * m).round() as u64;
                like_sum += post.likes;
            }
            let rate = if window_posts.is_empty() {
                0.0
            } else {
                (like_sum as f64 / window_posts.len() as f64) / seed.followers as f64
            };
            posts_emitted[i] += window_posts.len() as u64;
            posts.extend(window_posts);
            truth.push(TruthRow {
                influencer_id: influencer_id(i),
                window_index: t,
                quality: q,
                engagement_rate: rate,
            });
        }
    }

    let profiles: Vec<Profile> = (0..n)
        .map(|i| Profile {
            influencer_id: influencer_id(i),
            followers_by_window: vec![seeds[i].followers; cfg.n_windows],
            followees: seeds[i].followees,
            total_posts: posts_emitted[i],
            category: topic_label(seeds[i].reported_topic),
        })
        .collect();

    Ok(World { config: cfg.clone(), profiles, posts, truth })
}

impl World {
    pub fn influencer_ids(&self) -> Vec<String> {
        self.profiles.iter().map(|p| p.influencer_id.clone()).collect()
    }

    /// Truth rows of window t, in influencer id order.
    pub fn truth_at(&self, t: usize) -> Result<&[TruthRow]> {
        let n = self.config.n_influencers;
        if t >= self.config.n_windows {
            return Err(Error::Config(format!(
                "window {t} out of range (world has {})",
                self.config.n_windows
            )));
        }
        Ok(&self.truth[t * n..(t + 1) * n])
    }

    /// True engagement rates at window t, in influencer id order.
    pub fn rates_at(&self, t: usize) -> Result<Vec<f64>> {
        Ok(self.truth_at(t)?.iter().map(|r| r.engagement_rate).collect())
    }

    /// Influencer ids sorted by true rate at t, descending; ties ascending id.
    pub fn planted_ideal_ranking(&self, t: usize) -> Result<Vec<String>> {
        let rows = self.truth_at(t)?;
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| {
            rows[b]
                .engagement_rate
                .partial_cmp(&rows[a].engagement_rate)
                .unwrap()
                .then(rows[a].influencer_id.cmp(&rows[b].influencer_id))
        });
        Ok(order.into_iter().map(|i| rows[i].influencer_id.clone()).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("world_config.json"),
            serde_json::to_string_pretty(&self.config)
                .map_err(|e| Error::Data(format!("serializing world config: {e}")))?,
        )?;
        write_jsonl(&dir.join("posts.jsonl"), &self.posts)?;
        write_jsonl(&dir.join("profiles.jsonl"), &self.profiles)?;
        write_jsonl(&dir.join("truth.jsonl"), &self.truth)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<World> {
        let cfg_path = dir.join("world_config.json");
        let raw = std::fs::read_to_string(&cfg_path).map_err(|e| Error::Ingest {
            path: cfg_path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        let config: WorldConfig = serde_json::from_str(&raw).map_err(|e| Error::Ingest {
            path: cfg_path.display().to_string(),
            line: 1,
            msg: e.to_string(),
        })?;
        let posts = read_posts(&dir.join("posts.jsonl"))?;
        let mut profiles = read_profiles(&dir.join("profiles.jsonl"))?;
        profiles.sort_by(|a, b| a.influencer_id.cmp(&b.influencer_id));
        let truth_path = dir.join("truth.jsonl");
        let truth: Vec<TruthRow> = {
            let raw = std::fs::read_to_string(&truth_path).map_err(|e| Error::Ingest {
                path: truth_path.display().to_string(),
                line: 0,
                msg: e.to_string(),
            })?;
            let mut rows = Vec::new();
            for (idx, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                rows.push(serde_json::from_str(line).map_err(|e| Error::Ingest {
                    path: truth_path.display().to_string(),
                    line: idx + 1,
                    msg: e.to_string(),
                })?);
            }
            rows
        };
        Ok(World { config, profiles, posts, truth })
    }
}
