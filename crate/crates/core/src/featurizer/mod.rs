//! The 67-wide raw node feature vector: node type, profile, image, text,
//! posting behavior, and reaction slices, with {avg, median, min, max}
//! aggregation over a window's posts.

pub mod image;

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetnet::ingest::{ImageSpec, Post, Profile};
use crate::hetnet::{NodeKind, Snapshot, RAW_FEATURE_DIM};
use crate::numkit::DenseMatrix;
use image::{image_stats, ImageStats};

pub const N_INFLUENCER_CATEGORIES: usize = 8;
pub const N_POST_CATEGORIES: usize = 10;

/// Column layout. Aggregated stats always order as [avg, median, min, max].
pub const NODE_TYPE: Range<usize> = 0..4;
pub const PROFILE: Range<usize> = 4..15; // followers, followees, posts, 8-way category
pub const IMAGE: Range<usize> = 15..27; // brightness, colorfulness, color temperature x4
pub const TEXT: Range<usize> = 27..47; // hashtags, usertags, emojis, length, sentiment x4
pub const POSTING: Range<usize> = 47..63; // 10 category rates, ad rate, feedback rate, interval x4
pub const REACTION: Range<usize> = 63..67; // comment sentiment x4

const COL_FOLLOWERS: usize = 4;
const COL_INF_CATEGORY: usize = 7;
const COL_CATEGORY_RATES: usize = 47;
const COL_AD_RATE: usize = 57;
const COL_FEEDBACK_RATE: usize = 58;
const COL_INTERVAL: usize = 59;

/// One of the six feature categories, for reports and feature-drop runs.
pub fn category_slice(name: &str) -> Result<Range<usize>> {
    match name {
        "node-type" => Ok(NODE_TYPE),
        "profile" => Ok(PROFILE),
        "image" => Ok(IMAGE),
        "text" => Ok(TEXT),
        "posting" => Ok(POSTING),
        "reaction" => Ok(REACTION),
        _ => Err(Error::Config(format!("unknown feature category {name:?}"))),
    }
}

pub const FEATURE_CATEGORIES: [&str; 6] =
    ["node-type", "profile", "image", "text", "posting", "reaction"];

/// Data-derived mapping for the two opaque label sets. The category
/// vocabularies are fixed-width (8 influencer, 10 post); the mapping travels
/// with the checkpoint so featurization is reproducible at load time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    /// Sorted distinct influencer-category labels, at most 8.
    pub influencer_categories: Vec<String>,
    /// Sorted distinct post-category labels, at most 10.
    pub post_categories: Vec<String>,
}

impl FeatureLayout {
    pub fn from_data<'a>(
        profiles: impl IntoIterator<Item = &'a Profile>,
        posts: &[Post],
    ) -> Result<Self> {
        let mut influencer_categories: Vec<String> =
            profiles.into_iter().map(|p| p.category.clone()).collect();
        influencer_categories.sort();
        influencer_categories.dedup();
        let mut post_categories: Vec<String> =
            posts.iter().map(|p| p.post_category.clone()).collect();
        post_categories.sort();
        post_categories.dedup();
        if influencer_categories.len() > N_INFLUENCER_CATEGORIES {
            return Err(Error::Data(format!(
                "found {} influencer categories, the layout holds {}",
                influencer_categories.len(),
                N_INFLUENCER_CATEGORIES
            )));
        }
        if post_categories.len() > N_POST_CATEGORIES {
            return Err(Error::Data(format!(
                "found {} post categories, the layout holds {}",
                post_categories.len(),
                N_POST_CATEGORIES
            )));
        }
        Ok(FeatureLayout { influencer_categories, post_categories })
    }

    fn influencer_category_index(&self, label: &str) -> Option<usize> {
        self.influencer_categories.binary_search_by(|c| c.as_str().cmp(label)).ok()
    }

    fn post_category_index(&self, label: &str) -> Option<usize> {
        self.post_categories.binary_search_by(|c| c.as_str().cmp(label)).ok()
    }
}

/// [avg, median, min, max]; empty input yields zeros. Even-length median is
/// the mean of the two middle values.
pub fn aggregate(values: &[f64]) -> [f64; 4] {
    if values.is_empty() {
        return [0.0; 4];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let avg = sorted.iter().sum::<f64>() / n as f64;
    [avg, median, sorted[0], sorted[n - 1]]
}

fn post_image_stats(post: &Post) -> Result<ImageStats> {
    match &post.image {
        ImageSpec::Stats { brightness, colorfulness, color_temperature } => Ok(ImageStats {
            brightness: *brightness,
            colorfulness: *colorfulness,
            color_temperature: *color_temperature,
        }),
        ImageSpec::Raw { rgb, width, height } => {
            if rgb.len() != 3 * width * height {
                return Err(Error::Data(format!(
                    "raw image of {}x{} needs {} bytes, got {}",
                    width,
                    height,
                    3 * width * height,
                    rgb.len()
                )));
            }
            image_stats(rgb)
        }
    }
}

/// Influencer feature row, in raw units (profile counts log(1+x)). The
/// caller min-max scales every continuous column across the snapshot's
/// influencers; image and text statistics arrive at their natural
/// magnitudes (color temperature in the thousands) and would saturate the
/// model unscaled. Likes and comment counts never enter the vector.
pub fn featurize_influencer(
    posts: &[&Post],
    profile: &Profile,
    window: usize,
    layout: &FeatureLayout,
) -> Result<[f64; RAW_FEATURE_DIM]> {
    let mut x = [0.0; RAW_FEATURE_DIM];
    x[NodeKind::Influencer.index()] = 1.0;

    x[COL_FOLLOWERS] = (profile.followers_at(window) as f64).ln_1p();
    x[COL_FOLLOWERS + 1] = (profile.followees as f64).ln_1p();
    x[COL_FOLLOWERS + 2] = (profile.total_posts as f64).ln_1p();
    if let Some(i) = layout.influencer_category_index(&profile.category) {
        x[COL_INF_CATEGORY + i] = 1.0;
    }

    let stats: Vec<ImageStats> = posts.iter().map(|p| post_image_stats(p)).collect::<Result<_>>()?;
    let image_series: [Vec<f64>; 3] = [
        stats.iter().map(|s| s.brightness).collect(),
        stats.iter().map(|s| s.colorfulness).collect(),
        stats.iter().map(|s| s.color_temperature).collect(),
    ];
    for (i, series) in image_series.iter().enumerate() {
        x[IMAGE.start + 4 * i..IMAGE.start + 4 * (i + 1)].copy_from_slice(&aggregate(series));
    }

    let text_series: [Vec<f64>; 5] = [
        posts.iter().map(|p| f64::from(p.caption_stats.n_hashtags)).collect(),
        posts.iter().map(|p| f64::from(p.caption_stats.n_usertags)).collect(),
        posts.iter().map(|p| f64::from(p.caption_stats.n_emojis)).collect(),
        posts.iter().map(|p| f64::from(p.caption_stats.length)).collect(),
        posts.iter().map(|p| p.caption_stats.sentiment).collect(),
    ];
    for (i, series) in text_series.iter().enumerate() {
        x[TEXT.start + 4 * i..TEXT.start + 4 * (i + 1)].copy_from_slice(&aggregate(series));
    }

    if !posts.is_empty() {
        let total = posts.len() as f64;
        for post in posts {
            if let Some(i) = layout.post_category_index(&post.post_category) {
                x[COL_CATEGORY_RATES + i] += 1.0 / total;
            }
        }
        x[COL_AD_RATE] = posts.iter().filter(|p| p.is_ad).count() as f64 / total;
        x[COL_FEEDBACK_RATE] = posts.iter().filter(|p| p.has_influencer_reply).count() as f64 / total;
    }
    let mut times: Vec<f64> = posts.iter().map(|p| p.timestamp).collect();
    times.sort_by(f64::total_cmp);
    let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    x[COL_INTERVAL..COL_INTERVAL + 4].copy_from_slice(&aggregate(&gaps));

    let sentiments: Vec<f64> =
        posts.iter().flat_map(|p| p.comment_sentiments.iter().copied()).collect();
    x[REACTION.start..REACTION.end].copy_from_slice(&aggregate(&sentiments));

    Ok(x)
}

/// Columns min-max scaled over the snapshot's influencer rows: profile
/// counts, image and text aggregates, posting intervals, and reaction
/// sentiments. One-hot and share columns are already in [0, 1] and ride raw.
const SCALED_COLUMNS: [Range<usize>; 3] =
    [COL_FOLLOWERS..COL_FOLLOWERS + 3, IMAGE.start..TEXT.end, COL_INTERVAL..REACTION.end];

/// Fill the snapshot's N x 67 matrix: influencer rows via
/// featurize_influencer, auxiliary rows node-type one-hot only. Continuous
/// columns are min-max scaled over the snapshot's influencer rows.
pub fn featurize_snapshot(
    s: &Snapshot,
    posts: &[&Post],
    profiles: &BTreeMap<String, Profile>,
    layout: &FeatureLayout,
) -> Result<DenseMatrix> {
    let mut by_influencer: BTreeMap<&str, Vec<&Post>> = BTreeMap::new();
    for post in posts {
        by_influencer.entry(post.influencer_id.as_str()).or_default().push(post);
    }
    let mut x = DenseMatrix::zeros(s.n_nodes(), RAW_FEATURE_DIM);
    let mut influencer_rows = Vec::new();
    for (i, node) in s.nodes.iter().enumerate() {
        if node.kind == NodeKind::Influencer {
            let profile = profiles.get(&node.key).ok_or_else(|| {
                Error::Data(format!("influencer node {:?} has no profile", node.key))
            })?;
            let own_posts = by_influencer.get(node.key.as_str()).map_or(&[][..], Vec::as_slice);
            let row = featurize_influencer(own_posts, profile, s.t, layout)?;
            x.row_mut(i).copy_from_slice(&row);
            influencer_rows.push(i);
        } else {
            x.set(i, node.kind.index(), 1.0);
        }
    }
    for col in SCALED_COLUMNS.into_iter().flatten() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &r in &influencer_rows {
            lo = lo.min(x.get(r, col));
            hi = hi.max(x.get(r, col));
        }
        for &r in &influencer_rows {
            let v = if hi > lo { (x.get(r, col) - lo) / (hi - lo) } else { 0.0 };
            x.set(r, col, v);
        }
    }
    Ok(x)
}

/// Zero one of the six feature categories across all rows (feature-drop runs).
pub fn zero_feature_category(x: &mut DenseMatrix, name: &str) -> Result<()> {
    let slice = category_slice(name)?;
    for r in 0..x.rows() {
        for c in slice.clone() {
            x.set(r, c, 0.0);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetnet::build_snapshot;
    use crate::hetnet::ingest::CaptionStats;

    fn profile(id: &str, followers: u64, category: &str) -> Profile {
        Profile {
            influencer_id: id.into(),
            followers_by_window: vec![followers],
            followees: 150,
            total_posts: 40,
            category: category.into(),
        }
    }

    fn post(inf: &str, category: &str, timestamp: f64) -> Post {
        Post {
            influencer_id: inf.into(),
            window_index: 0,
            likes: 25,
            hashtags: vec!["#tag".into()],
            mentions: vec![],
            image_objects: vec![],
            image: ImageSpec::Stats { brightness: 100.0, colorfulness: 20.0, color_temperature: 6000.0 },
            caption_stats: CaptionStats { n_hashtags: 1, n_usertags: 0, n_emojis: 2, length: 64, sentiment: 0.5 },
            post_category: category.into(),
            is_ad: false,
            has_influencer_reply: false,
            timestamp,
            comment_sentiments: vec![0.2, 0.8],
        }
    }

    fn layout() -> FeatureLayout {
        FeatureLayout {
            influencer_categories: vec!["beauty".into(), "travel".into()],
            post_categories: vec!["beauty".into(), "fitness".into(), "travel".into()],
        }
    }

    #[test]
    fn slices_are_disjoint_and_cover_67() {
        let all = [NODE_TYPE, PROFILE, IMAGE, TEXT, POSTING, REACTION];
        let mut next = 0;
        for r in all {
            assert_eq!(r.start, next, "slices must be adjacent");
            next = r.end;
        }
        assert_eq!(next, RAW_FEATURE_DIM);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[1.0, 2.0, 3.0, 4.0]), [2.5, 2.5, 1.0, 4.0]);
        assert_eq!(aggregate(&[5.0]), [5.0; 4]);
        assert_eq!(aggregate(&[]), [0.0; 4]);
        assert_eq!(aggregate(&[3.0, 1.0, 2.0]), [2.0, 2.0, 1.0, 3.0]);
    }

    #[test]
    fn zero_posts_leaves_only_type_and_profile() {
        let prof = profile("u1", 999, "travel");
        let x = featurize_influencer(&[], &prof, 0, &layout()).unwrap();
        assert_eq!(x[0], 1.0);
        assert!(x[COL_FOLLOWERS] > 0.0);
        let travel_pos = COL_INF_CATEGORY + 1;
        assert_eq!(x[travel_pos], 1.0);
        for (i, &v) in x.iter().enumerate() {
            if !(NODE_TYPE.contains(&i) || PROFILE.contains(&i)) {
                assert_eq!(v, 0.0, "slot {i} should be zero with no posts");
            }
        }
    }

    #[test]
    fn interval_is_aggregated_timestamp_gaps() {
        let prof = profile("u1", 999, "travel");
        let posts = vec![post("u1", "travel", 20.0), post("u1", "travel", 0.0), post("u1", "travel", 10.0)];
        let refs: Vec<&Post> = posts.iter().collect();
        let x = featurize_influencer(&refs, &prof, 0, &layout()).unwrap();
        assert_eq!(x[COL_INTERVAL], 10.0); // avg
        assert_eq!(x[COL_INTERVAL + 1], 10.0); // median
        assert_eq!(x[COL_INTERVAL + 2], 10.0); // min
        assert_eq!(x[COL_INTERVAL + 3], 10.0); // max
    }

    #[test]
    fn ad_rate_counts_flagged_posts() {
        let prof = profile("u1", 999, "travel");
        let mut posts = vec![
            post("u1", "travel", 0.0),
            post("u1", "travel", 1.0),
            post("u1", "beauty", 2.0),
            post("u1", "travel", 3.0),
        ];
        posts[2].is_ad = true;
        posts[1].has_influencer_reply = true;
        let refs: Vec<&Post> = posts.iter().collect();
        let x = featurize_influencer(&refs, &prof, 0, &layout()).unwrap();
        assert_eq!(x[COL_AD_RATE], 0.25);
        assert_eq!(x[COL_FEEDBACK_RATE], 0.25);
        // rates: 3/4 travel, 1/4 beauty, rest zero; sum 1
        let rates = &x[COL_CATEGORY_RATES..COL_CATEGORY_RATES + N_POST_CATEGORIES];
        assert_eq!(rates[0], 0.25);
        assert_eq!(rates[2], 0.75);
        assert!((rates.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_rows_follow_node_kinds() {
        let profiles: BTreeMap<String, Profile> = [
            ("u1".to_string(), profile("u1", 1000, "travel")),
            ("u2".to_string(), profile("u2", 5000, "beauty")),
        ]
        .into();
        let posts = vec![post("u1", "travel", 0.0), post("u2", "beauty", 5.0)];
        let refs: Vec<&Post> = posts.iter().collect();
        let s = build_snapshot(0, &refs, &profiles).unwrap();
        let x = featurize_snapshot(&s, &refs, &profiles, &layout()).unwrap();
        assert_eq!((x.rows(), x.cols()), (3, 67));
        let tag_row = s.nodes.iter().position(|n| n.kind == NodeKind::Hashtag).unwrap();
        let nonzero: Vec<usize> =
            (0..67).filter(|&c| x.get(tag_row, c) != 0.0).collect();
        assert_eq!(nonzero, vec![NodeKind::Hashtag.index()]);
        // min-max endpoints over the two influencers
        assert_eq!(x.get(0, COL_FOLLOWERS), 0.0);
        assert_eq!(x.get(1, COL_FOLLOWERS), 1.0);
    }

    #[test]
    fn likes_never_touch_features() {
        let profiles: BTreeMap<String, Profile> =
            [("u1".to_string(), profile("u1", 1000, "travel"))].into();
        let mut posts = vec![post("u1", "travel", 0.0), post("u1", "travel", 9.0)];
        let refs: Vec<&Post> = posts.iter().collect();
        let s = build_snapshot(0, &refs, &profiles).unwrap();
        let before = featurize_snapshot(&s, &refs, &profiles, &layout()).unwrap();
        posts[0].likes = 999_999;
        posts[1].likes = 0;
        let refs: Vec<&Post> = posts.iter().collect();
        let after = featurize_snapshot(&s, &refs, &profiles, &layout()).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn unknown_labels_contribute_nothing() {
        let prof = profile("u1", 999, "gaming"); // not in layout
        let posts = vec![post("u1", "esports", 0.0)];
        let refs: Vec<&Post> = posts.iter().collect();
        let x = featurize_influencer(&refs, &prof, 0, &layout()).unwrap();
        assert!(x[COL_INF_CATEGORY..COL_INF_CATEGORY + N_INFLUENCER_CATEGORIES]
            .iter()
            .all(|&v| v == 0.0));
        assert!(x[COL_CATEGORY_RATES..COL_CATEGORY_RATES + N_POST_CATEGORIES]
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn layout_capacity_enforced() {
        let posts: Vec<Post> =
            (0..11).map(|i| post("u1", &format!("cat{i:02}"), i as f64)).collect();
        let profs = vec![profile("u1", 10, "a")];
        assert!(FeatureLayout::from_data(&profs, &posts).is_err());
        assert!(FeatureLayout::from_data(&profs, &posts[..10]).is_ok());
    }

    #[test]
    fn raw_image_posts_featurize_via_pixel_stats() {
        let prof = profile("u1", 999, "travel");
        let mut p = post("u1", "travel", 0.0);
        p.image = ImageSpec::Raw { rgb: vec![128, 128, 128], width: 1, height: 1 };
        let refs = vec![&p];
        let x = featurize_influencer(&refs, &prof, 0, &layout()).unwrap();
        assert!((x[IMAGE.start] - 128.0).abs() < 1e-9); // brightness avg
        assert_eq!(x[IMAGE.start + 4], 0.0); // colorfulness avg

        let mut bad = post("u1", "travel", 0.0);
        bad.image = ImageSpec::Raw { rgb: vec![1, 2], width: 1, height: 1 };
        assert!(featurize_influencer(&[&bad], &prof, 0, &layout()).is_err());
    }

    #[test]
    fn feature_drop_zeroes_exactly_one_slice() {
        let mut x = DenseMatrix::filled(3, RAW_FEATURE_DIM, 1.0);
        zero_feature_category(&mut x, "image").unwrap();
        for r in 0..3 {
            for c in 0..RAW_FEATURE_DIM {
                let want = if IMAGE.contains(&c) { 0.0 } else { 1.0 };
                assert_eq!(x.get(r, c), want);
            }
        }
        assert!(zero_feature_category(&mut x, "likes").is_err());
    }

    proptest::proptest! {
        #[test]
        fn aggregate_is_permutation_invariant_and_bounded(
            mut vals in proptest::collection::vec(-100.0f64..100.0, 1..12),
            seed in 0u64..1000,
        ) {
            let base = aggregate(&vals);
            // deterministic shuffle
            let n = vals.len();
            for i in (1..n).rev() {
                let j = (seed as usize + i * 7919) % (i + 1);
                vals.swap(i, j);
            }
            let shuffled = aggregate(&vals);
            proptest::prop_assert_eq!(base, shuffled);
            proptest::prop_assert!(base[2] <= base[0] && base[0] <= base[3]);
            proptest::prop_assert!(base[2] <= base[1] && base[1] <= base[3]);
        }

        #[test]
        fn rates_live_in_unit_interval(n_posts in 0usize..8, n_ads in 0usize..8) {
            let prof = profile("u1", 500, "travel");
            let mut posts: Vec<Post> =
                (0..n_posts).map(|i| post("u1", "travel", i as f64)).collect();
            for p in posts.iter_mut().take(n_ads) {
                p.is_ad = true;
            }
            let refs: Vec<&Post> = posts.iter().collect();
            let x = featurize_influencer(&refs, &prof, 0, &layout()).unwrap();
            proptest::prop_assert!(x.iter().all(|v| v.is_finite()));
            proptest::prop_assert!((0.0..=1.0).contains(&x[COL_AD_RATE]));
            let rate_sum: f64 = x[COL_CATEGORY_RATES..COL_CATEGORY_RATES + N_POST_CATEGORIES].iter().sum();
            if n_posts == 0 {
                proptest::prop_assert_eq!(rate_sum, 0.0);
            } else {
                proptest::prop_assert!((rate_sum - 1.0).abs() < 1e-12);
            }
        }
    }
}
