//! Temporal heterogeneous network construction: per-window snapshots of
//! influencer/entity co-occurrence, pruning, symmetric normalization, and
//! alignment of all snapshots onto one global node index.

pub mod ingest;

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numkit::{DenseMatrix, SparseMatrix};
use ingest::{Post, Profile};

pub const RAW_FEATURE_DIM: usize = 67;

/// The four node types. Declaration order fixes the one-hot layout and the
/// canonical node sort, so influencer nodes always come first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Influencer,
    OtherUser,
    Hashtag,
    ImageObject,
}

impl NodeKind {
    pub const ALL: [NodeKind; 4] =
        [NodeKind::Influencer, NodeKind::OtherUser, NodeKind::Hashtag, NodeKind::ImageObject];

    pub fn index(self) -> usize {
        match self {
            NodeKind::Influencer => 0,
            NodeKind::OtherUser => 1,
            NodeKind::Hashtag => 2,
            NodeKind::ImageObject => 3,
        }
    }

    pub fn is_auxiliary(self) -> bool {
        self != NodeKind::Influencer
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "Influencer" => Ok(NodeKind::Influencer),
            "OtherUser" => Ok(NodeKind::OtherUser),
            "Hashtag" => Ok(NodeKind::Hashtag),
            "ImageObject" => Ok(NodeKind::ImageObject),
            _ => Err(Error::Config(format!("unknown node kind {name:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub kind: NodeKind,
    pub key: String,
}

impl NodeRef {
    pub fn new(kind: NodeKind, key: impl Into<String>) -> Self {
        NodeRef { kind, key: key.into() }
    }
}

/// Undirected edge between node positions `a < b`; `a` is always the
/// influencer endpoint because influencers sort first.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Number of posts by influencer `a` containing entity `b`.
    pub count: u32,
    /// count / total entity occurrences of influencer `a` in the window.
    pub freq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    /// Sorted by (kind, key); canonical across input orderings.
    pub nodes: Vec<NodeRef>,
    /// Sorted by (a, b).
    pub edges: Vec<Edge>,
    /// N x 67, zeros until the featurizer fills it.
    pub features: DenseMatrix,
}

impl Snapshot {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn degree_of(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.a == node || e.b == node).count()
    }
}

/// All snapshots re-indexed onto the stable-sorted union of their nodes.
pub struct TemporalNetwork {
    pub nodes: Vec<NodeRef>,
    /// Keys of the influencer nodes, which occupy rows 0..n_influencers.
    pub influencer_ids: Vec<String>,
    pub adjacency: Vec<Rc<SparseMatrix>>,
    pub features: Vec<DenseMatrix>,
}

impl TemporalNetwork {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_influencers(&self) -> usize {
        self.influencer_ids.len()
    }

    pub fn n_snapshots(&self) -> usize {
        self.adjacency.len()
    }

    /// Keep only the most recent `n` snapshots (history truncation).
    pub fn truncated_to_last(&self, n: usize) -> TemporalNetwork {
        let n = n.max(1).min(self.n_snapshots());
        let skip = self.n_snapshots() - n;
        TemporalNetwork {
            nodes: self.nodes.clone(),
            influencer_ids: self.influencer_ids.clone(),
            adjacency: self.adjacency[skip..].to_vec(),
            features: self.features[skip..].to_vec(),
        }
    }
}

/// Distinct entities referenced by one post, as (kind, key) pairs. Mentions
/// always map to OtherUser nodes even when the handle matches an influencer.
fn post_entities(post: &Post) -> Vec<NodeRef> {
    let mut out = Vec::new();
    for h in &post.hashtags {
        out.push(NodeRef::new(NodeKind::Hashtag, h.clone()));
    }
    for m in &post.mentions {
        out.push(NodeRef::new(NodeKind::OtherUser, m.clone()));
    }
    for o in &post.image_objects {
        out.push(NodeRef::new(NodeKind::ImageObject, o.clone()));
    }
    out.sort();
    out.dedup();
    out
}

/// Build the window-`t` snapshot. Every profiled influencer gets a node even
/// with zero posts in the window (isolated nodes pick up a self-loop during
/// normalization); entities get one node per distinct (kind, key).
pub fn build_snapshot(
    t: usize,
    posts: &[&Post],
    profiles: &BTreeMap<String, Profile>,
) -> Result<Snapshot> {
    debug_assert!(posts.iter().all(|p| p.window_index == t), "posts must belong to window {t}");
    // (influencer id, entity) -> number of posts containing the entity
    let mut pair_counts: BTreeMap<(String, NodeRef), u32> = BTreeMap::new();
    let mut totals: BTreeMap<String, u32> = BTreeMap::new();
    for post in posts {
        if !profiles.contains_key(&post.influencer_id) {
            return Err(Error::Data(format!(
                "post references unknown influencer {:?}",
                post.influencer_id
            )));
        }
        for entity in post_entities(post) {
            *pair_counts.entry((post.influencer_id.clone(), entity)).or_insert(0) += 1;
            *totals.entry(post.influencer_id.clone()).or_insert(0) += 1;
        }
    }

    let mut nodes: Vec<NodeRef> =
        profiles.keys().map(|id| NodeRef::new(NodeKind::Influencer, id.clone())).collect();
    nodes.extend(pair_counts.keys().map(|(_, entity)| entity.clone()));
    nodes.sort();
    nodes.dedup();
    let index: BTreeMap<&NodeRef, usize> = nodes.iter().zip(0..).collect();

    let mut edges: Vec<Edge> = pair_counts
        .iter()
        .map(|((inf, entity), &count)| {
            let a = index[&NodeRef::new(NodeKind::Influencer, inf.clone())];
            let b = index[entity];
            debug_assert!(a < b, "influencer endpoint sorts first");
            Edge { a, b, count, freq: f64::from(count) / f64::from(totals[inf]) }
        })
        .collect();
    edges.sort_by_key(|e| (e.a, e.b));

    let n = nodes.len();
    Ok(Snapshot { t, nodes, edges, features: DenseMatrix::zeros(n, RAW_FEATURE_DIM) })
}

/// Single-pass prune: drop edges below `min_freq`, then auxiliary nodes whose
/// remaining degree is <= 1. Influencers are never dropped. Feature rows are
/// carried over for the surviving nodes.
pub fn prune(s: &Snapshot, min_freq: f64) -> Snapshot {
    let kept_edges: Vec<&Edge> = s.edges.iter().filter(|e| e.freq >= min_freq).collect();
    let mut degree = vec![0usize; s.nodes.len()];
    for e in &kept_edges {
        degree[e.a] += 1;
        degree[e.b] += 1;
    }
    let keep: Vec<bool> = s
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| !node.kind.is_auxiliary() || degree[i] > 1)
        .collect();
    let mut remap = vec![usize::MAX; s.nodes.len()];
    let mut nodes = Vec::new();
    for (i, node) in s.nodes.iter().enumerate() {
        if keep[i] {
            remap[i] = nodes.len();
            nodes.push(node.clone());
        }
    }
    let edges: Vec<Edge> = kept_edges
        .into_iter()
        .filter(|e| keep[e.a] && keep[e.b])
        .map(|e| Edge { a: remap[e.a], b: remap[e.b], ..e.clone() })
        .collect();
    let mut features = DenseMatrix::zeros(nodes.len(), s.features.cols());
    for (old, &new) in remap.iter().enumerate() {
        if new != usize::MAX {
            features.row_mut(new).copy_from_slice(s.features.row(old));
        }
    }
    Snapshot { t: s.t, nodes, edges, features }
}

/// Symmetric GCN normalization D^{-1/2}(A+I)D^{-1/2} over the global index:
/// binary adjacency from the snapshot's edges mapped through `index_map`,
/// plus a self-loop on every global node so isolated rows stay well-defined.
pub fn normalize_adjacency(s: &Snapshot, n_global: usize, index_map: &[usize]) -> SparseMatrix {
    assert_eq!(index_map.len(), s.nodes.len(), "one global index per snapshot node");
    debug_assert!(index_map.iter().all(|&g| g < n_global));
    let mut degree = vec![1.0f64; n_global];
    for e in &s.edges {
        degree[index_map[e.a]] += 1.0;
        degree[index_map[e.b]] += 1.0;
    }
    let mut triplets = Vec::with_capacity(n_global + 2 * s.edges.len());
    for (i, &d) in degree.iter().enumerate() {
        triplets.push((i, i, 1.0 / d));
    }
    for e in &s.edges {
        let (ga, gb) = (index_map[e.a], index_map[e.b]);
        let v = 1.0 / (degree[ga] * degree[gb]).sqrt();
        triplets.push((ga, gb, v));
        triplets.push((gb, ga, v));
    }
    SparseMatrix::from_triplets(n_global, n_global, &triplets)
}

/// Align snapshots onto the stable-sorted union of their node sets: absent
/// nodes get zero feature rows and self-loop-only adjacency rows.
pub fn align(snapshots: &[Snapshot]) -> Result<TemporalNetwork> {
    if snapshots.is_empty() {
        return Err(Error::Data("cannot align an empty snapshot list".into()));
    }
    let mut nodes: Vec<NodeRef> = snapshots.iter().flat_map(|s| s.nodes.iter().cloned()).collect();
    nodes.sort();
    nodes.dedup();
    let global: BTreeMap<&NodeRef, usize> = nodes.iter().zip(0..).collect();

    let n_global = nodes.len();
    let mut adjacency = Vec::with_capacity(snapshots.len());
    let mut features = Vec::with_capacity(snapshots.len());
    for s in snapshots {
        let index_map: Vec<usize> = s.nodes.iter().map(|n| global[n]).collect();
        adjacency.push(Rc::new(normalize_adjacency(s, n_global, &index_map)));
        let mut x = DenseMatrix::zeros(n_global, s.features.cols());
        for (local, &g) in index_map.iter().enumerate() {
            x.row_mut(g).copy_from_slice(s.features.row(local));
        }
        features.push(x);
    }
    let influencer_ids = nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Influencer)
        .map(|n| n.key.clone())
        .collect();
    Ok(TemporalNetwork { nodes, influencer_ids, adjacency, features })
}
