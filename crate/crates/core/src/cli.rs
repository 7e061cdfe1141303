//! Batch command-line interface: generate / train / eval / ablate / sweep /
//! gradcheck. Every command resolves one RunConfig (file < flags), runs the
//! pipeline, and writes CSV reports that embed the resolved config.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
//! failure.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::featurizer::{self, FeatureLayout};
use crate::hetnet::ingest::{Post, Profile};
use crate::hetnet::{self, NodeKind, TemporalNetwork};
use crate::metrics::{RankedList, Stratum};
use crate::model::{checkpoint, forward_scores, Variant};
use crate::synthgen::{generate_world, World};
use crate::trainer::{self, ValidationCtx};

/// Spec'd pruning threshold: entity edges below this frequency are dropped.
pub const MIN_EDGE_FREQ: f64 = 0.01;
/// Gradient check pass bar.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "engagerank", version, about = "Rank influencers by predicted engagement")]
pub struct Cli {
    /// JSON run configuration; flags below override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed applied to world, model init, and training
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for reports and the checkpoint
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub gcn_layers: Option<usize>,
    /// Sets every layer width (embedding, GCN, GRU, attention, MLP)
    #[arg(long, global = true)]
    pub hidden_dim: Option<usize>,
    #[arg(long, global = true)]
    pub list_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    #[arg(long, global = true)]
    pub rbp_p: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lists_per_batch: Option<usize>,
    /// Truncate training inputs to the most recent n snapshots
    #[arg(long, global = true)]
    pub input_windows: Option<usize>,
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Subcommand, Debug)]
pub enum CliCommand {
    /// Generate a synthetic world into the data directory
    Generate,
    /// Train the full model; writes a checkpoint and a history CSV
    Train,
    /// Evaluate the checkpoint on the held-out window
    Eval,
    /// Train and evaluate one model or data variant
    Ablate {
        /// full | no-rnn | no-attention | no-gcn | drop-node-kind:<kind> | drop-feature:<category>
        variant: String,
    },
    /// Train across one axis: window-length | history-length
    Sweep { axis: String },
    /// Finite-difference check of the full composed gradient
    Gradcheck,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Data(_) | Error::Ingest { .. } | Error::Io(_) => 2,
        Error::Numeric(_) => 3,
    }
}

/// Parse argv and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, &cli);
    cfg.validate()?;
    match cli.command {
        CliCommand::Generate => cmd_generate(&cfg),
        CliCommand::Train => cmd_train(&cfg),
        CliCommand::Eval => cmd_eval(&cfg),
        CliCommand::Ablate { variant } => cmd_ablate(&cfg, &variant),
        CliCommand::Sweep { axis } => cmd_sweep(&cfg, &axis),
        CliCommand::Gradcheck => cmd_gradcheck(),
    }
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        cfg.world.seed = seed;
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.paths.report_dir = dir.clone();
        cfg.paths.checkpoint = dir.join("model.ckpt");
    }
    if let Some(n) = cli.gcn_layers {
        cfg.model.gcn_layers = n;
    }
    if let Some(d) = cli.hidden_dim {
        cfg.model.d_embed = d;
        cfg.model.gcn_hidden = d;
        cfg.model.gru_hidden = d;
        cfg.model.attention_hidden = d;
        cfg.model.mlp_hidden = d;
    }
    if let Some(m) = cli.list_size {
        cfg.train.list_size = m;
    }
    if let Some(lr) = cli.lr {
        cfg.train.lr = lr;
    }
    if let Some(p) = cli.dropout {
        cfg.model.dropout = p;
        cfg.train.dropout = p;
    }
    if let Some(p) = cli.rbp_p {
        cfg.rbp_p = p;
    }
    if let Some(n) = cli.epochs {
        cfg.train.epochs = n;
    }
    if let Some(n) = cli.lists_per_batch {
        cfg.train.lists_per_batch = n;
    }
    if let Some(n) = cli.input_windows {
        cfg.train.input_windows = Some(n);
    }
}

// ---------------------------------------------------------------------------
// pipeline assembly

/// Everything a train or eval run needs, derived from posts + profiles alone.
/// Train inputs are windows 0..=n-3 labeled by window n-2; eval inputs shift
/// one step (1..=n-2) and are labeled by the held-out final window.
pub struct Pipeline {
    pub layout: FeatureLayout,
    pub train_net: TemporalNetwork,
    pub train_rates: Vec<f64>,
    pub eval_net: TemporalNetwork,
    pub eval_rates: Vec<f64>,
    /// Window index the eval labels come from.
    pub eval_window: usize,
}

fn profile_map(profiles: &[Profile]) -> BTreeMap<String, Profile> {
    profiles.iter().map(|p| (p.influencer_id.clone(), p.clone())).collect()
}

fn group_by_window(posts: &[Post], n_windows: usize) -> Vec<Vec<&Post>> {
    let mut by_window: Vec<Vec<&Post>> = vec![Vec::new(); n_windows];
    for post in posts {
        by_window[post.window_index].push(post);
    }
    by_window
}

/// Engagement rate per influencer (in sorted-id order) from one window's posts.
pub fn window_rates(
    posts: &[&Post],
    profiles: &BTreeMap<String, Profile>,
    t: usize,
) -> Result<Vec<f64>> {
    let mut likes: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for post in posts {
        likes.entry(post.influencer_id.as_str()).or_default().push(post.likes);
    }
    profiles
        .iter()
        .map(|(id, profile)| {
            let l = likes.get(id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            crate::metrics::engagement_rate(l, profile.followers_at(t) as f64)
        })
        .collect()
}

fn build_net(
    by_window: &[Vec<&Post>],
    first: usize,
    last: usize,
    profiles: &BTreeMap<String, Profile>,
    layout: &FeatureLayout,
) -> Result<TemporalNetwork> {
    let mut snapshots = Vec::with_capacity(last - first + 1);
    for t in first..=last {
        let posts = &by_window[t];
        let mut snap = hetnet::build_snapshot(t, posts, profiles)?;
        snap.features = featurizer::featurize_snapshot(&snap, posts, profiles, layout)?;
        snapshots.push(hetnet::prune(&snap, MIN_EDGE_FREQ));
    }
    hetnet::align(&snapshots)
}

pub fn prepare_pipeline(posts: &[Post], profiles: &[Profile]) -> Result<Pipeline> {
    if profiles.is_empty() {
        return Err(Error::Data("no profiles".into()));
    }
    let n_windows = posts.iter().map(|p| p.window_index + 1).max().unwrap_or(0);
    if n_windows < 3 {
        return Err(Error::Data(format!(
            "need at least 3 windows (train inputs, train labels, held-out eval), found {n_windows}"
        )));
    }
    let layout = FeatureLayout::from_data(profiles, posts)?;
    let map = profile_map(profiles);
    let by_window = group_by_window(posts, n_windows);
    let train_net = build_net(&by_window, 0, n_windows - 3, &map, &layout)?;
    let eval_net = build_net(&by_window, 1, n_windows - 2, &map, &layout)?;
    let train_rates = window_rates(&by_window[n_windows - 2], &map, n_windows - 2)?;
    let eval_rates = window_rates(&by_window[n_windows - 1], &map, n_windows - 1)?;
    Ok(Pipeline {
        layout,
        train_net,
        train_rates,
        eval_net,
        eval_rates,
        eval_window: n_windows - 1,
    })
}

/// Apply the input-window truncation to both networks (history sweeps).
pub fn truncate_inputs(p: &mut Pipeline, input_windows: Option<usize>) {
    if let Some(n) = input_windows {
        p.train_net = p.train_net.truncated_to_last(n);
        p.eval_net = p.eval_net.truncated_to_last(n);
    }
}

// ---------------------------------------------------------------------------
// ablation variants

#[derive(Clone, Debug, PartialEq)]
pub enum Ablation {
    Model(Variant),
    DropNodeKind(NodeKind),
    DropFeature(String),
}

impl Ablation {
    pub fn parse(spec: &str) -> Result<Ablation> {
        match spec {
            "full" => Ok(Ablation::Model(Variant::Full)),
            "no-rnn" => Ok(Ablation::Model(Variant::NoRnn)),
            "no-attention" => Ok(Ablation::Model(Variant::NoAttention)),
            "no-gcn" => Ok(Ablation::Model(Variant::NoGcn)),
            _ => {
                if let Some(kind) = spec.strip_prefix("drop-node-kind:") {
                    let kind = NodeKind::parse(kind)?;
                    if kind == NodeKind::Influencer {
                        return Err(Error::Config(
                            "cannot drop the Influencer node kind: it is the ranked entity".into(),
                        ));
                    }
                    Ok(Ablation::DropNodeKind(kind))
                } else if let Some(cat) = spec.strip_prefix("drop-feature:") {
                    featurizer::category_slice(cat)?;
                    Ok(Ablation::DropFeature(cat.to_string()))
                } else {
                    Err(Error::Config(format!("unknown ablation variant {spec:?}")))
                }
            }
        }
    }

    fn variant(&self) -> Variant {
        match self {
            Ablation::Model(v) => *v,
            _ => Variant::Full,
        }
    }
}

/// Remove one auxiliary entity universe from the posts before graph build.
pub fn drop_node_kind(posts: &mut [Post], kind: NodeKind) {
    for post in posts {
        match kind {
            NodeKind::Hashtag => post.hashtags.clear(),
            NodeKind::ImageObject => post.image_objects.clear(),
            NodeKind::OtherUser => post.mentions.clear(),
            NodeKind::Influencer => unreachable!("rejected at parse time"),
        }
    }
}

/// Zero one feature category in every snapshot of both networks.
pub fn drop_feature(p: &mut Pipeline, category: &str) -> Result<()> {
    for x in p.train_net.features.iter_mut().chain(p.eval_net.features.iter_mut()) {
        featurizer::zero_feature_category(x, category)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report writing

fn config_line(cfg: &RunConfig) -> String {
    format!(
        "# config={}",
        serde_json::to_string(cfg).expect("run config serializes")
    )
}

fn write_report(path: &Path, cfg: &RunConfig, header: &str, rows: &[String]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = String::new();
    out.push_str(&config_line(cfg));
    out.push('\n');
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn append_report_row(path: &Path, cfg: &RunConfig, header: &str, row: &str) -> Result<()> {
    if !path.exists() {
        return write_report(path, cfg, header, &[row.to_string()]);
    }
    let mut file = std::fs::OpenOptions::new().append(true).open(path)?;
    writeln!(file, "{row}")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// commands

pub fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let world = generate_world(&cfg.world)?;
    world.save(&cfg.paths.data_dir)?;
    eprintln!(
        "generated world: {} influencers, {} posts, {} windows -> {}",
        cfg.world.n_influencers,
        world.posts.len(),
        cfg.world.n_windows,
        cfg.paths.data_dir.display()
    );
    Ok(())
}

/// Train the given variant on prepared data; returns the final model and the
/// per-epoch history. Shared by train/ablate/sweep.
pub fn train_variant(
    cfg: &RunConfig,
    p: &Pipeline,
    variant: Variant,
) -> Result<(crate::model::ModelParams, Vec<trainer::HistoryRow>)> {
    let validation = ValidationCtx { net: &p.eval_net, rates: &p.eval_rates };
    trainer::train(
        &p.train_net,
        &p.train_rates,
        cfg.model,
        variant,
        &cfg.train,
        Some(&validation),
    )
}

fn history_rows(history: &[trainer::HistoryRow]) -> Vec<String> {
    history
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{}",
                r.epoch,
                r.loss,
                r.val_ndcg10.map(|v| v.to_string()).unwrap_or_default(),
                r.val_ndcg50.map(|v| v.to_string()).unwrap_or_default()
            )
        })
        .collect()
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let started = std::time::Instant::now();
    let world = World::load(&cfg.paths.data_dir)?;
    let mut p = prepare_pipeline(&world.posts, &world.profiles)?;
    truncate_inputs(&mut p, cfg.train.input_windows);
    let (model, history) = train_variant(cfg, &p, Variant::Full)?;
    if let Some(dir) = cfg.paths.checkpoint.parent() {
        std::fs::create_dir_all(dir)?;
    }
    checkpoint::save(&cfg.paths.checkpoint, &model, &p.layout)?;
    write_report(
        &cfg.paths.report_dir.join("history.csv"),
        cfg,
        "epoch,mean_loss,ndcg_at_10,ndcg_at_50",
        &history_rows(&history),
    )?;
    let last = history.last().expect("at least one epoch");
    eprintln!(
        "trained {} epochs in {:.1?}; final loss {:.6}, val ndcg@10 {:.4} -> {}",
        history.len(),
        started.elapsed(),
        last.loss,
        last.val_ndcg10.unwrap_or(f64::NAN),
        cfg.paths.checkpoint.display()
    );
    Ok(())
}

/// Rank with a trained model and compute the eval metric set.
pub struct EvalOutcome {
    pub ndcg_by_k: Vec<(usize, f64)>,
    pub rbp: f64,
    pub strata: Vec<(Stratum, Vec<(usize, f64)>)>,
}

pub fn evaluate_model(
    cfg: &RunConfig,
    p: &Pipeline,
    model: &crate::model::ModelParams,
    profiles: &[Profile],
) -> Result<EvalOutcome> {
    let scores = forward_scores(model, &p.eval_net);
    let ranked = RankedList::from_scores(&p.eval_net.influencer_ids, &scores, &p.eval_rates);
    let ndcg_by_k: Vec<(usize, f64)> = cfg.eval_ks.iter().map(|&k| (k, ranked.ndcg(k))).collect();
    let rbp = ranked.rbp(cfg.rbp_p)?;

    let map = profile_map(profiles);
    let mut strata = Vec::new();
    for stratum in [Stratum::Micro, Stratum::Mid, Stratum::Macro] {
        let idx: Vec<usize> = p
            .eval_net
            .influencer_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| {
                let f = map[*id].followers_at(p.eval_window) as f64;
                Stratum::of(f) == stratum
            })
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let ids: Vec<String> = idx.iter().map(|&i| p.eval_net.influencer_ids[i].clone()).collect();
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let r: Vec<f64> = idx.iter().map(|&i| p.eval_rates[i]).collect();
        let sub = RankedList::from_scores(&ids, &s, &r);
        strata.push((stratum, cfg.eval_ks.iter().map(|&k| (k, sub.ndcg(k))).collect()));
    }
    Ok(EvalOutcome { ndcg_by_k, rbp, strata })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let world = World::load(&cfg.paths.data_dir)?;
    let mut p = prepare_pipeline(&world.posts, &world.profiles)?;
    truncate_inputs(&mut p, cfg.train.input_windows);
    let (model, layout) = checkpoint::load(&cfg.paths.checkpoint)?;
    if layout != p.layout {
        return Err(Error::Data(
            "checkpoint feature layout does not match the data directory".into(),
        ));
    }
    let outcome = evaluate_model(cfg, &p, &model, &world.profiles)?;

    let mut rows = Vec::new();
    for &(k, v) in &outcome.ndcg_by_k {
        rows.push(format!("all,ndcg@{k},{v}"));
    }
    rows.push(format!("all,rbp,{}", outcome.rbp));
    for (stratum, by_k) in &outcome.strata {
        for &(k, v) in by_k {
            rows.push(format!("{},ndcg@{k},{v}", stratum.label()));
        }
    }
    write_report(&cfg.paths.report_dir.join("eval.csv"), cfg, "scope,metric,value", &rows)?;
    for &(k, v) in &outcome.ndcg_by_k {
        println!("ndcg@{k} {v:.4}");
    }
    println!("rbp {:.4}", outcome.rbp);
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfig, spec: &str) -> Result<()> {
    let ablation = Ablation::parse(spec)?;
    let world = World::load(&cfg.paths.data_dir)?;
    let mut posts = world.posts.clone();
    if let Ablation::DropNodeKind(kind) = &ablation {
        drop_node_kind(&mut posts, *kind);
    }
    let mut p = prepare_pipeline(&posts, &world.profiles)?;
    truncate_inputs(&mut p, cfg.train.input_windows);
    if let Ablation::DropFeature(cat) = &ablation {
        drop_feature(&mut p, cat)?;
    }
    let (model, _) = train_variant(cfg, &p, ablation.variant())?;
    let outcome = evaluate_model(cfg, &p, &model, &world.profiles)?;
    let ndcg10 = outcome.ndcg_by_k.iter().find(|&&(k, _)| k == 10).map(|&(_, v)| v);
    let ndcg50 = outcome.ndcg_by_k.iter().find(|&&(k, _)| k == 50).map(|&(_, v)| v);
    let row = format!(
        "{spec},{},{},{}",
        ndcg10.map(|v| v.to_string()).unwrap_or_default(),
        ndcg50.map(|v| v.to_string()).unwrap_or_default(),
        outcome.rbp
    );
    append_report_row(
        &cfg.paths.report_dir.join("ablation.csv"),
        cfg,
        "variant,ndcg_at_10,ndcg_at_50,rbp",
        &row,
    )?;
    println!("{spec}: ndcg@10 {:.4} ndcg@50 {:.4} rbp {:.4}",
        ndcg10.unwrap_or(f64::NAN), ndcg50.unwrap_or(f64::NAN), outcome.rbp);
    Ok(())
}

/// Re-bin posts into windows of the given length (original windows have
/// length 1.0). Every post lands in exactly one bin, so the total count is
/// conserved by construction.
pub fn rebin_posts(posts: &[Post], window_len: f64) -> Result<Vec<Post>> {
    if !(window_len > 0.0) {
        return Err(Error::Config(format!("window length must be positive, got {window_len}")));
    }
    Ok(posts
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.window_index = (p.timestamp / window_len).floor() as usize;
            p
        })
        .collect())
}

pub fn cmd_sweep(cfg: &RunConfig, axis: &str) -> Result<()> {
    let world = World::load(&cfg.paths.data_dir)?;
    match axis {
        "history-length" => {
            let p_full = prepare_pipeline(&world.posts, &world.profiles)?;
            let k = p_full.train_net.n_snapshots();
            let mut rows = Vec::new();
            for n in 1..=k {
                let mut p = prepare_pipeline(&world.posts, &world.profiles)?;
                truncate_inputs(&mut p, Some(n));
                let (model, _) = train_variant(cfg, &p, Variant::Full)?;
                let outcome = evaluate_model(cfg, &p, &model, &world.profiles)?;
                let ndcg10 = lookup_k(&outcome.ndcg_by_k, 10);
                let ndcg50 = lookup_k(&outcome.ndcg_by_k, 50);
                eprintln!("history {n}/{k}: ndcg@50 {ndcg50:.4}");
                rows.push(format!("{n},{ndcg10},{ndcg50},{}", outcome.rbp));
            }
            write_report(
                &cfg.paths.report_dir.join("sweep_history.csv"),
                cfg,
                "history_snapshots,ndcg_at_10,ndcg_at_50,rbp",
                &rows,
            )
        }
        "window-length" => {
            let mut rows = Vec::new();
            for len in [0.5, 1.0, 2.0] {
                let posts = rebin_posts(&world.posts, len)?;
                debug_assert_eq!(posts.len(), world.posts.len());
                let p = match prepare_pipeline(&posts, &world.profiles) {
                    Ok(p) => p,
                    Err(e) => {
                        eprintln!("window length {len}: skipped ({e})");
                        continue;
                    }
                };
                let (model, _) = train_variant(cfg, &p, Variant::Full)?;
                let outcome = evaluate_model(cfg, &p, &model, &world.profiles)?;
                let ndcg10 = lookup_k(&outcome.ndcg_by_k, 10);
                let ndcg50 = lookup_k(&outcome.ndcg_by_k, 50);
                eprintln!("window length {len}: ndcg@50 {ndcg50:.4}");
                rows.push(format!("{len},{ndcg10},{ndcg50},{}", outcome.rbp));
            }
            write_report(
                &cfg.paths.report_dir.join("sweep_window.csv"),
                cfg,
                "window_length,ndcg_at_10,ndcg_at_50,rbp",
                &rows,
            )
        }
        _ => Err(Error::Config(format!(
            "unknown sweep axis {axis:?} (expected window-length or history-length)"
        ))),
    }
}

fn lookup_k(by_k: &[(usize, f64)], k: usize) -> f64 {
    by_k.iter().find(|&&(kk, _)| kk == k).map(|&(_, v)| v).unwrap_or(f64::NAN)
}

pub fn cmd_gradcheck() -> Result<()> {
    let outcome = trainer::gradcheck_full_model(false)?;
    println!(
        "gradcheck: max relative error {:.3e} over {} entries (worst: {}) in {:.2?}",
        outcome.max_rel_err, outcome.entries_checked, outcome.worst_param, outcome.elapsed
    );
    if outcome.max_rel_err < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed: {:.3e} on {} (tolerance {GRADCHECK_TOLERANCE:.0e})",
            outcome.max_rel_err, outcome.worst_param
        )))
    }
}
