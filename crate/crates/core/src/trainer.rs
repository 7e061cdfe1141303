//! Listwise training: sampled ranking lists, the Plackett-Luce (ListMLE)
//! surrogate loss, the Adam training loop, and the end-to-end gradient
//! check harness.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetnet::TemporalNetwork;
use crate::metrics::RankedList;
use crate::model::{forward_on_tape, forward_scores, Dropout, ModelConfig, ModelParams, TapeParams, Variant};
use crate::numkit::{AdamParams, AdamState, BufId, DenseMatrix, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Influencers per sampled list.
    pub list_size: usize,
    pub lists_per_batch: usize,
    pub lr: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Restrict training inputs to the most recent n snapshots (None = all);
    /// consumed by the command layer when assembling the networks.
    pub input_windows: Option<usize>,
    /// Write an intermediate checkpoint every n epochs (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            list_size: 10,
            lists_per_batch: 32,
            lr: 0.001,
            dropout: 0.5,
            epochs: 60,
            seed: 0,
            input_windows: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.list_size < 2 {
            return Err(Error::Config("list size must be >= 2 for a ranking loss".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.lists_per_batch == 0 || self.epochs == 0 {
            return Err(Error::Config("lists per batch and epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0,1), got {}", self.dropout)));
        }
        if self.input_windows == Some(0) {
            return Err(Error::Config("input windows must be >= 1 when set".into()));
        }
        Ok(())
    }
}

/// A sampled ranking list: influencer row indices with their target-window
/// engagement rates. Entries are kept in ascending index order so that
/// rate ties resolve by ascending id deterministically.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledList {
    pub indices: Vec<usize>,
    pub rates: Vec<f64>,
}

impl LabeledList {
    pub fn new(mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_by_key(|&(i, _)| i);
        debug_assert!(entries.windows(2).all(|w| w[0].0 != w[1].0), "list ids must be distinct");
        LabeledList {
            indices: entries.iter().map(|&(i, _)| i).collect(),
            rates: entries.iter().map(|&(_, r)| r).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Draw `n_lists` lists of `m` distinct indices from `0..pool`, uniformly
/// without replacement within each list.
pub fn sample_lists(
    pool: usize,
    m: usize,
    n_lists: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    use rand::Rng;
    if pool < m {
        return Err(Error::Config(format!("cannot sample lists of {m} from a pool of {pool}")));
    }
    let mut scratch: Vec<usize> = (0..pool).collect();
    let mut lists = Vec::with_capacity(n_lists);
    for _ in 0..n_lists {
        // partial Fisher-Yates: the first m slots become the sample
        for i in 0..m {
            let j = rng.random_range(i..pool);
            scratch.swap(i, j);
        }
        let mut list = scratch[..m].to_vec();
        list.sort_unstable();
        lists.push(list);
    }
    Ok(lists)
}

/// Indices of `rates` in descending order, ties by ascending position.
pub fn ground_truth_permutation(rates: &[f64]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..rates.len()).collect();
    perm.sort_by(|&a, &b| rates[b].partial_cmp(&rates[a]).unwrap().then(a.cmp(&b)));
    perm
}

/// ListMLE: negative log-likelihood of the ground-truth permutation under
/// the Plackett-Luce model, log-sum-exp stabilized.
pub fn listmle_loss_value(scores: &[f64], rates: &[f64]) -> f64 {
    assert_eq!(scores.len(), rates.len(), "scores and rates must align");
    let perm = ground_truth_permutation(rates);
    let mut loss = 0.0;
    for i in 0..perm.len().saturating_sub(1) {
        let suffix: Vec<f64> = perm[i..].iter().map(|&j| scores[j]).collect();
        let max = suffix.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + suffix.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        loss += lse - scores[perm[i]];
    }
    loss
}

/// Tape construction of the same loss against the model's score column.
pub fn listmle_on_tape(tape: &mut Tape, scores: BufId, list: &LabeledList) -> BufId {
    debug_assert_eq!(tape.shape(scores).1, 1, "scores must be a column");
    let perm = ground_truth_permutation(&list.rates);
    let m = perm.len();
    let mut total: Option<BufId> = None;
    for i in 0..m.saturating_sub(1) {
        let suffix_rows: Vec<usize> = perm[i..].iter().map(|&j| list.indices[j]).collect();
        let n_suffix = suffix_rows.len();
        let sub = tape.select_rows(scores, suffix_rows);
        let row = tape.reshape(sub, 1, n_suffix);
        let probs = tape.softmax_rows(row);
        let first = tape.select_col(probs, 0);
        let logp = tape.log(first);
        let term = tape.scale(logp, -1.0);
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    total.unwrap_or_else(|| tape.constant(DenseMatrix::zeros(1, 1)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: f64,
    pub val_ndcg10: Option<f64>,
    pub val_ndcg50: Option<f64>,
}

/// Held-out ranking context evaluated after each epoch.
pub struct ValidationCtx<'a> {
    pub net: &'a TemporalNetwork,
    pub rates: &'a [f64],
}

const SAMPLE_SALT: u64 = 0x5a3c_9d2e_0f17_4b01;
const DROPOUT_SALT: u64 = 0x77e1_55aa_c3b2_9d02;

/// One gradient step per epoch: sample a batch of lists, forward in train
/// mode, average the per-list losses, backprop, Adam. Deterministic per seed.
pub fn train(
    net: &TemporalNetwork,
    target_rates: &[f64],
    model_cfg: ModelConfig,
    variant: Variant,
    cfg: &TrainConfig,
    validation: Option<&ValidationCtx>,
) -> Result<(ModelParams, Vec<HistoryRow>)> {
    cfg.validate()?;
    let n_inf = net.n_influencers();
    if target_rates.len() != n_inf {
        return Err(Error::Data(format!(
            "{} target rates for {} influencers",
            target_rates.len(),
            n_inf
        )));
    }
    let mut model = ModelParams::init(model_cfg, variant)?;
    let mut rng_sample = ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLE_SALT);
    let mut rng_dropout = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_SALT);
    let adam_hp = AdamParams { lr: cfg.lr, ..AdamParams::default() };
    let mut adam = {
        let snapshot: Vec<DenseMatrix> = model.flat().into_iter().cloned().collect();
        AdamState::new(&snapshot)
    };
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lists = sample_lists(n_inf, cfg.list_size, cfg.lists_per_batch, &mut rng_sample)?;
        let mut tape = Tape::new();
        let tp = TapeParams::register(&mut tape, &model, true);
        let scores = {
            let mut dropout = Dropout { rng: &mut rng_dropout, p: cfg.dropout };
            let d = if cfg.dropout > 0.0 { Some(&mut dropout) } else { None };
            forward_on_tape(&mut tape, &model, &tp, net, d)
        };
        let mut batch: Option<BufId> = None;
        for indices in lists {
            let list = LabeledList::new(
                indices.into_iter().map(|i| (i, target_rates[i])).collect(),
            );
            let term = listmle_on_tape(&mut tape, scores, &list);
            batch = Some(match batch {
                None => term,
                Some(acc) => tape.add(acc, term),
            });
        }
        let loss_id = tape.scale(batch.expect("at least one list"), 1.0 / cfg.lists_per_batch as f64);
        let loss = tape.value(loss_id).get(0, 0);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss {loss} at epoch {epoch}, batch 0"
            )));
        }

        let mut grads = tape.backward(loss_id);
        let grad_mats: Vec<DenseMatrix> = tp
            .flat()
            .into_iter()
            .map(|id| {
                let (r, c) = tape.shape(id);
                grads.take_or_zeros(id, r, c)
            })
            .collect();
        drop(tape);
        let mut param_mats: Vec<DenseMatrix> = model.flat().into_iter().cloned().collect();
        adam.step(&adam_hp, &mut param_mats, &grad_mats);
        for (dst, src) in model.flat_mut().into_iter().zip(param_mats) {
            *dst = src;
        }

        let (val_ndcg10, val_ndcg50) = match validation {
            Some(v) => {
                let scores = forward_scores(&model, v.net);
                let ranked = RankedList::from_scores(&v.net.influencer_ids, &scores, v.rates);
                (Some(ranked.ndcg(10)), Some(ranked.ndcg(50)))
            }
            None => (None, None),
        };
        history.push(HistoryRow { epoch, loss, val_ndcg10, val_ndcg50 });
    }
    Ok((model, history))
}

/// End-to-end finite-difference verification of the whole training gradient
/// on a tiny instance (6 nodes, 2 snapshots, width-4 layers).
#[derive(Debug)]
pub struct GradCheckOutcome {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub entries_checked: usize,
    pub elapsed: std::time::Duration,
}

/// Deterministic miniature network for verification harnesses.
pub fn tiny_network(n_inf: usize, n_aux: usize, k: usize, seed: u64) -> TemporalNetwork {
    use rand::Rng;
    use crate::hetnet::{align, Edge, NodeKind, NodeRef, Snapshot, RAW_FEATURE_DIM};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut snapshots = Vec::new();
    for t in 0..k {
        let mut nodes: Vec<NodeRef> =
            (0..n_inf).map(|i| NodeRef::new(NodeKind::Influencer, format!("u{i:02}"))).collect();
        nodes.extend((0..n_aux).map(|j| NodeRef::new(NodeKind::Hashtag, format!("#h{j:02}"))));
        let mut edges = Vec::new();
        for i in 0..n_inf {
            for j in 0..n_aux {
                if rng.random::<f64>() < 0.5 {
                    edges.push(Edge { a: i, b: n_inf + j, count: 1, freq: 0.2 });
                }
            }
        }
        let mut features = DenseMatrix::zeros(n_inf + n_aux, RAW_FEATURE_DIM);
        for v in features.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        snapshots.push(Snapshot { t, nodes, edges, features });
    }
    align(&snapshots).expect("nonempty snapshot list")
}

/// Compare the tape gradient of the full model + ListMLE loss against
/// central finite differences. `corrupt` injects a deliberate gradient error
/// (fault-injection hook for the harness's own test).
pub fn gradcheck_full_model(corrupt: bool) -> Result<GradCheckOutcome> {
    let started = std::time::Instant::now();
    let cfg = ModelConfig {
        d_embed: 4,
        gcn_layers: 2,
        gcn_hidden: 4,
        gru_hidden: 4,
        attention_hidden: 4,
        mlp_hidden: 4,
        dropout: 0.0,
        seed: 12,
    };
    let net = tiny_network(3, 3, 2, 7);
    let rates = [0.09, 0.02, 0.05];
    let lists = vec![
        LabeledList::new(vec![(0, rates[0]), (1, rates[1]), (2, rates[2])]),
        LabeledList::new(vec![(0, rates[0]), (2, rates[2])]),
    ];
    let model = ModelParams::init(cfg, Variant::Full)?;

    let mut tape = Tape::new();
    let tp = TapeParams::register(&mut tape, &model, true);
    let scores = forward_on_tape(&mut tape, &model, &tp, &net, None);
    let mut batch: Option<BufId> = None;
    for list in &lists {
        let term = listmle_on_tape(&mut tape, scores, list);
        batch = Some(match batch {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    let loss_id = tape.scale(batch.unwrap(), 1.0 / lists.len() as f64);
    let mut grads = tape.backward(loss_id);
    let mut analytic: Vec<DenseMatrix> = tp
        .flat()
        .into_iter()
        .map(|id| {
            let (r, c) = tape.shape(id);
            grads.take_or_zeros(id, r, c)
        })
        .collect();
    if corrupt {
        let v = analytic[0].get(0, 0);
        analytic[0].set(0, 0, v * 1.5 + 1.0);
    }

    let mut params: Vec<DenseMatrix> = model.flat().into_iter().cloned().collect();
    let names = model.names();
    let loss_fn = |p: &[DenseMatrix]| {
        let mut m = model.clone();
        for (dst, src) in m.flat_mut().into_iter().zip(p) {
            *dst = src.clone();
        }
        let scores = forward_scores(&m, &net);
        lists
            .iter()
            .map(|l| {
                let s: Vec<f64> = l.indices.iter().map(|&i| scores[i]).collect();
                listmle_loss_value(&s, &l.rates)
            })
            .sum::<f64>()
            / lists.len() as f64
    };
    let report = crate::numkit::finite_diff_check(&mut params, &analytic, loss_fn, 1e-5);
    Ok(GradCheckOutcome {
        max_rel_err: report.max_rel_err,
        worst_param: names[report.worst_param].clone(),
        entries_checked: report.entries_checked,
        elapsed: started.elapsed(),
    })
}
