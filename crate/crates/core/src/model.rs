//! The scoring model: input projection, stacked GCN over each snapshot,
//! per-influencer GRU across snapshots, attention pooling over time, and a
//! two-layer scoring head. All stages run on the autodiff tape so one
//! backward pass covers the whole composition.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetnet::{NodeKind, TemporalNetwork, RAW_FEATURE_DIM};
use crate::numkit::{BufId, DenseMatrix, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_embed: usize,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub gru_hidden: usize,
    pub attention_hidden: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_embed: 128,
            gcn_layers: 2,
            gcn_hidden: 128,
            gru_hidden: 128,
            attention_hidden: 128,
            mlp_hidden: 128,
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_embed,
            self.gcn_layers,
            self.gcn_hidden,
            self.gru_hidden,
            self.attention_hidden,
            self.mlp_hidden,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("all model dimensions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0,1), got {}", self.dropout)));
        }
        // the attention projection reads the GRU state directly (h -> 1)
        if self.attention_hidden != self.gru_hidden {
            return Err(Error::Config(format!(
                "attention_hidden ({}) must equal gru_hidden ({})",
                self.attention_hidden, self.gru_hidden
            )));
        }
        Ok(())
    }
}

/// Architecture variants for the component analysis. NoRnn scores from the
/// last snapshot only; NoAttention averages GRU states uniformly; NoGcn feeds
/// the input projection straight to the GRU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    NoRnn,
    NoAttention,
    NoGcn,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRnn => "no-rnn",
            Variant::NoAttention => "no-attention",
            Variant::NoGcn => "no-gcn",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub variant: Variant,
    pub w_in: DenseMatrix,
    pub gcn: Vec<DenseMatrix>,
    pub w_update: DenseMatrix,
    pub b_update: DenseMatrix,
    pub w_reset: DenseMatrix,
    pub b_reset: DenseMatrix,
    pub w_cand: DenseMatrix,
    pub b_cand: DenseMatrix,
    pub attn_w: DenseMatrix,
    pub attn_b: DenseMatrix,
    pub mlp_w1: DenseMatrix,
    pub mlp_b1: DenseMatrix,
    pub mlp_w2: DenseMatrix,
    pub mlp_b2: DenseMatrix,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = DenseMatrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    m
}

const INIT_SALT: u64 = 0x1457_11ce_9c3a_0001;

impl ModelParams {
    pub fn init(cfg: ModelConfig, variant: Variant) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_SALT);
        let (r, h, d) = (cfg.gcn_hidden, cfg.gru_hidden, cfg.d_embed);
        let gcn: Vec<DenseMatrix> = if variant == Variant::NoGcn {
            Vec::new()
        } else {
            (0..cfg.gcn_layers)
                .map(|i| glorot(if i == 0 { d } else { r }, r, &mut rng))
                .collect()
        };
        let gin = if variant == Variant::NoGcn { d } else { cfg.gcn_layers * r };
        Ok(ModelParams {
            w_in: glorot(RAW_FEATURE_DIM, d, &mut rng),
            gcn,
            w_update: glorot(h + gin, h, &mut rng),
            b_update: DenseMatrix::zeros(1, h),
            w_reset: glorot(h + gin, h, &mut rng),
            b_reset: DenseMatrix::zeros(1, h),
            w_cand: glorot(h + gin, h, &mut rng),
            b_cand: DenseMatrix::zeros(1, h),
            attn_w: glorot(h, 1, &mut rng),
            attn_b: DenseMatrix::zeros(1, 1),
            mlp_w1: glorot(h, cfg.mlp_hidden, &mut rng),
            mlp_b1: DenseMatrix::zeros(1, cfg.mlp_hidden),
            mlp_w2: glorot(cfg.mlp_hidden, 1, &mut rng),
            mlp_b2: DenseMatrix::zeros(1, 1),
            cfg,
            variant,
        })
    }

    /// Width of the GRU input rows R_t.
    pub fn gru_input_width(&self) -> usize {
        if self.variant == Variant::NoGcn {
            self.cfg.d_embed
        } else {
            self.cfg.gcn_layers * self.cfg.gcn_hidden
        }
    }

    /// Canonical parameter order shared by the optimizer, checkpoints, and
    /// gradient checks.
    pub fn flat(&self) -> Vec<&DenseMatrix> {
        let mut out = vec![&self.w_in];
        out.extend(self.gcn.iter());
        out.extend([
            &self.w_update,
            &self.b_update,
            &self.w_reset,
            &self.b_reset,
            &self.w_cand,
            &self.b_cand,
            &self.attn_w,
            &self.attn_b,
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
        ]);
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = vec![&mut self.w_in];
        out.extend(self.gcn.iter_mut());
        out.extend([
            &mut self.w_update,
            &mut self.b_update,
            &mut self.w_reset,
            &mut self.b_reset,
            &mut self.w_cand,
            &mut self.b_cand,
            &mut self.attn_w,
            &mut self.attn_b,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
        ]);
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["w_in".to_string()];
        out.extend((0..self.gcn.len()).map(|i| format!("gcn.{i}")));
        out.extend(
            [
                "gru.update.w",
                "gru.update.b",
                "gru.reset.w",
                "gru.reset.b",
                "gru.cand.w",
                "gru.cand.b",
                "attn.w",
                "attn.b",
                "mlp.hidden.w",
                "mlp.hidden.b",
                "mlp.out.w",
                "mlp.out.b",
            ]
            .map(String::from),
        );
        out
    }

    pub fn n_scalars(&self) -> usize {
        self.flat().iter().map(|m| m.rows() * m.cols()).sum()
    }
}

/// Tape handles of the registered parameters, in ModelParams::flat order.
pub struct TapeParams {
    pub w_in: BufId,
    pub gcn: Vec<BufId>,
    pub w_update: BufId,
    pub b_update: BufId,
    pub w_reset: BufId,
    pub b_reset: BufId,
    pub w_cand: BufId,
    pub b_cand: BufId,
    pub attn_w: BufId,
    pub attn_b: BufId,
    pub mlp_w1: BufId,
    pub mlp_b1: BufId,
    pub mlp_w2: BufId,
    pub mlp_b2: BufId,
}

impl TapeParams {
    /// Register every parameter on the tape; trainable registration makes
    /// them gradient roots, constant registration is for pure evaluation.
    pub fn register(tape: &mut Tape, m: &ModelParams, trainable: bool) -> TapeParams {
        let mut reg = |d: &DenseMatrix| {
            if trainable {
                tape.param(d.clone())
            } else {
                tape.constant(d.clone())
            }
        };
        TapeParams {
            w_in: reg(&m.w_in),
            gcn: m.gcn.iter().map(&mut reg).collect(),
            w_update: reg(&m.w_update),
            b_update: reg(&m.b_update),
            w_reset: reg(&m.w_reset),
            b_reset: reg(&m.b_reset),
            w_cand: reg(&m.w_cand),
            b_cand: reg(&m.b_cand),
            attn_w: reg(&m.attn_w),
            attn_b: reg(&m.attn_b),
            mlp_w1: reg(&m.mlp_w1),
            mlp_b1: reg(&m.mlp_b1),
            mlp_w2: reg(&m.mlp_w2),
            mlp_b2: reg(&m.mlp_b2),
        }
    }

    pub fn flat(&self) -> Vec<BufId> {
        let mut out = vec![self.w_in];
        out.extend(self.gcn.iter().copied());
        out.extend([
            self.w_update,
            self.b_update,
            self.w_reset,
            self.b_reset,
            self.w_cand,
            self.b_cand,
            self.attn_w,
            self.attn_b,
            self.mlp_w1,
            self.mlp_b1,
            self.mlp_w2,
            self.mlp_b2,
        ]);
        out
    }
}

/// Training-mode dropout state: inverted masks drawn from the epoch RNG.
pub struct Dropout<'r> {
    pub rng: &'r mut ChaCha8Rng,
    pub p: f64,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: BufId) -> BufId {
        if self.p == 0.0 {
            return x;
        }
        let (rows, cols) = tape.shape(x);
        let keep = 1.0 - self.p;
        let mut mask = DenseMatrix::zeros(rows, cols);
        for v in mask.data_mut() {
            *v = if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
        }
        let mask = tape.constant(mask);
        tape.mul(x, mask)
    }
}

fn apply_dropout(tape: &mut Tape, x: BufId, dropout: &mut Option<&mut Dropout>) -> BufId {
    match dropout {
        Some(d) => d.apply(tape, x),
        None => x,
    }
}

/// Input projection plus `e` graph-convolution layers; returns the
/// column-concatenation of all layer outputs (N x e*r), or the bare
/// projection (N x d) for NoGcn.
pub fn gcn_on_tape(
    tape: &mut Tape,
    tp: &TapeParams,
    adjacency: &std::rc::Rc<crate::numkit::SparseMatrix>,
    x: BufId,
    no_gcn: bool,
    dropout: &mut Option<&mut Dropout>,
) -> BufId {
    let mut f = tape.matmul(x, tp.w_in);
    if no_gcn {
        return f;
    }
    let mut layer_outputs = Vec::with_capacity(tp.gcn.len());
    for &w in &tp.gcn {
        let propagated = tape.spmm(adjacency, f);
        let pre = tape.matmul(propagated, w);
        f = tape.relu(pre);
        f = apply_dropout(tape, f, dropout);
        layer_outputs.push(f);
    }
    tape.concat_cols(&layer_outputs)
}

pub fn gru_step_on_tape(
    tape: &mut Tape,
    tp: &TapeParams,
    h_prev: BufId,
    r_rows: BufId,
    ones: BufId,
) -> BufId {
    let zin = tape.concat_cols(&[h_prev, r_rows]);
    let z_pre = tape.matmul(zin, tp.w_update);
    let z_pre = tape.add_row_broadcast(z_pre, tp.b_update);
    let z = tape.sigmoid(z_pre);
    let r_pre = tape.matmul(zin, tp.w_reset);
    let r_pre = tape.add_row_broadcast(r_pre, tp.b_reset);
    let r = tape.sigmoid(r_pre);
    let gated = tape.mul(r, h_prev);
    let cin = tape.concat_cols(&[gated, r_rows]);
    let cand_pre = tape.matmul(cin, tp.w_cand);
    let cand_pre = tape.add_row_broadcast(cand_pre, tp.b_cand);
    let h_tilde = tape.tanh(cand_pre);
    let neg_z = tape.scale(z, -1.0);
    let one_minus_z = tape.add(ones, neg_z);
    let keep = tape.mul(one_minus_z, h_prev);
    let update = tape.mul(z, h_tilde);
    tape.add(keep, update)
}

/// Attention pooling over the GRU state sequence; returns (alpha, context).
pub fn attention_on_tape(tape: &mut Tape, tp: &TapeParams, states: &[BufId]) -> (BufId, BufId) {
    assert!(!states.is_empty(), "attention needs at least one state");
    let taus: Vec<BufId> = states
        .iter()
        .map(|&h| {
            let proj = tape.matmul(h, tp.attn_w);
            let proj = tape.add_row_broadcast(proj, tp.attn_b);
            tape.tanh(proj)
        })
        .collect();
    let stacked = tape.concat_cols(&taus);
    let alpha = tape.softmax_rows(stacked);
    let mut context = None;
    for (t, &h) in states.iter().enumerate() {
        let weight = tape.select_col(alpha, t);
        let term = tape.mul_col_broadcast(h, weight);
        context = Some(match context {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    (alpha, context.expect("nonempty states"))
}

/// Whole-model forward; returns scores ŷ as an n_influencers x 1 buffer.
pub fn forward_on_tape(
    tape: &mut Tape,
    model: &ModelParams,
    tp: &TapeParams,
    net: &TemporalNetwork,
    mut dropout: Option<&mut Dropout>,
) -> BufId {
    let n_inf = net.n_influencers();
    debug_assert!(net.nodes[..n_inf].iter().all(|n| n.kind == NodeKind::Influencer));
    let k = net.n_snapshots();
    let start = if model.variant == Variant::NoRnn { k - 1 } else { 0 };

    let influencer_rows: Vec<usize> = (0..n_inf).collect();
    let mut states = Vec::with_capacity(k - start);
    let ones = tape.constant(DenseMatrix::filled(n_inf, model.cfg.gru_hidden, 1.0));
    let mut h = tape.constant(DenseMatrix::zeros(n_inf, model.cfg.gru_hidden));
    for t in start..k {
        let x = tape.constant(net.features[t].clone());
        let r_all = gcn_on_tape(
            tape,
            tp,
            &net.adjacency[t],
            x,
            model.variant == Variant::NoGcn,
            &mut dropout,
        );
        let r_rows = tape.select_rows(r_all, influencer_rows.clone());
        h = gru_step_on_tape(tape, tp, h, r_rows, ones);
        states.push(h);
    }

    let context = if states.len() == 1 {
        states[0]
    } else if model.variant == Variant::NoAttention {
        let mut acc = states[0];
        for &s in &states[1..] {
            acc = tape.add(acc, s);
        }
        tape.scale(acc, 1.0 / states.len() as f64)
    } else {
        attention_on_tape(tape, tp, &states).1
    };

    let hidden_pre = tape.matmul(context, tp.mlp_w1);
    let hidden_pre = tape.add_row_broadcast(hidden_pre, tp.mlp_b1);
    let hidden = tape.relu(hidden_pre);
    let hidden = apply_dropout(tape, hidden, &mut dropout);
    let out = tape.matmul(hidden, tp.mlp_w2);
    tape.add_row_broadcast(out, tp.mlp_b2)
}

/// Deterministic eval-mode scores, one per influencer.
pub fn forward_scores(model: &ModelParams, net: &TemporalNetwork) -> Vec<f64> {
    let mut tape = Tape::new();
    let tp = TapeParams::register(&mut tape, model, false);
    let y = forward_on_tape(&mut tape, model, &tp, net, None);
    tape.value(y).data().to_vec()
}

pub mod checkpoint {
    //! Versioned binary checkpoint: JSON header (config, variant, feature
    //! layout, shapes) followed by raw little-endian f64 parameter data.
    //! Round-trips are bit-exact.

    use std::io::{Read, Write};
    use std::path::Path;

    use serde::{Deserialize, Serialize};

    use super::{ModelConfig, ModelParams, Variant};
    use crate::error::{Error, Result};
    use crate::featurizer::FeatureLayout;
    use crate::numkit::DenseMatrix;

    const MAGIC: &[u8; 8] = b"ERANK01\n";

    #[derive(Serialize, Deserialize)]
    struct Header {
        config: ModelConfig,
        variant: Variant,
        layout: FeatureLayout,
        shapes: Vec<(String, usize, usize)>,
    }

    pub fn save(path: &Path, model: &ModelParams, layout: &FeatureLayout) -> Result<()> {
        let names = model.names();
        let mats = model.flat();
        let header = Header {
            config: model.cfg,
            variant: model.variant,
            layout: layout.clone(),
            shapes: names
                .iter()
                .zip(&mats)
                .map(|(n, m)| (n.clone(), m.rows(), m.cols()))
                .collect(),
        };
        let header_bytes =
            serde_json::to_vec(&header).map_err(|e| Error::Data(e.to_string()))?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        out.write_all(&header_bytes)?;
        for m in mats {
            for &v in m.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(ModelParams, FeatureLayout)> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Data(format!("{} is not a checkpoint file", path.display())));
        }
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)?;
        let mut header_bytes = vec![0u8; u64::from_le_bytes(len_bytes) as usize];
        file.read_exact(&mut header_bytes)?;
        let header: Header =
            serde_json::from_slice(&header_bytes).map_err(|e| Error::Data(e.to_string()))?;

        let mut model = ModelParams::init(header.config, header.variant)?;
        {
            let names = model.names();
            let mut mats = model.flat_mut();
            if names.len() != header.shapes.len() {
                return Err(Error::Data("checkpoint parameter list mismatch".into()));
            }
            for ((name, mat), (want_name, rows, cols)) in
                names.iter().zip(mats.iter_mut()).zip(&header.shapes)
            {
                if name != want_name || mat.rows() != *rows || mat.cols() != *cols {
                    return Err(Error::Data(format!(
                        "checkpoint shape mismatch at {want_name}: {rows}x{cols}"
                    )));
                }
                let mut buf = vec![0u8; rows * cols * 8];
                file.read_exact(&mut buf)?;
                let mut data = Vec::with_capacity(rows * cols);
                for chunk in buf.chunks_exact(8) {
                    data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
                }
                **mat = DenseMatrix::from_vec(*rows, *cols, data);
            }
        }
        Ok((model, header.layout))
    }
}
