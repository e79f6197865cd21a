//! Encoder + temporal context normalization backbone and the five heads.
//!
//! Every model maps a batch of episodes, given as `[B·T, 3, H, W]` images, to
//! `[B, classes]` logits. Images pass through the shared convolutional
//! encoder, an optional L1-regularized linear layer, and TCN across the `T`
//! positions of each episode. CoRelNet and CoRelNet-T then see only the
//! softmaxed similarity matrix `R`; the Transformer, LSTM and ESBN baselines
//! consume the encodings.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use corelnet_autograd::{Graph, Init, ParamId, ParamStore, Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TCN_EPS: f64 = 1e-8;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Corelnet,
    CorelnetT,
    Transformer,
    Lstm,
    Esbn,
}

impl HeadKind {
    pub const ALL: [HeadKind; 5] =
        [HeadKind::Corelnet, HeadKind::CorelnetT, HeadKind::Transformer, HeadKind::Lstm, HeadKind::Esbn];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Corelnet => "corelnet",
            HeadKind::CorelnetT => "corelnet_t",
            HeadKind::Transformer => "transformer",
            HeadKind::Lstm => "lstm",
            HeadKind::Esbn => "esbn",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    Symmetric,
    Asymmetric,
}

impl SimilarityMode {
    pub fn name(self) -> &'static str {
        match self {
            SimilarityMode::Symmetric => "symmetric",
            SimilarityMode::Asymmetric => "asymmetric",
        }
    }
}

impl FromStr for SimilarityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(SimilarityMode::Symmetric),
            "asymmetric" => Ok(SimilarityMode::Asymmetric),
            _ => Err(Error::Config(format!("unknown similarity mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    Learned,
    /// Randomly initialized and never updated.
    Random,
}

impl EncoderMode {
    pub fn name(self) -> &'static str {
        match self {
            EncoderMode::Learned => "learned",
            EncoderMode::Random => "random",
        }
    }
}

impl FromStr for EncoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(EncoderMode::Learned),
            "random" => Ok(EncoderMode::Random),
            _ => Err(Error::Config(format!("unknown encoder mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub head: HeadKind,
    pub seq_len: usize,
    pub num_classes: usize,
    pub image_size: usize,
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub enc_hidden: usize,
    pub embed_dim: usize,
    pub encoder_mode: EncoderMode,
    /// Insert the L1-regularized linear layer after the encoder.
    pub l1_layer: bool,
    pub tcn_trainable: bool,
    /// CoRelNet similarity, or key/query tying for the Transformer baseline.
    pub similarity: SimilarityMode,
    pub concat_sensory: bool,
    pub decoder_hidden: usize,
    pub t_dim: usize,
    pub t_heads: usize,
    pub t_query: usize,
    pub t_pos: usize,
    pub t_ff: usize,
    pub tf_heads: usize,
    pub tf_ff: usize,
    pub lstm_hidden: usize,
    pub esbn_key: usize,
}

impl ModelConfig {
    pub fn new(head: HeadKind, seq_len: usize, num_classes: usize) -> Self {
        Self {
            head,
            seq_len,
            num_classes,
            image_size: 32,
            conv_layers: 3,
            conv_channels: 32,
            enc_hidden: 256,
            embed_dim: 128,
            encoder_mode: EncoderMode::Learned,
            l1_layer: false,
            tcn_trainable: true,
            similarity: if head == HeadKind::Transformer { SimilarityMode::Asymmetric } else { SimilarityMode::Symmetric },
            concat_sensory: false,
            decoder_hidden: 256,
            t_dim: 512,
            t_heads: 8,
            t_query: 8,
            t_pos: 8,
            t_ff: 512,
            tf_heads: 8,
            tf_ff: 512,
            lstm_hidden: 512,
            esbn_key: 256,
        }
    }

    /// Spatial side after the conv stack.
    pub fn conv_out_side(&self) -> usize {
        self.image_size >> self.conv_layers
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Model(m));
        if self.seq_len < 2 {
            return bad(format!("sequence length {} leaves TCN without a context", self.seq_len));
        }
        if self.num_classes < 2 {
            return bad("at least two classes".into());
        }
        if self.conv_layers == 0 || !self.image_size.is_multiple_of(1 << self.conv_layers) || self.conv_out_side() == 0 {
            return bad(format!("image size {} does not halve cleanly {} times", self.image_size, self.conv_layers));
        }
        if self.concat_sensory && self.head != HeadKind::Corelnet {
            return bad("sensory concatenation applies to the CoRelNet MLP head only".into());
        }
        if self.head == HeadKind::Transformer && !self.embed_dim.is_multiple_of(self.tf_heads) {
            return bad("transformer heads must divide the embedding width".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    fn new<F: Real>(store: &mut ParamStore<F>, name: &str, din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add(format!("{name}.w"), &[din, dout], Init::FanIn(din), rng);
        let b = store.add(format!("{name}.b"), &[dout], Init::FanIn(din), rng);
        Self { w, b }
    }

    pub fn apply<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        let y = g.matmul(x, w)?;
        Ok(g.add(y, b)?)
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    fn new<F: Real>(store: &mut ParamStore<F>, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let gain = store.add(format!("{name}.gain"), &[dim], Init::Ones, rng);
        let bias = store.add(format!("{name}.bias"), &[dim], Init::Zeros, rng);
        Self { gain, bias }
    }

    fn apply<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let axis = g.shape(x).len() - 1;
        normalize(g, store, x, axis, LN_EPS, self.gain, self.bias)
    }
}

/// `(x − mean) / sqrt(var + eps) · gain + bias` along `axis`.
fn normalize<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    x: Var,
    axis: usize,
    eps: f64,
    gain: ParamId,
    bias: ParamId,
) -> Result<Var> {
    let mu = g.mean(x, axis)?;
    let centred = g.sub(x, mu)?;
    let var = g.variance(x, axis)?;
    let var = g.shift(var, eps)?;
    let inv = g.rsqrt(var)?;
    let unit = g.mul(centred, inv)?;
    let (gv, bv) = (g.param(store, gain), g.param(store, bias));
    let scaled = g.mul(unit, gv)?;
    Ok(g.add(scaled, bv)?)
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub convs: Vec<(ParamId, ParamId)>,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Encoder {
    pub fn params(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self.convs.iter().flat_map(|&(w, b)| [w, b]).collect();
        v.extend([self.fc1.w, self.fc1.b, self.fc2.w, self.fc2.b]);
        v
    }
}

#[derive(Clone, Debug)]
struct Attention {
    q: Linear,
    k: Option<Linear>,
    v: Linear,
    o: Linear,
    heads: usize,
    head_dim: usize,
}

impl Attention {
    fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        dim: usize,
        heads: usize,
        head_dim: usize,
        tied: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let inner = heads * head_dim;
        let q = Linear::new(store, &format!("{name}.q"), dim, inner, rng);
        let k = (!tied).then(|| Linear::new(store, &format!("{name}.k"), dim, inner, rng));
        let v = Linear::new(store, &format!("{name}.v"), dim, inner, rng);
        let o = Linear::new(store, &format!("{name}.o"), inner, dim, rng);
        Self { q, k, v, o, heads, head_dim }
    }

    /// Returns the output and the per-head pre-softmax scores `[B, T, T]`.
    fn apply<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Result<(Var, Vec<Var>)> {
        let q = self.q.apply(g, store, x)?;
        let k = match &self.k {
            Some(k) => k.apply(g, store, x)?,
            None => q,
        };
        let v = self.v.apply(g, store, x)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut scores = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.narrow(q, 2, h * self.head_dim, self.head_dim)?;
            let kh = if self.k.is_some() { g.narrow(k, 2, h * self.head_dim, self.head_dim)? } else { qh };
            let vh = g.narrow(v, 2, h * self.head_dim, self.head_dim)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, scale)?;
            scores.push(s);
            let a = g.softmax(s, 2)?;
            outs.push(g.matmul(a, vh)?);
        }
        let cat = g.concat(&outs, 2)?;
        Ok((self.o.apply(g, store, cat)?, scores))
    }
}

#[derive(Clone, Debug)]
struct Block {
    attn: Attention,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        dim: usize,
        heads: usize,
        head_dim: usize,
        ff: usize,
        tied: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            attn: Attention::new(store, &format!("{name}.attn"), dim, heads, head_dim, tied, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim, rng),
            ff1: Linear::new(store, &format!("{name}.ff1"), dim, ff, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), ff, dim, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim, rng),
        }
    }

    /// Post-norm residual block.
    fn apply<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Result<(Var, Vec<Var>)> {
        let (a, scores) = self.attn.apply(g, store, x)?;
        let x = g.add(x, a)?;
        let x = self.ln1.apply(g, store, x)?;
        let h = self.ff1.apply(g, store, x)?;
        let h = g.relu(h)?;
        let h = self.ff2.apply(g, store, h)?;
        let x = g.add(x, h)?;
        Ok((self.ln2.apply(g, store, x)?, scores))
    }
}

#[derive(Clone, Debug)]
enum Head {
    Corelnet { hidden: Linear, out: Linear },
    CorelnetT { rows: ParamId, pos: ParamId, pos_proj: ParamId, proj_b: ParamId, block: Block, out: Linear },
    Transformer { pos: ParamId, block: Block, out: Linear },
    Lstm { x: Linear, h: ParamId, out: Linear },
    Esbn { x: Linear, h: ParamId, key: Linear, gate: Linear, out: Linear, conf_gain: ParamId, conf_bias: ParamId },
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Var,
    /// Encodings after TCN, `[B, T, D]`.
    pub z: Var,
    /// Pre-softmax similarity `[B, T, T]` (relational heads).
    pub s: Option<Var>,
    /// Row-stochastic similarity `[B, T, T]` (relational heads).
    pub r: Option<Var>,
    /// Attention scores of the transformer heads, one `[B, T, T]` per head.
    pub attn_scores: Vec<Var>,
    /// ESBN memory weights at each step (`[B, 1, t]`, empty at step 0).
    pub retrieval: Vec<Var>,
    /// L1 penalty per example (when the L1 layer is active).
    pub l1: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Model<F: Real> {
    pub cfg: ModelConfig,
    pub store: ParamStore<F>,
    pub encoder: Encoder,
    l1: Option<Linear>,
    tcn: (ParamId, ParamId),
    sim: Option<(ParamId, ParamId)>,
    head: Head,
}

impl<F: Real> Model<F> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = cfg.conv_channels;
        let mut convs = Vec::with_capacity(cfg.conv_layers);
        for i in 0..cfg.conv_layers {
            let cin = if i == 0 { 3 } else { c };
            let fan = cin * 16;
            let w = store.add(format!("encoder.conv{i}.w"), &[c, cin, 4, 4], Init::FanIn(fan), &mut rng);
            let b = store.add(format!("encoder.conv{i}.b"), &[1, c, 1, 1], Init::FanIn(fan), &mut rng);
            convs.push((w, b));
        }
        let side = cfg.conv_out_side();
        let flat = c * side * side;
        let fc1 = Linear::new(&mut store, "encoder.fc1", flat, cfg.enc_hidden, &mut rng);
        let fc2 = Linear::new(&mut store, "encoder.fc2", cfg.enc_hidden, cfg.embed_dim, &mut rng);
        let encoder = Encoder { convs, fc1, fc2 };
        if cfg.encoder_mode == EncoderMode::Random {
            for id in encoder.params() {
                store.set_trainable(id, false);
            }
        }
        let d = cfg.embed_dim;
        let l1 = cfg.l1_layer.then(|| Linear::new(&mut store, "l1", d, d, &mut rng));
        let tg = store.add("tcn.gain", &[d], Init::Ones, &mut rng);
        let tb = store.add("tcn.bias", &[d], Init::Zeros, &mut rng);
        if !cfg.tcn_trainable {
            store.set_trainable(tg, false);
            store.set_trainable(tb, false);
        }
        let relational = matches!(cfg.head, HeadKind::Corelnet | HeadKind::CorelnetT);
        let sim = (relational && cfg.similarity == SimilarityMode::Asymmetric).then(|| {
            (
                store.add("sim.w1", &[d, d], Init::FanIn(d), &mut rng),
                store.add("sim.w2", &[d, d], Init::FanIn(d), &mut rng),
            )
        });
        let t = cfg.seq_len;
        let k = cfg.num_classes;
        let head = match cfg.head {
            HeadKind::Corelnet => {
                let din = t * t + if cfg.concat_sensory { t * d } else { 0 };
                Head::Corelnet {
                    hidden: Linear::new(&mut store, "decoder.hidden", din, cfg.decoder_hidden, &mut rng),
                    out: Linear::new(&mut store, "decoder.out", cfg.decoder_hidden, k, &mut rng),
                }
            }
            HeadKind::CorelnetT => {
                let fan = t + cfg.t_pos;
                Head::CorelnetT {
                    rows: store.add("rt.proj_rows", &[t, cfg.t_dim], Init::FanIn(fan), &mut rng),
                    pos: store.add("rt.pos", &[t, cfg.t_pos], Init::Uniform(1.0), &mut rng),
                    pos_proj: store.add("rt.proj_pos", &[cfg.t_pos, cfg.t_dim], Init::FanIn(fan), &mut rng),
                    proj_b: store.add("rt.proj_b", &[cfg.t_dim], Init::FanIn(fan), &mut rng),
                    block: Block::new(&mut store, "rt.block", cfg.t_dim, cfg.t_heads, cfg.t_query, cfg.t_ff, false, &mut rng),
                    out: Linear::new(&mut store, "rt.out", cfg.t_dim, k, &mut rng),
                }
            }
            HeadKind::Transformer => {
                let tied = cfg.similarity == SimilarityMode::Symmetric;
                Head::Transformer {
                    pos: store.add("tf.pos", &[t, d], Init::Uniform(1.0), &mut rng),
                    block: Block::new(&mut store, "tf.block", d, cfg.tf_heads, d / cfg.tf_heads, cfg.tf_ff, tied, &mut rng),
                    out: Linear::new(&mut store, "tf.out", d, k, &mut rng),
                }
            }
            HeadKind::Lstm => {
                let hdim = cfg.lstm_hidden;
                Head::Lstm {
                    x: Linear::new(&mut store, "lstm.x", d, 4 * hdim, &mut rng),
                    h: store.add("lstm.h", &[hdim, 4 * hdim], Init::FanIn(hdim), &mut rng),
                    out: Linear::new(&mut store, "lstm.out", hdim, k, &mut rng),
                }
            }
            HeadKind::Esbn => {
                let hdim = cfg.lstm_hidden;
                Head::Esbn {
                    x: Linear::new(&mut store, "esbn.x", cfg.esbn_key + 1, 4 * hdim, &mut rng),
                    h: store.add("esbn.h", &[hdim, 4 * hdim], Init::FanIn(hdim), &mut rng),
                    key: Linear::new(&mut store, "esbn.key", hdim, cfg.esbn_key, &mut rng),
                    gate: Linear::new(&mut store, "esbn.gate", hdim, 1, &mut rng),
                    out: Linear::new(&mut store, "esbn.out", hdim, k, &mut rng),
                    conf_gain: store.add("esbn.conf_gain", &[1], Init::Ones, &mut rng),
                    conf_bias: store.add("esbn.conf_bias", &[1], Init::Zeros, &mut rng),
                }
            }
        };
        Ok(Self { cfg, store, encoder, l1, tcn: (tg, tb), sim, head })
    }

    /// Same architecture with parameters copied into another precision.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            l1: self.l1,
            tcn: self.tcn,
            sim: self.sim,
            head: self.head.clone(),
        }
    }

    pub fn param_count(&self, trainable_only: bool) -> usize {
        self.store.count(trainable_only)
    }

    pub fn encoder_checksum(&self) -> u64 {
        self.store.checksum(self.encoder.params())
    }

    /// `q(x)` for a `[N, 3, H, W]` image batch, `[N, D]` out.
    pub fn encode_images(&self, g: &mut Graph<F>, images: Var) -> Result<Var> {
        let s = g.shape(images).to_vec();
        let side = self.cfg.image_size;
        if s.len() != 4 || s[1] != 3 || s[2] != side || s[3] != side {
            return Err(Error::Model(format!("images {s:?} do not match encoder input [N, 3, {side}, {side}]")));
        }
        let n = s[0];
        let mut x = images;
        for &(w, b) in &self.encoder.convs {
            let (wv, bv) = (g.param(&self.store, w), g.param(&self.store, b));
            let y = g.conv2d(x, wv, 2, 1)?;
            let y = g.add(y, bv)?;
            x = g.relu(y)?;
        }
        let flat = g.reshape(x, &[n, g.value(x).numel() / n])?;
        let h = self.encoder.fc1.apply(g, &self.store, flat)?;
        let h = g.relu(h)?;
        let z = self.encoder.fc2.apply(g, &self.store, h)?;
        Ok(g.relu(z)?)
    }

    /// Temporal context normalization of `[B, T, D]` over the `T` axis.
    pub fn tcn(&self, g: &mut Graph<F>, x: Var) -> Result<Var> {
        if g.shape(x).len() != 3 || g.shape(x)[1] < 2 {
            return Err(Error::Model(format!("TCN needs [B, T >= 2, D], got {:?}", g.shape(x))));
        }
        normalize(g, &self.store, x, 1, TCN_EPS, self.tcn.0, self.tcn.1)
    }

    /// Images `[B·T, 3, H, W]` to TCN-normalized encodings `[B, T, D]`, plus the
    /// per-example L1 penalty when the L1 layer is active.
    pub fn encode_sequence(&self, g: &mut Graph<F>, images: Var, batch: usize) -> Result<(Var, Option<Var>)> {
        let n = g.shape(images)[0];
        if batch == 0 || !n.is_multiple_of(batch) {
            return Err(Error::Model(format!("{n} images do not split into {batch} episodes")));
        }
        let t = n / batch;
        if t != self.cfg.seq_len {
            return Err(Error::Model(format!("episodes of length {t}, model built for {}", self.cfg.seq_len)));
        }
        let mut q = self.encode_images(g, images)?;
        let mut penalty = None;
        if let Some(l1) = &self.l1 {
            q = l1.apply(g, &self.store, q)?;
            let norm = g.l1_norm(q)?;
            penalty = Some(g.scale(norm, 1.0 / batch as f64)?);
        }
        let seq = g.reshape(q, &[batch, t, self.cfg.embed_dim])?;
        Ok((self.tcn(g, seq)?, penalty))
    }

    /// Pre-softmax scores `S` and row-stochastic `R` for `[B, T, D]` encodings.
    pub fn similarity(&self, g: &mut Graph<F>, z: Var) -> Result<(Var, Var)> {
        let s = match self.sim {
            None => {
                let zt = g.transpose(z)?;
                g.matmul(z, zt)?
            }
            Some((w1, w2)) => {
                let (a, b) = (g.param(&self.store, w1), g.param(&self.store, w2));
                let left = g.matmul(z, a)?;
                let right = g.matmul(z, b)?;
                let rt = g.transpose(right)?;
                g.matmul(left, rt)?
            }
        };
        let r = g.softmax(s, 2)?;
        Ok((s, r))
    }

    /// Logits from relational input `R` (and `Z` when sensory concatenation is on).
    pub fn relational_head(&self, g: &mut Graph<F>, r: Var, z: Var) -> Result<Var> {
        let sr = g.shape(r).to_vec();
        let t = self.cfg.seq_len;
        if sr.len() != 3 || sr[1] != t || sr[2] != t {
            return Err(Error::Model(format!("similarity {sr:?} does not match decoder width for T = {t}")));
        }
        let b = sr[0];
        match &self.head {
            Head::Corelnet { hidden, out } => {
                let mut x = g.reshape(r, &[b, t * t])?;
                if self.cfg.concat_sensory {
                    let zf = g.reshape(z, &[b, t * self.cfg.embed_dim])?;
                    x = g.concat(&[x, zf], 1)?;
                }
                let h = hidden.apply(g, &self.store, x)?;
                let h = g.relu(h)?;
                out.apply(g, &self.store, h)
            }
            Head::CorelnetT { rows, pos, pos_proj, proj_b, block, out } => {
                let (wr, pe, wp, pb) = (
                    g.param(&self.store, *rows),
                    g.param(&self.store, *pos),
                    g.param(&self.store, *pos_proj),
                    g.param(&self.store, *proj_b),
                );
                // [R_i ; p_i] · [W_r ; W_p] without materializing the concatenation
                let tok = g.matmul(r, wr)?;
                let pp = g.matmul(pe, wp)?;
                let tok = g.add(tok, pp)?;
                let tok = g.add(tok, pb)?;
                let (y, _) = block.apply(g, &self.store, tok)?;
                let pooled = g.mean(y, 1)?;
                let pooled = g.reshape(pooled, &[b, self.cfg.t_dim])?;
                out.apply(g, &self.store, pooled)
            }
            _ => Err(Error::Model(format!("{} is not a relational head", self.cfg.head))),
        }
    }

    /// Logits from already-encoded `[B, T, D]` inputs.
    pub fn head_forward(&self, g: &mut Graph<F>, z: Var) -> Result<Forward> {
        let b = g.shape(z)[0];
        let mut fw = Forward { logits: z, z, s: None, r: None, attn_scores: Vec::new(), retrieval: Vec::new(), l1: None };
        match &self.head {
            Head::Corelnet { .. } | Head::CorelnetT { .. } => {
                let (s, r) = self.similarity(g, z)?;
                fw.logits = self.relational_head(g, r, z)?;
                fw.s = Some(s);
                fw.r = Some(r);
            }
            Head::Transformer { pos, block, out } => {
                let pe = g.param(&self.store, *pos);
                let x = g.add(z, pe)?;
                let (y, scores) = block.apply(g, &self.store, x)?;
                let pooled = g.mean(y, 1)?;
                let pooled = g.reshape(pooled, &[b, self.cfg.embed_dim])?;
                fw.logits = out.apply(g, &self.store, pooled)?;
                fw.attn_scores = scores;
            }
            Head::Lstm { x, h, out } => {
                let hdim = self.cfg.lstm_hidden;
                let mut hs = g.constant(Tensor::zeros([b, hdim]));
                let mut cs = hs;
                for t in 0..self.cfg.seq_len {
                    let zt = g.narrow(z, 1, t, 1)?;
                    let zt = g.reshape(zt, &[b, self.cfg.embed_dim])?;
                    (hs, cs) = self.lstm_step(g, *x, *h, zt, hs, cs)?;
                }
                fw.logits = out.apply(g, &self.store, hs)?;
            }
            Head::Esbn { .. } => return self.esbn(g, z),
        }
        Ok(fw)
    }

    fn lstm_step(&self, g: &mut Graph<F>, wx: Linear, wh: ParamId, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hdim = self.cfg.lstm_hidden;
        let a = wx.apply(g, &self.store, x)?;
        let whv = g.param(&self.store, wh);
        let bh = g.matmul(h, whv)?;
        let gates = g.add(a, bh)?;
        let hc = g.lstm_cell(gates, c)?;
        Ok((g.narrow(hc, 1, 0, hdim)?, g.narrow(hc, 1, hdim, hdim)?))
    }

    fn esbn(&self, g: &mut Graph<F>, z: Var) -> Result<Forward> {
        let Head::Esbn { x, h, key, gate, out, conf_gain, conf_bias } = &self.head else { unreachable!() };
        let b = g.shape(z)[0];
        let (hdim, kdim, d) = (self.cfg.lstm_hidden, self.cfg.esbn_key, self.cfg.embed_dim);
        let (gain, bias) = (g.param(&self.store, *conf_gain), g.param(&self.store, *conf_bias));
        let mut hs = g.constant(Tensor::zeros([b, hdim]));
        let mut cs = hs;
        let mut keys: Vec<Var> = Vec::new();
        let mut values: Vec<Var> = Vec::new();
        let mut retrieval = Vec::new();
        let mut gate_v: Option<Var> = None;
        for t in 0..self.cfg.seq_len {
            let zt = g.narrow(z, 1, t, 1)?;
            let read = if t == 0 {
                g.constant(Tensor::zeros([b, kdim + 1]))
            } else {
                let mv = g.concat(&values, 1)?;
                let mk = g.concat(&keys, 1)?;
                let mvt = g.transpose(mv)?;
                let sims = g.matmul(zt, mvt)?;
                let w = g.softmax(sims, 2)?;
                retrieval.push(w);
                let conf = g.mul(sims, gain)?;
                let conf = g.add(conf, bias)?;
                let conf = g.sigmoid(conf)?;
                let conf = g.transpose(conf)?;
                let entries = g.concat(&[mk, conf], 2)?;
                let read = g.matmul(w, entries)?;
                let read = g.reshape(read, &[b, kdim + 1])?;
                match gate_v {
                    Some(gv) => g.mul(read, gv)?,
                    None => read,
                }
            };
            (hs, cs) = self.lstm_step(g, *x, *h, read, hs, cs)?;
            let kw = key.apply(g, &self.store, hs)?;
            let kw = g.relu(kw)?;
            let gl = gate.apply(g, &self.store, hs)?;
            gate_v = Some(g.sigmoid(gl)?);
            keys.push(g.reshape(kw, &[b, 1, kdim])?);
            values.push(g.reshape(zt, &[b, 1, d])?);
        }
        let logits = out.apply(g, &self.store, hs)?;
        Ok(Forward { logits, z, s: None, r: None, attn_scores: Vec::new(), retrieval, l1: None })
    }

    /// Full forward pass over `[B·T, 3, H, W]` images.
    pub fn forward(&self, g: &mut Graph<F>, images: Var, batch: usize) -> Result<Forward> {
        let (z, l1) = self.encode_sequence(g, images, batch)?;
        let mut fw = self.head_forward(g, z)?;
        fw.l1 = l1;
        Ok(fw)
    }

    /// Logits for a batch of episodes without recording a tape.
    pub fn predict(&self, episodes: &[crate::tasks::Episode]) -> Result<Tensor<F>> {
        let mut g = Graph::inference();
        let x = g.input(images_tensor(episodes)?);
        let fw = self.forward(&mut g, x, episodes.len())?;
        Ok(g.value(fw.logits).clone())
    }

    // ----- checkpoints ------------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        let cfg = serde_json::to_vec(&self.cfg)?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(self.store.len() as u32).to_le_bytes())?;
        for (_, p) in self.store.iter() {
            w.write_all(&(p.name.len() as u16).to_le_bytes())?;
            w.write_all(p.name.as_bytes())?;
            w.write_all(&[p.value.rank() as u8, u8::from(p.trainable)])?;
            for &d in p.value.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
        }
        for (_, p) in self.store.iter() {
            for v in p.value.data() {
                w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("file shorter than the magic bytes".into()))?;
        if &magic != CKPT_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let version = u16::from_le_bytes(read_n(r)?);
        if version != CKPT_VERSION {
            return Err(bad(format!("version {version}, expected {CKPT_VERSION}")));
        }
        let len = u32::from_le_bytes(read_n(r)?) as usize;
        let mut cfg = vec![0u8; len];
        r.read_exact(&mut cfg).map_err(|_| bad("truncated config".into()))?;
        let cfg: ModelConfig = serde_json::from_slice(&cfg)?;
        let mut model = Model::<F>::new(cfg, 0)?;
        let count = u32::from_le_bytes(read_n(r)?) as usize;
        if count != model.store.len() {
            return Err(bad(format!("{count} parameters stored, architecture has {}", model.store.len())));
        }
        let mut manifest = Vec::with_capacity(count);
        for (_, p) in model.store.iter() {
            let nlen = u16::from_le_bytes(read_n(r)?) as usize;
            let mut name = vec![0u8; nlen];
            r.read_exact(&mut name).map_err(|_| bad("truncated manifest".into()))?;
            let name = String::from_utf8(name).map_err(|_| bad("parameter name is not UTF-8".into()))?;
            let [rank, trainable] = read_n::<2>(r)?;
            let shape = (0..rank).map(|_| read_n(r).map(|b| u32::from_le_bytes(b) as usize)).collect::<Result<Vec<_>>>()?;
            if name != p.name || shape != p.value.shape() {
                return Err(bad(format!("manifest entry {name} {shape:?} does not match {} {:?}", p.name, p.value.shape())));
            }
            manifest.push(trainable == 1);
        }
        let ids: Vec<ParamId> = model.store.iter().map(|(id, _)| id).collect();
        for (id, trainable) in ids.into_iter().zip(manifest) {
            let p = model.store.get_mut(id);
            p.trainable = trainable;
            for v in p.value.data_mut() {
                *v = F::of(f32::from_le_bytes(read_n(r)?) as f64);
            }
        }
        Ok(model)
    }
}

const CKPT_MAGIC: &[u8; 8] = b"CRNLMODL";
const CKPT_VERSION: u16 = 1;

fn read_n<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("unexpected end of checkpoint".into()))?;
    Ok(b)
}

/// Stacks the images of equal-length episodes into `[B·T, 3, H, W]`.
pub fn images_tensor<F: Real>(episodes: &[crate::tasks::Episode]) -> Result<Tensor<F>> {
    let first = episodes.first().ok_or_else(|| Error::Model("empty batch".into()))?;
    let (t, side) = (first.len(), first.image_size());
    let mut data = Vec::with_capacity(episodes.len() * t * 3 * side * side);
    for e in episodes {
        if e.len() != t || e.image_size() != side {
            return Err(Error::Model("episodes in a batch must share length and image size".into()));
        }
        e.write_chw(&mut data);
    }
    Ok(Tensor::new([episodes.len() * t, 3, side, side], data)?)
}
