//! Miniature BERT-style encoder with three heads.
//!
//! Input embeddings are the elementwise sum of token, learned absolute
//! position, and segment tables. Each encoder layer is post-norm:
//! `x = LN(x + MHA(x))`, `x = LN(x + FFN(x))` with a GELU feed-forward.
//! Padding keys are excluded from attention, so outputs at real positions do
//! not depend on padding content.
//!
//! Heads: masked-token prediction over the vocabulary (every position),
//! sentence sentiment (the `[CLS]` position), and language id (every
//! position).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var, IGNORE_INDEX};
use crate::vocab::{CLS, MASK, NUM_SPECIALS, PAD, SEP};

pub const LAYER_NORM_EPS: f64 = 1e-12;
const INIT_STD: f64 = 0.02;
const PARAMS_PER_LAYER: usize = 16;
const EMBEDDING_PARAMS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub num_sentiments: usize,
    pub num_langtags: usize,
    pub mask_prob: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Default desk-scale shape: 32 positions, 32 wide, 2 layers of 2 heads.
    pub fn desk_scale(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            max_len: 32,
            d_model: 32,
            num_layers: 2,
            num_heads: 2,
            d_ff: 64,
            dropout_rate: 0.1,
            num_sentiments: 3,
            num_langtags: 5,
            mask_prob: 0.15,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.vocab_size <= NUM_SPECIALS {
            return fail(format!("vocab_size {} must exceed {NUM_SPECIALS}", self.vocab_size));
        }
        if self.max_len < 3 {
            return fail(format!("max_len {} must be at least 3", self.max_len));
        }
        if self.d_model == 0 || self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return fail(format!(
                "d_model {} must be a positive multiple of num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if self.d_ff == 0 || self.num_sentiments == 0 || self.num_langtags == 0 {
            return fail("d_ff and head sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} must lie in [0, 1)", self.dropout_rate));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return fail(format!("mask_prob {} must lie in [0, 1]", self.mask_prob));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }
}

/// Parameters that can be frozen together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    Embeddings,
    EncoderLayers,
    MlmHead,
    SentimentHead,
    LangidHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        Self::Embeddings,
        Self::EncoderLayers,
        Self::MlmHead,
        Self::SentimentHead,
        Self::LangidHead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Embeddings => "embeddings",
            Self::EncoderLayers => "encoder_layers",
            Self::MlmHead => "mlm_head",
            Self::SentimentHead => "sentiment_head",
            Self::LangidHead => "langid_head",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter group {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Parameter names, groups, shapes and initializers in storage order.
fn layout(cfg: &ModelConfig) -> Vec<(String, ParamGroup, Vec<usize>, Init)> {
    use Init::*;
    use ParamGroup::*;
    let (d, v) = (cfg.d_model, cfg.vocab_size);
    let mut out = vec![
        ("embeddings.token".to_string(), Embeddings, vec![v, d], Normal),
        ("embeddings.position".to_string(), Embeddings, vec![cfg.max_len, d], Normal),
        ("embeddings.segment".to_string(), Embeddings, vec![2, d], Normal),
    ];
    for l in 0..cfg.num_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        for proj in ["q", "k", "v", "o"] {
            out.push((p(&format!("attn.{proj}.weight")), EncoderLayers, vec![d, d], Normal));
            out.push((p(&format!("attn.{proj}.bias")), EncoderLayers, vec![d], Zeros));
        }
        out.push((p("ln1.gain"), EncoderLayers, vec![d], Ones));
        out.push((p("ln1.bias"), EncoderLayers, vec![d], Zeros));
        out.push((p("ff1.weight"), EncoderLayers, vec![d, cfg.d_ff], Normal));
        out.push((p("ff1.bias"), EncoderLayers, vec![cfg.d_ff], Zeros));
        out.push((p("ff2.weight"), EncoderLayers, vec![cfg.d_ff, d], Normal));
        out.push((p("ff2.bias"), EncoderLayers, vec![d], Zeros));
        out.push((p("ln2.gain"), EncoderLayers, vec![d], Ones));
        out.push((p("ln2.bias"), EncoderLayers, vec![d], Zeros));
    }
    for (name, group, classes) in [
        ("mlm", MlmHead, v),
        ("sentiment", SentimentHead, cfg.num_sentiments),
        ("langid", LangidHead, cfg.num_langtags),
    ] {
        out.push((format!("{name}.weight"), group, vec![d, classes], Normal));
        out.push((format!("{name}.bias"), group, vec![classes], Zeros));
    }
    out
}

/// All trainable state of the model plus its freezing policy.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    params: Vec<Param>,
    frozen: BTreeSet<ParamGroup>,
}

impl ModelWeights {
    /// Seeded N(0, 0.02) matrices, zero biases, unit layer-norm gains.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let params = layout(&config)
            .into_iter()
            .map(|(name, group, shape, init)| {
                let mut value = Tensor::zeros(shape);
                match init {
                    Init::Normal => value.data_mut().iter_mut().for_each(|v| *v = normal.sample(&mut rng)),
                    Init::Ones => value.data_mut().fill(1.0),
                    Init::Zeros => {}
                }
                Param { name, group, value }
            })
            .collect();
        Ok(Self {
            config,
            params,
            frozen: BTreeSet::new(),
        })
    }

    /// Every parameter zero except layer-norm gains, which are one.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = layout(&config)
            .into_iter()
            .map(|(name, group, shape, init)| {
                let value = match init {
                    Init::Ones => Tensor::full(shape, 1.0),
                    _ => Tensor::zeros(shape),
                };
                Param { name, group, value }
            })
            .collect();
        Ok(Self {
            config,
            params,
            frozen: BTreeSet::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Replaces the frozen set.
    pub fn set_frozen(&mut self, groups: &[ParamGroup]) {
        self.frozen = groups.iter().copied().collect();
    }

    /// [`ModelWeights::set_frozen`] from group names.
    pub fn set_frozen_by_name<S: AsRef<str>>(&mut self, names: &[S]) -> Result<()> {
        let groups = names
            .iter()
            .map(|n| n.as_ref().parse())
            .collect::<Result<Vec<ParamGroup>>>()?;
        self.set_frozen(&groups);
        Ok(())
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen.contains(&group)
    }

    pub fn frozen_groups(&self) -> impl Iterator<Item = ParamGroup> + '_ {
        self.frozen.iter().copied()
    }

    /// Replaces the three task heads with freshly initialized ones drawn
    /// from `seed`.
    pub fn reinit_heads(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for p in &mut self.params {
            if matches!(p.group, ParamGroup::Embeddings | ParamGroup::EncoderLayers) {
                continue;
            }
            let is_bias = p.name.ends_with(".bias");
            for v in p.value.data_mut() {
                *v = if is_bias { 0.0 } else { normal.sample(&mut rng) };
            }
        }
    }

    /// Raw little-endian payload of every parameter in `group`.
    pub fn group_bytes(&self, group: ParamGroup) -> Vec<u8> {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .flat_map(|p| p.value.data().iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }
}

/// Parameters placed on a graph. Frozen groups become constants.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    num_layers: usize,
}

struct LayerVars {
    q: (Var, Var),
    k: (Var, Var),
    v: (Var, Var),
    o: (Var, Var),
    ln1: (Var, Var),
    ff1: (Var, Var),
    ff2: (Var, Var),
    ln2: (Var, Var),
}

impl Bound {
    /// Binds every parameter. With `trainable == false` nothing gets a
    /// gradient (inference).
    pub fn new(graph: &mut Graph, weights: &ModelWeights, trainable: bool) -> Self {
        let vars = weights
            .params
            .iter()
            .map(|p| {
                let grad = trainable && !weights.is_frozen(p.group);
                graph.leaf(p.value.clone(), grad)
            })
            .collect();
        Self {
            vars,
            num_layers: weights.config.num_layers,
        }
    }

    /// Vars in storage order, parallel to [`ModelWeights::params`].
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn token_emb(&self) -> Var {
        self.vars[0]
    }

    fn position_emb(&self) -> Var {
        self.vars[1]
    }

    fn segment_emb(&self) -> Var {
        self.vars[2]
    }

    fn layer(&self, l: usize) -> LayerVars {
        let b = EMBEDDING_PARAMS + PARAMS_PER_LAYER * l;
        let pair = |i: usize| (self.vars[b + i], self.vars[b + i + 1]);
        LayerVars {
            q: pair(0),
            k: pair(2),
            v: pair(4),
            o: pair(6),
            ln1: pair(8),
            ff1: pair(10),
            ff2: pair(12),
            ln2: pair(14),
        }
    }

    fn head(&self, idx: usize) -> (Var, Var) {
        let b = EMBEDDING_PARAMS + PARAMS_PER_LAYER * self.num_layers + 2 * idx;
        (self.vars[b], self.vars[b + 1])
    }
}

/// Inverted dropout; `Off` for evaluation.
pub enum Dropout<'a> {
    Off,
    On { rate: f64, rng: &'a mut dyn RngCore },
}

impl Dropout<'_> {
    fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Dropout::On { rate, rng } if *rate > 0.0 => {
                let keep = 1.0 - *rate;
                let mask = (0..g.value(x).numel())
                    .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
                    .collect();
                g.mul_const(x, mask)
            }
            _ => Ok(x),
        }
    }
}

fn affine(g: &mut Graph, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Sum of token, position and segment embeddings, one row per position.
pub fn embed(
    g: &mut Graph,
    bound: &Bound,
    cfg: &ModelConfig,
    ids: &[usize],
    segment_ids: &[usize],
) -> Result<Var> {
    if ids.len() != segment_ids.len() || ids.is_empty() || ids.len() > cfg.max_len {
        return Err(Error::Contract(format!(
            "{} ids and {} segments for max_len {}",
            ids.len(),
            segment_ids.len(),
            cfg.max_len
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(Error::Contract(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    if segment_ids.iter().any(|&s| s > 1) {
        return Err(Error::Contract("segment ids must be 0 or 1".into()));
    }
    let positions: Vec<usize> = (0..ids.len()).collect();
    let tok = g.gather_rows(bound.token_emb(), ids)?;
    let pos = g.gather_rows(bound.position_emb(), &positions)?;
    let seg = g.gather_rows(bound.segment_emb(), segment_ids)?;
    let sum = g.add(tok, pos)?;
    g.add(sum, seg)
}

/// Runs the encoder stack over `hidden` (`len x d_model`).
pub fn encoder_forward(
    g: &mut Graph,
    bound: &Bound,
    cfg: &ModelConfig,
    hidden: Var,
    attention_mask: &[u8],
    dropout: &mut Dropout<'_>,
) -> Result<Var> {
    let keep: Vec<bool> = attention_mask.iter().map(|&m| m == 1).collect();
    let head_dim = cfg.head_dim();
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut x = hidden;
    for l in 0..cfg.num_layers {
        let lv = bound.layer(l);
        let q = affine(g, x, lv.q)?;
        let k = affine(g, x, lv.k)?;
        let v = affine(g, x, lv.v)?;
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let qh = g.slice_cols(q, h * head_dim, head_dim)?;
            let kh = g.slice_cols(k, h * head_dim, head_dim)?;
            let vh = g.slice_cols(v, h * head_dim, head_dim)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let probs = g.masked_softmax(scores, &keep)?;
            let probs = dropout.apply(g, probs)?;
            heads.push(g.matmul(probs, vh)?);
        }
        let merged = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        let attn = affine(g, merged, lv.o)?;
        let res = g.add(x, attn)?;
        x = g.layer_norm(res, lv.ln1.0, lv.ln1.1, LAYER_NORM_EPS)?;

        let inner = affine(g, x, lv.ff1)?;
        let inner = g.gelu(inner)?;
        let ff = affine(g, inner, lv.ff2)?;
        let ff = dropout.apply(g, ff)?;
        let res = g.add(x, ff)?;
        x = g.layer_norm(res, lv.ln2.0, lv.ln2.1, LAYER_NORM_EPS)?;
    }
    Ok(x)
}

fn encode_sequence(
    g: &mut Graph,
    bound: &Bound,
    cfg: &ModelConfig,
    ids: &[usize],
    attention_mask: &[u8],
    dropout: &mut Dropout<'_>,
) -> Result<Var> {
    if attention_mask.len() != ids.len() {
        return Err(Error::Contract("attention mask length differs from ids".into()));
    }
    let segments = vec![0; ids.len()];
    let h = embed(g, bound, cfg, ids, &segments)?;
    encoder_forward(g, bound, cfg, h, attention_mask, dropout)
}

/// Sentiment logits (`1 x num_sentiments`, from `[CLS]`) and language-id
/// logits (`len x num_langtags`) from one shared encoder pass.
pub fn forward_multitask(
    g: &mut Graph,
    bound: &Bound,
    cfg: &ModelConfig,
    ids: &[usize],
    attention_mask: &[u8],
    dropout: &mut Dropout<'_>,
) -> Result<(Var, Var)> {
    let h = encode_sequence(g, bound, cfg, ids, attention_mask, dropout)?;
    let cls = g.gather_rows(h, &[0])?;
    let sentiment = affine(g, cls, bound.head(1))?;
    let langid = affine(g, h, bound.head(2))?;
    Ok((sentiment, langid))
}

/// Vocabulary logits (`len x vocab_size`) at every position.
pub fn forward_mlm(
    g: &mut Graph,
    bound: &Bound,
    cfg: &ModelConfig,
    ids: &[usize],
    attention_mask: &[u8],
    dropout: &mut Dropout<'_>,
) -> Result<Var> {
    let h = encode_sequence(g, bound, cfg, ids, attention_mask, dropout)?;
    affine(g, h, bound.head(0))
}

/// Branch probabilities for selected positions; the remainder keeps the
/// original token.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corruption {
    pub to_mask: f64,
    pub to_random: f64,
}

impl Default for Corruption {
    fn default() -> Self {
        Self {
            to_mask: 0.8,
            to_random: 0.1,
        }
    }
}

/// Selects each content position with probability `mask_prob` and corrupts
/// it per [`Corruption`]. Labels hold the original id at selected positions
/// and [`IGNORE_INDEX`] elsewhere. `[CLS]`, `[SEP]` and padding are never
/// selected.
pub fn mask_tokens<R: Rng + ?Sized>(
    ids: &[usize],
    vocab_size: usize,
    mask_prob: f64,
    corruption: Corruption,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let mut corrupted = ids.to_vec();
    let mut labels = vec![IGNORE_INDEX; ids.len()];
    for (i, &id) in ids.iter().enumerate() {
        if matches!(id, PAD | CLS | SEP) || !rng.random_bool(mask_prob) {
            continue;
        }
        labels[i] = id;
        let branch: f64 = rng.random();
        if branch < corruption.to_mask {
            corrupted[i] = MASK;
        } else if branch < corruption.to_mask + corruption.to_random && vocab_size > NUM_SPECIALS {
            corrupted[i] = rng.random_range(NUM_SPECIALS..vocab_size);
        }
    }
    (corrupted, labels)
}

/// Argmax over a row; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Model decisions for one sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub sentiment: usize,
    /// One language id per real position, `[CLS]` and `[SEP]` included.
    pub langids: Vec<usize>,
}

/// Inference over encoded sequences, without dropout.
pub fn predict_batch(weights: &ModelWeights, inputs: &[(Vec<usize>, Vec<u8>)]) -> Result<Vec<Prediction>> {
    let cfg = weights.config();
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(64) {
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, weights, false);
        for (ids, mask) in chunk {
            let n = mask.iter().filter(|&&m| m == 1).count();
            let (s, l) = forward_multitask(&mut g, &bound, cfg, &ids[..n], &mask[..n], &mut Dropout::Off)?;
            let lt = g.value(l);
            out.push(Prediction {
                sentiment: argmax(g.value(s).data()),
                langids: (0..n).map(|i| argmax(lt.row(i))).collect(),
            });
        }
    }
    Ok(out)
}

const MAGIC: &[u8; 4] = b"CMT1";

/// Little-endian checkpoint: magic, config as eleven `u64` fields (floats as
/// their bit patterns), parameter count, then per parameter `u32` name
/// length, name, `u32` rank, `u64` dims and `f64` values.
pub fn save_checkpoint(weights: &ModelWeights) -> Vec<u8> {
    let c = &weights.config;
    let mut out = Vec::with_capacity(64 + weights.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    for field in [
        c.vocab_size as u64,
        c.max_len as u64,
        c.d_model as u64,
        c.num_layers as u64,
        c.num_heads as u64,
        c.d_ff as u64,
        c.dropout_rate.to_bits(),
        c.num_sentiments as u64,
        c.num_langtags as u64,
        c.mask_prob.to_bits(),
        c.seed,
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    out.extend_from_slice(&(weights.params.len() as u32).to_le_bytes());
    for p in &weights.params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {}", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("field overflows usize".into()))
    }
}

/// Parses a checkpoint and checks every parameter against the layout the
/// stored config implies.
pub fn load_checkpoint(bytes: &[u8]) -> Result<ModelWeights> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("missing CMT1 magic".into()));
    }
    let config = ModelConfig {
        vocab_size: r.usize()?,
        max_len: r.usize()?,
        d_model: r.usize()?,
        num_layers: r.usize()?,
        num_heads: r.usize()?,
        d_ff: r.usize()?,
        dropout_rate: f64::from_bits(r.u64()?),
        num_sentiments: r.usize()?,
        num_langtags: r.usize()?,
        mask_prob: f64::from_bits(r.u64()?),
        seed: r.u64()?,
    };
    config.validate()?;
    let expected = layout(&config);
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{count} parameters, config implies {}",
            expected.len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for (name, group, shape, _) in expected {
        let len = r.u32()? as usize;
        let got = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?;
        if got != name {
            return Err(Error::Checkpoint(format!("expected parameter {name}, found {got}")));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        if dims != shape {
            return Err(Error::Checkpoint(format!("{name}: shape {dims:?}, expected {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push(Param {
            name,
            group,
            value: Tensor::new(shape, data)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ModelWeights {
        config,
        params,
        frozen: BTreeSet::new(),
    })
}

impl ModelWeights {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, save_checkpoint(self))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        load_checkpoint(&std::fs::read(path)?)
    }
}
