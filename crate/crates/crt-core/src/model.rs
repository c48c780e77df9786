//! The cross-domain reconstruction network: per-domain convolutional patch
//! embedders, CLS/domain/position embeddings, a shared transformer encoder,
//! a light decoder that fills dropped positions with learnable decode
//! tokens, projection heads for the instance-discrimination term, and the
//! fine-tuning classifier.
//!
//! Forward passes are batched: token rows of all samples are stacked into
//! one (R, D) matrix so linear algebra runs as large matrix products, and
//! attention is evaluated on per-sample, per-head slices. Samples may have
//! different token counts; nothing assumes a rectangular batch.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{CrtError, Result};
use crate::numerics::{randn, Graph, NodeId};
use crate::sequencing::{Domain, DropPlan, PatchSet};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;
/// Embedding tables (CLS, domain, position, decode token) start at this
/// scale: visible next to unit-variance activations without dominating.
const EMBED_STD: f64 = 0.1;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    /// Drop the phase block entirely: 2 CLS tokens, no phase patches.
    NoPhase,
    TimeOnly,
    FreqOnly,
    /// Encode time, reconstruct the frequency blocks.
    T2f,
    /// Encode frequency, reconstruct the time block.
    F2t,
}

const ALL_DOMAINS: [Domain; 3] = [Domain::Time, Domain::Magnitude, Domain::Phase];
const FREQ: [Domain; 2] = [Domain::Magnitude, Domain::Phase];
const TIME: [Domain; 1] = [Domain::Time];
const TIME_MAG: [Domain; 2] = [Domain::Time, Domain::Magnitude];

impl AblationMode {
    /// Domains whose patches (and CLS token) enter the encoder.
    pub fn encode_domains(self) -> &'static [Domain] {
        match self {
            AblationMode::Full => &ALL_DOMAINS,
            AblationMode::NoPhase => &TIME_MAG,
            AblationMode::TimeOnly | AblationMode::T2f => &TIME,
            AblationMode::FreqOnly | AblationMode::F2t => &FREQ,
        }
    }

    /// Domains the decoder is scored on.
    pub fn recon_domains(self) -> &'static [Domain] {
        match self {
            AblationMode::Full => &ALL_DOMAINS,
            AblationMode::NoPhase => &TIME_MAG,
            AblationMode::TimeOnly | AblationMode::F2t => &TIME,
            AblationMode::FreqOnly | AblationMode::T2f => &FREQ,
        }
    }

    pub fn encodes(self, d: Domain) -> bool {
        self.encode_domains().contains(&d)
    }

    pub fn reconstructs(self, d: Domain) -> bool {
        self.recon_domains().contains(&d)
    }

    /// Domains needing any parameters at all under this mode.
    fn active_domains(self) -> Vec<Domain> {
        ALL_DOMAINS
            .into_iter()
            .filter(|&d| self.encodes(d) || self.reconstructs(d))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub cnn_width: usize,
    pub cnn_blocks: usize,
    pub mlp_ratio: f64,
    pub patch_len: usize,
    pub channels: usize,
    /// Capacity of the position table; patch indices must stay below it.
    pub n_max: usize,
    pub num_classes: usize,
    pub ablation: AblationMode,
}

impl ModelConfig {
    /// Small configuration that trains in minutes on one core.
    pub fn desk(patch_len: usize, channels: usize, n_max: usize, num_classes: usize) -> Self {
        ModelConfig {
            dim: 64,
            encoder_layers: 4,
            decoder_layers: 2,
            heads: 4,
            cnn_width: 16,
            cnn_blocks: 2,
            mlp_ratio: 2.0,
            patch_len,
            channels,
            n_max,
            num_classes,
            ablation: AblationMode::Full,
        }
    }

    /// Published-scale configuration; far outside a single-core budget.
    pub fn paper(patch_len: usize, channels: usize, n_max: usize, num_classes: usize) -> Self {
        ModelConfig {
            dim: 256,
            encoder_layers: 6,
            decoder_layers: 2,
            heads: 8,
            cnn_width: 64,
            cnn_blocks: 8,
            mlp_ratio: 4.0,
            patch_len,
            channels,
            n_max,
            num_classes,
            ablation: AblationMode::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            problems.push(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.decoder_layers > self.encoder_layers {
            problems.push(format!(
                "decoder depth {} exceeds encoder depth {}",
                self.decoder_layers, self.encoder_layers
            ));
        }
        if self.mlp_ratio <= 0.0 || !self.mlp_ratio.is_finite() {
            problems.push(format!("mlp_ratio {} must be positive", self.mlp_ratio));
        }
        if self.patch_len == 0 || self.channels == 0 || self.n_max == 0 || self.cnn_width == 0 {
            problems.push("patch_len, channels, n_max, cnn_width must be positive".into());
        }
        if self.num_classes < 2 {
            problems.push(format!("num_classes {} < 2", self.num_classes));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CrtError::Config(problems.join("; ")))
        }
    }

    fn mlp_hidden(&self) -> usize {
        ((self.dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

fn domain_key(d: Domain) -> &'static str {
    match d {
        Domain::Time => "time",
        Domain::Magnitude => "mag",
        Domain::Phase => "phase",
    }
}

/// Named parameter tensors in a fixed construction order; the order is the
/// optimizer-state and checkpoint contract.
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    fn push(&mut self, name: String, t: Tensor) {
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| CrtError::InvalidArgument {
            op: "param_lookup",
            reason: format!("no parameter named {name}"),
        })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.tensors[self.index_of(name)?])
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }
}

/// Graph leaf ids for every parameter, in store order.
pub struct BoundParams {
    pub ids: Vec<NodeId>,
}

pub struct CrtModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

/// Fan-balanced normal std: keeps activation variance roughly unit through
/// matrix products (rank 2: in×out) and convolutions (rank 3: out×in×k).
fn fan_std(shape: &[usize]) -> f64 {
    match shape {
        [fin, fout] => (2.0 / (fin + fout) as f64).sqrt(),
        [co, ci, k] => (2.0 / ((ci * k) + (co * k)) as f64).sqrt(),
        _ => EMBED_STD,
    }
}

fn init_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = std * randn(rng);
    }
    t
}

impl CrtModel {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let d = cfg.dim;
        let norm = |p: &mut ParamStore, name: String, shape: Vec<usize>, rng: &mut ChaCha8Rng| {
            let std = if name.starts_with("embed.") || name == "dec.token" {
                EMBED_STD
            } else {
                fan_std(&shape)
            };
            p.push(name, init_tensor(rng, shape, std));
        };
        let zero = |p: &mut ParamStore, name: String, shape: Vec<usize>| {
            p.push(name, Tensor::zeros(shape));
        };
        let one = |p: &mut ParamStore, name: String, shape: Vec<usize>| {
            let mut t = Tensor::zeros(shape);
            t.data_mut().fill(1.0);
            p.push(name, t);
        };

        for dom in cfg.ablation.encode_domains() {
            let k = domain_key(*dom);
            norm(&mut p, format!("cnn.{k}.stem.w"), vec![cfg.cnn_width, cfg.channels, 3], &mut rng);
            zero(&mut p, format!("cnn.{k}.stem.b"), vec![cfg.cnn_width]);
            for b in 0..cfg.cnn_blocks {
                norm(&mut p, format!("cnn.{k}.block{b}.conv1.w"), vec![cfg.cnn_width, cfg.cnn_width, 3], &mut rng);
                zero(&mut p, format!("cnn.{k}.block{b}.conv1.b"), vec![cfg.cnn_width]);
                norm(&mut p, format!("cnn.{k}.block{b}.conv2.w"), vec![cfg.cnn_width, cfg.cnn_width, 3], &mut rng);
                zero(&mut p, format!("cnn.{k}.block{b}.conv2.b"), vec![cfg.cnn_width]);
            }
            norm(&mut p, format!("cnn.{k}.proj.w"), vec![cfg.cnn_width, d], &mut rng);
            zero(&mut p, format!("cnn.{k}.proj.b"), vec![d]);
            norm(&mut p, format!("embed.cls.{k}"), vec![1, d], &mut rng);
        }
        for dom in cfg.ablation.active_domains() {
            norm(&mut p, format!("embed.domain.{}", domain_key(dom)), vec![1, d], &mut rng);
        }
        norm(&mut p, "embed.pos".into(), vec![cfg.n_max + 3, d], &mut rng);

        let block = |p: &mut ParamStore, prefix: String, rng: &mut ChaCha8Rng| {
            one(p, format!("{prefix}.ln1.g"), vec![d]);
            zero(p, format!("{prefix}.ln1.b"), vec![d]);
            for w in ["wq", "wk", "wv", "wo"] {
                norm(p, format!("{prefix}.attn.{w}"), vec![d, d], rng);
            }
            for b in ["bq", "bk", "bv", "bo"] {
                zero(p, format!("{prefix}.attn.{b}"), vec![d]);
            }
            one(p, format!("{prefix}.ln2.g"), vec![d]);
            zero(p, format!("{prefix}.ln2.b"), vec![d]);
            norm(p, format!("{prefix}.mlp.w1"), vec![d, cfg.mlp_hidden()], rng);
            zero(p, format!("{prefix}.mlp.b1"), vec![cfg.mlp_hidden()]);
            norm(p, format!("{prefix}.mlp.w2"), vec![cfg.mlp_hidden(), d], rng);
            zero(p, format!("{prefix}.mlp.b2"), vec![d]);
        };
        for i in 0..cfg.encoder_layers {
            block(&mut p, format!("enc.{i}"), &mut rng);
        }
        one(&mut p, "enc.ln_f.g".into(), vec![d]);
        zero(&mut p, "enc.ln_f.b".into(), vec![d]);

        norm(&mut p, "dec.adapter.w".into(), vec![d, d], &mut rng);
        zero(&mut p, "dec.adapter.b".into(), vec![d]);
        norm(&mut p, "dec.token".into(), vec![1, d], &mut rng);
        for i in 0..cfg.decoder_layers {
            block(&mut p, format!("dec.{i}"), &mut rng);
        }
        one(&mut p, "dec.ln_f.g".into(), vec![d]);
        zero(&mut p, "dec.ln_f.b".into(), vec![d]);
        norm(&mut p, "dec.head.w".into(), vec![d, cfg.patch_len * cfg.channels], &mut rng);
        zero(&mut p, "dec.head.b".into(), vec![cfg.patch_len * cfg.channels]);

        for head in ["p1", "p2"] {
            norm(&mut p, format!("idc.{head}.w1"), vec![d, d], &mut rng);
            zero(&mut p, format!("idc.{head}.b1"), vec![d]);
            norm(&mut p, format!("idc.{head}.w2"), vec![d, d], &mut rng);
            zero(&mut p, format!("idc.{head}.b2"), vec![d]);
        }
        norm(&mut p, "clf.w1".into(), vec![d, d], &mut rng);
        zero(&mut p, "clf.b1".into(), vec![d]);
        norm(&mut p, "clf.w2".into(), vec![d, cfg.num_classes], &mut rng);
        zero(&mut p, "clf.b2".into(), vec![cfg.num_classes]);

        Ok(CrtModel { cfg, params: p })
    }

    /// Registers every parameter as a graph leaf. Pass `needs_grad = false`
    /// for inference-only passes to skip gradient bookkeeping.
    pub fn bind(&self, g: &mut Graph, needs_grad: bool) -> Result<BoundParams> {
        let ids = self
            .params
            .tensors()
            .iter()
            .map(|t| g.leaf(t.clone(), needs_grad))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams { ids })
    }

    /// Wraps externally created leaf ids (one per parameter, store order);
    /// the finite-difference audit drives forwards through this.
    pub fn bind_ids(&self, ids: &[NodeId]) -> Result<BoundParams> {
        if ids.len() != self.params.len() {
            return Err(CrtError::InvalidArgument {
                op: "bind_ids",
                reason: format!("{} ids for {} parameters", ids.len(), self.params.len()),
            });
        }
        Ok(BoundParams { ids: ids.to_vec() })
    }

    fn p(&self, bp: &BoundParams, name: &str) -> Result<NodeId> {
        Ok(bp.ids[self.params.index_of(name)?])
    }
}

/// Row bookkeeping for one sample inside the stacked token matrix.
#[derive(Clone, Debug)]
pub struct TokenMeta {
    /// CLS rows come first, one per encoded domain, in Time/Mag/Phase order.
    pub cls_domains: Vec<Domain>,
    /// Original patch index per following row, in the order given.
    pub positions: Vec<usize>,
    pub domains: Vec<Domain>,
}

impl TokenMeta {
    pub fn rows(&self) -> usize {
        self.cls_domains.len() + self.positions.len()
    }
}

pub struct Embedded {
    /// (R, D): all samples' token rows, CLS first within each sample.
    pub tokens: NodeId,
    pub meta: Vec<TokenMeta>,
    /// (B, D): per-sample mean of patch token embeddings, CLS excluded;
    /// the second view for the instance-discrimination term.
    pub pooled: NodeId,
}

pub struct Encoded {
    /// (R, D) final token states.
    pub tokens: NodeId,
    pub meta: Vec<TokenMeta>,
    /// (B, D): mean of the CLS token states per sample.
    pub reprs: NodeId,
}

pub struct Decoded {
    /// (M, D·patch values per row): reconstruction for every covered patch.
    pub rows: NodeId,
    /// (sample, patch index, domain) per row of `rows`.
    pub coverage: Vec<(usize, usize, Domain)>,
}

impl Decoded {
    /// Rows that the current ablation scores (reconstruction domains only).
    pub fn scored_indices(&self, mode: AblationMode) -> Vec<usize> {
        (0..self.coverage.len()).filter(|&i| mode.reconstructs(self.coverage[i].2)).collect()
    }
}

impl CrtModel {
    /// Runs each domain's CNN over that domain's patches across the whole
    /// batch, assembles per-sample token rows (CLS tokens first, then
    /// patches in the order given), and adds domain-type and position
    /// embeddings. Patches of domains outside the ablation are skipped.
    pub fn embed_patches(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        samples: &[&PatchSet],
    ) -> Result<Embedded> {
        let cfg = &self.cfg;
        if samples.is_empty() {
            return Err(CrtError::InvalidArgument { op: "embed_patches", reason: "empty batch".into() });
        }
        let enc_doms = cfg.ablation.encode_domains();
        // bucket patch values per domain, remembering (sample, row slot)
        let mut bucket_vals: HashMap<Domain, Vec<f64>> = HashMap::new();
        let mut bucket_rows: HashMap<Domain, Vec<(usize, usize)>> = HashMap::new();
        let mut meta = Vec::with_capacity(samples.len());
        for (s, ps) in samples.iter().enumerate() {
            if ps.patch_len != cfg.patch_len || ps.channels != cfg.channels {
                return Err(CrtError::InvalidArgument {
                    op: "embed_patches",
                    reason: format!(
                        "patch geometry ({}, {}) does not match model ({}, {})",
                        ps.channels, ps.patch_len, cfg.channels, cfg.patch_len
                    ),
                });
            }
            let mut positions = Vec::new();
            let mut domains = Vec::new();
            for patch in &ps.patches {
                if !cfg.ablation.encodes(patch.domain) {
                    continue;
                }
                if patch.index >= cfg.n_max {
                    return Err(CrtError::InvalidArgument {
                        op: "embed_patches",
                        reason: format!("patch index {} exceeds n_max {}", patch.index, cfg.n_max),
                    });
                }
                let slot = positions.len();
                positions.push(patch.index);
                domains.push(patch.domain);
                bucket_vals.entry(patch.domain).or_default().extend_from_slice(patch.values.data());
                bucket_rows.entry(patch.domain).or_default().push((s, slot));
            }
            if positions.is_empty() {
                return Err(CrtError::InvalidArgument {
                    op: "embed_patches",
                    reason: format!("sample {s} has no encodable patches"),
                });
            }
            meta.push(TokenMeta { cls_domains: enc_doms.to_vec(), positions, domains });
        }

        // per-domain CNN over (Bd, channels, P)
        let mut source_blocks = Vec::new();
        let mut source_offsets: HashMap<Domain, usize> = HashMap::new();
        let mut cls_sources: HashMap<Domain, usize> = HashMap::new();
        for (i, dom) in enc_doms.iter().enumerate() {
            let cls = self.p(bp, &format!("embed.cls.{}", domain_key(*dom)))?;
            source_blocks.push(cls);
            cls_sources.insert(*dom, i);
        }
        let mut next_offset = enc_doms.len();
        for dom in enc_doms {
            let Some(vals) = bucket_vals.get(dom) else { continue };
            let count = bucket_rows[dom].len();
            let input = Tensor::new(vec![count, cfg.channels, cfg.patch_len], vals.clone())?;
            let x = g.leaf(input, false)?;
            let out = self.cnn_forward(g, bp, domain_key(*dom), x)?;
            source_blocks.push(out);
            source_offsets.insert(*dom, next_offset);
            next_offset += 1;
        }
        let sources = g.concat(&source_blocks, 0)?;

        // gather the stacked sources into per-sample token order
        let mut block_row_base = vec![0usize; source_blocks.len()];
        {
            let mut acc = 0usize;
            for (i, &id) in source_blocks.iter().enumerate() {
                block_row_base[i] = acc;
                acc += g.value(id).shape()[0];
            }
        }
        let mut per_domain_counter: HashMap<Domain, usize> = HashMap::new();
        let mut row_sources = Vec::new();
        let mut dom_rows = Vec::new();
        let mut pos_rows = Vec::new();
        // bucket order within each domain is batch order, so a per-domain
        // counter recovers each patch's row inside its CNN output block
        let mut bucket_cursor: HashMap<Domain, usize> = HashMap::new();
        for m in &meta {
            for dom in &m.cls_domains {
                row_sources.push(block_row_base[cls_sources[dom]]);
                dom_rows.push(*dom);
                pos_rows.push(dom.id());
            }
            for (i, dom) in m.domains.iter().enumerate() {
                let block = source_offsets[dom];
                let cursor = bucket_cursor.entry(*dom).or_insert(0);
                row_sources.push(block_row_base[block] + *cursor);
                *cursor += 1;
                dom_rows.push(*dom);
                pos_rows.push(3 + m.positions[i]);
                *per_domain_counter.entry(*dom).or_insert(0) += 1;
            }
        }
        let raw = g.gather_rows(sources, &row_sources)?;

        // add domain-type and position embeddings
        let active = self.cfg.ablation.active_domains();
        let dom_blocks = active
            .iter()
            .map(|d| self.p(bp, &format!("embed.domain.{}", domain_key(*d))))
            .collect::<Result<Vec<_>>>()?;
        let dom_stack = g.concat(&dom_blocks, 0)?;
        let dom_index: HashMap<Domain, usize> =
            active.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let dom_ids: Vec<usize> = dom_rows.iter().map(|d| dom_index[d]).collect();
        let dom_embed = g.gather_rows(dom_stack, &dom_ids)?;
        let with_dom = g.add(raw, dom_embed)?;
        let pos_table = self.p(bp, "embed.pos")?;
        let pos_embed = g.gather_rows(pos_table, &pos_rows)?;
        let tokens = g.add(with_dom, pos_embed)?;

        // mean over patch rows per sample, CLS excluded, via one selector
        let total_rows: usize = meta.iter().map(|m| m.rows()).sum();
        let mut selector = Tensor::zeros(vec![samples.len(), total_rows]);
        let mut base = 0usize;
        for (s, m) in meta.iter().enumerate() {
            let k = m.positions.len();
            for r in 0..k {
                selector.data_mut()[s * total_rows + base + m.cls_domains.len() + r] = 1.0 / k as f64;
            }
            base += m.rows();
        }
        let sel = g.constant(selector)?;
        let pooled = g.matmul(sel, tokens)?;

        Ok(Embedded { tokens, meta, pooled })
    }

    fn cnn_forward(&self, g: &mut Graph, bp: &BoundParams, key: &str, x: NodeId) -> Result<NodeId> {
        let w = self.p(bp, &format!("cnn.{key}.stem.w"))?;
        let b = self.p(bp, &format!("cnn.{key}.stem.b"))?;
        let mut h = g.conv1d(x, w, b)?;
        h = g.gelu(h)?;
        for blk in 0..self.cfg.cnn_blocks {
            let w1 = self.p(bp, &format!("cnn.{key}.block{blk}.conv1.w"))?;
            let b1 = self.p(bp, &format!("cnn.{key}.block{blk}.conv1.b"))?;
            let w2 = self.p(bp, &format!("cnn.{key}.block{blk}.conv2.w"))?;
            let b2 = self.p(bp, &format!("cnn.{key}.block{blk}.conv2.b"))?;
            let c1 = g.conv1d(h, w1, b1)?;
            let a1 = g.gelu(c1)?;
            let c2 = g.conv1d(a1, w2, b2)?;
            let res = g.add(c2, h)?;
            h = g.gelu(res)?;
        }
        let pooled = g.mean_last(h)?;
        let pw = self.p(bp, &format!("cnn.{key}.proj.w"))?;
        let pb = self.p(bp, &format!("cnn.{key}.proj.b"))?;
        let lin = g.matmul(pooled, pw)?;
        g.add(lin, pb)
    }

    fn transformer_block(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        prefix: &str,
        x: NodeId,
        row_spans: &[usize],
    ) -> Result<NodeId> {
        let cfg = &self.cfg;
        let dh = cfg.dim / cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let ln1g = self.p(bp, &format!("{prefix}.ln1.g"))?;
        let ln1b = self.p(bp, &format!("{prefix}.ln1.b"))?;
        let normed = g.layer_norm(x, ln1g, ln1b, LN_EPS)?;
        let mut qkv = Vec::with_capacity(3);
        for (wn, bn) in [("wq", "bq"), ("wk", "bk"), ("wv", "bv")] {
            let w = self.p(bp, &format!("{prefix}.attn.{wn}"))?;
            let b = self.p(bp, &format!("{prefix}.attn.{bn}"))?;
            let lin = g.matmul(normed, w)?;
            qkv.push(g.add(lin, b)?);
        }
        let (q, k, v) = (qkv[0], qkv[1], qkv[2]);

        let mut sample_outs = Vec::with_capacity(row_spans.len());
        let mut offset = 0usize;
        for &rows in row_spans {
            let qs = g.slice(q, 0, offset, offset + rows)?;
            let ks = g.slice(k, 0, offset, offset + rows)?;
            let vs = g.slice(v, 0, offset, offset + rows)?;
            let mut heads_out = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let (c0, c1) = (h * dh, (h + 1) * dh);
                let qh = g.slice(qs, 1, c0, c1)?;
                let kh = g.slice(ks, 1, c0, c1)?;
                let vh = g.slice(vs, 1, c0, c1)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scaled = g.scale(scores, scale)?;
                let probs = g.softmax(scaled)?;
                heads_out.push(g.matmul(probs, vh)?);
            }
            sample_outs.push(g.concat(&heads_out, 1)?);
            offset += rows;
        }
        let attn = g.concat(&sample_outs, 0)?;
        let wo = self.p(bp, &format!("{prefix}.attn.wo"))?;
        let bo = self.p(bp, &format!("{prefix}.attn.bo"))?;
        let proj = g.matmul(attn, wo)?;
        let proj = g.add(proj, bo)?;
        let x = g.add(x, proj)?;

        let ln2g = self.p(bp, &format!("{prefix}.ln2.g"))?;
        let ln2b = self.p(bp, &format!("{prefix}.ln2.b"))?;
        let normed2 = g.layer_norm(x, ln2g, ln2b, LN_EPS)?;
        let w1 = self.p(bp, &format!("{prefix}.mlp.w1"))?;
        let b1 = self.p(bp, &format!("{prefix}.mlp.b1"))?;
        let w2 = self.p(bp, &format!("{prefix}.mlp.w2"))?;
        let b2 = self.p(bp, &format!("{prefix}.mlp.b2"))?;
        let h1 = g.matmul(normed2, w1)?;
        let h1 = g.add(h1, b1)?;
        let h1 = g.gelu(h1)?;
        let h2 = g.matmul(h1, w2)?;
        let h2 = g.add(h2, b2)?;
        g.add(x, h2)
    }

    /// Pre-norm self-attention stack; the representation of each sample is
    /// the mean of its CLS token outputs.
    pub fn encode(&self, g: &mut Graph, bp: &BoundParams, embedded: &Embedded) -> Result<Encoded> {
        let spans: Vec<usize> = embedded.meta.iter().map(|m| m.rows()).collect();
        let mut x = embedded.tokens;
        for i in 0..self.cfg.encoder_layers {
            x = self.transformer_block(g, bp, &format!("enc.{i}"), x, &spans)?;
        }
        if self.cfg.encoder_layers > 0 {
            let gf = self.p(bp, "enc.ln_f.g")?;
            let bf = self.p(bp, "enc.ln_f.b")?;
            x = g.layer_norm(x, gf, bf, LN_EPS)?;
        }
        let total_rows: usize = spans.iter().sum();
        let mut selector = Tensor::zeros(vec![embedded.meta.len(), total_rows]);
        let mut base = 0usize;
        for (s, m) in embedded.meta.iter().enumerate() {
            let ncls = m.cls_domains.len();
            for c in 0..ncls {
                selector.data_mut()[s * total_rows + base + c] = 1.0 / ncls as f64;
            }
            base += m.rows();
        }
        let sel = g.constant(selector)?;
        let reprs = g.matmul(sel, x)?;
        Ok(Encoded { tokens: x, meta: embedded.meta.clone(), reprs })
    }

    /// Adapts encoder outputs, inserts one decode token (plus position and
    /// domain embeddings) at each dropped position of a reconstruction
    /// domain, runs the decoder stack, and emits per-patch value rows. In
    /// the full mode the coverage is every patch — kept ones flow through
    /// from the encoder, dropped ones are filled by decode tokens. In
    /// cross-direction modes the decoder sees the kept tokens of the
    /// encoded domain plus decode tokens for the other domain's dropped
    /// patches; scoring is restricted to reconstruction domains.
    pub fn decode_reconstruct(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        enc: &Encoded,
        plans: &[DropPlan],
        fulls: &[&PatchSet],
    ) -> Result<Decoded> {
        let cfg = &self.cfg;
        let b = enc.meta.len();
        if plans.len() != b || fulls.len() != b {
            return Err(CrtError::InvalidArgument {
                op: "decode_reconstruct",
                reason: format!("{b} encoded samples, {} plans, {} patch sets", plans.len(), fulls.len()),
            });
        }
        let aw = self.p(bp, "dec.adapter.w")?;
        let ab = self.p(bp, "dec.adapter.b")?;
        let adapted = g.matmul(enc.tokens, aw)?;
        let adapted = g.add(adapted, ab)?;

        // decode-token positions per sample
        let mut decode_pos: Vec<Vec<(usize, Domain)>> = Vec::with_capacity(b);
        for (s, full) in fulls.iter().enumerate() {
            let kept_enc: Vec<usize> = enc.meta[s].positions.clone();
            let mut need = Vec::new();
            for i in 0..full.total {
                let dom = full.domain_of(i);
                let dropped = plans[s].dropped.binary_search(&i).is_ok();
                if cfg.ablation.reconstructs(dom) && dropped {
                    if kept_enc.contains(&i) {
                        return Err(CrtError::InvalidArgument {
                            op: "decode_reconstruct",
                            reason: format!("position {i} of sample {s} is both kept and decoded"),
                        });
                    }
                    need.push((i, dom));
                }
            }
            decode_pos.push(need);
        }

        // one stacked matrix of decode-token rows across the batch
        let n_decode: usize = decode_pos.iter().map(|v| v.len()).sum();
        let mut blocks = vec![adapted];
        if n_decode > 0 {
            let mut pos_ids = Vec::with_capacity(n_decode);
            let mut dom_keys = Vec::with_capacity(n_decode);
            for need in &decode_pos {
                for (i, dom) in need {
                    if *i >= cfg.n_max {
                        return Err(CrtError::InvalidArgument {
                            op: "decode_reconstruct",
                            reason: format!("patch index {i} exceeds n_max {}", cfg.n_max),
                        });
                    }
                    pos_ids.push(3 + i);
                    dom_keys.push(*dom);
                }
            }
            let pos_table = self.p(bp, "embed.pos")?;
            let pos_rows = g.gather_rows(pos_table, &pos_ids)?;
            let active = cfg.ablation.active_domains();
            let dom_blocks = active
                .iter()
                .map(|d| self.p(bp, &format!("embed.domain.{}", domain_key(*d))))
                .collect::<Result<Vec<_>>>()?;
            let dom_stack = g.concat(&dom_blocks, 0)?;
            let dom_index: HashMap<Domain, usize> =
                active.iter().enumerate().map(|(i, d)| (*d, i)).collect();
            let dom_ids: Vec<usize> = dom_keys.iter().map(|d| dom_index[d]).collect();
            let dom_rows = g.gather_rows(dom_stack, &dom_ids)?;
            let embeds = g.add(pos_rows, dom_rows)?;
            let token = self.p(bp, "dec.token")?;
            blocks.push(g.add(embeds, token)?);
        }
        let sources = g.concat(&blocks, 0)?;
        let adapted_rows: usize = enc.meta.iter().map(|m| m.rows()).sum();

        // decoder layout: per sample CLS rows, then covered patches by index
        let mut gather = Vec::new();
        let mut spans = Vec::with_capacity(b);
        let mut coverage = Vec::new();
        let mut cls_rows_per_sample = Vec::with_capacity(b);
        let mut enc_base = 0usize;
        let mut dec_base = adapted_rows;
        for (s, m) in enc.meta.iter().enumerate() {
            let ncls = m.cls_domains.len();
            let mut rows = Vec::new();
            for c in 0..ncls {
                rows.push((usize::MAX, enc_base + c, Domain::Time));
            }
            for (slot, &posn) in m.positions.iter().enumerate() {
                rows.push((posn, enc_base + ncls + slot, m.domains[slot]));
            }
            for (slot, (posn, dom)) in decode_pos[s].iter().enumerate() {
                rows.push((*posn, dec_base + slot, *dom));
            }
            // CLS first (usize::MAX sorts last, so split manually)
            let (cls, mut patches): (Vec<_>, Vec<_>) =
                rows.into_iter().partition(|(p, _, _)| *p == usize::MAX);
            patches.sort_by_key(|(p, _, _)| *p);
            for w in patches.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(CrtError::InvalidArgument {
                        op: "decode_reconstruct",
                        reason: format!("sample {s}: duplicate decoder position {}", w[0].0),
                    });
                }
            }
            spans.push(cls.len() + patches.len());
            cls_rows_per_sample.push(cls.len());
            for (_, src, _) in &cls {
                gather.push(*src);
            }
            for (posn, src, dom) in &patches {
                gather.push(*src);
                coverage.push((s, *posn, *dom));
            }
            enc_base += m.rows();
            dec_base += decode_pos[s].len();
        }
        let mut x = g.gather_rows(sources, &gather)?;
        for i in 0..cfg.decoder_layers {
            x = self.transformer_block(g, bp, &format!("dec.{i}"), x, &spans)?;
        }
        let gf = self.p(bp, "dec.ln_f.g")?;
        let bf = self.p(bp, "dec.ln_f.b")?;
        x = g.layer_norm(x, gf, bf, LN_EPS)?;

        // strip CLS rows, then map through the per-token value head
        let mut patch_rows = Vec::with_capacity(coverage.len());
        let mut base = 0usize;
        for (s, &span) in spans.iter().enumerate() {
            for r in cls_rows_per_sample[s]..span {
                patch_rows.push(base + r);
            }
            base += span;
        }
        let tokens = g.gather_rows(x, &patch_rows)?;
        let hw = self.p(bp, "dec.head.w")?;
        let hb = self.p(bp, "dec.head.b")?;
        let out = g.matmul(tokens, hw)?;
        let rows = g.add(out, hb)?;
        Ok(Decoded { rows, coverage })
    }

    /// Projection heads for the instance-discrimination term: two-layer
    /// MLPs over the representation and over the pooled patch embeddings.
    pub fn project_idc(
        &self,
        g: &mut Graph,
        bp: &BoundParams,
        reprs: NodeId,
        pooled: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let z1 = self.mlp2(g, bp, "idc.p1", reprs)?;
        let z2 = self.mlp2(g, bp, "idc.p2", pooled)?;
        Ok((z1, z2))
    }

    /// Two-layer classifier over the representation.
    pub fn classify(&self, g: &mut Graph, bp: &BoundParams, reprs: NodeId) -> Result<NodeId> {
        self.mlp2(g, bp, "clf", reprs)
    }

    /// Pooled cross-domain representation of one raw series (channels, length),
    /// with every patch visible.
    pub fn embed_series(&self, series: &Tensor) -> Result<Vec<f64>> {
        let ps = crate::sequencing::make_patches(&crate::sequencing::assemble(series)?, self.cfg.patch_len)?;
        let mut g = Graph::new();
        let bp = self.bind(&mut g, false)?;
        let emb = self.embed_patches(&mut g, &bp, &[&ps])?;
        let enc = self.encode(&mut g, &bp, &emb)?;
        Ok(g.value(enc.reprs).data().to_vec())
    }

    /// Softmax class scores for one raw series (channels, length).
    pub fn score_series(&self, series: &Tensor) -> Result<Vec<f64>> {
        let ps = crate::sequencing::make_patches(&crate::sequencing::assemble(series)?, self.cfg.patch_len)?;
        let mut g = Graph::new();
        let bp = self.bind(&mut g, false)?;
        let emb = self.embed_patches(&mut g, &bp, &[&ps])?;
        let enc = self.encode(&mut g, &bp, &emb)?;
        let logits = self.classify(&mut g, &bp, enc.reprs)?;
        let scores = g.softmax(logits)?;
        Ok(g.value(scores).data().to_vec())
    }

    fn mlp2(&self, g: &mut Graph, bp: &BoundParams, prefix: &str, x: NodeId) -> Result<NodeId> {
        let w1 = self.p(bp, &format!("{prefix}.w1"))?;
        let b1 = self.p(bp, &format!("{prefix}.b1"))?;
        let w2 = self.p(bp, &format!("{prefix}.w2"))?;
        let b2 = self.p(bp, &format!("{prefix}.b2"))?;
        let h = g.matmul(x, w1)?;
        let h = g.add(h, b1)?;
        let h = g.gelu(h)?;
        let out = g.matmul(h, w2)?;
        g.add(out, b2)
    }
}

/// Builds the target matrix matching `Decoded::coverage` rows: each row is
/// the original patch values, channel-major.
pub fn reconstruction_targets(coverage: &[(usize, usize, Domain)], fulls: &[&PatchSet]) -> Result<Tensor> {
    if coverage.is_empty() {
        return Err(CrtError::InvalidArgument {
            op: "reconstruction_targets",
            reason: "no covered patches".into(),
        });
    }
    let row_len = {
        let ps = fulls[coverage[0].0];
        ps.patch_len * ps.channels
    };
    let mut data = Vec::with_capacity(coverage.len() * row_len);
    for &(s, posn, _) in coverage {
        let ps = fulls[s];
        let patch = ps
            .patches
            .iter()
            .find(|p| p.index == posn)
            .ok_or_else(|| CrtError::InvalidArgument {
                op: "reconstruction_targets",
                reason: format!("sample {s} lacks patch {posn}"),
            })?;
        data.extend_from_slice(patch.values.data());
    }
    Tensor::new(vec![coverage.len(), row_len], data)
}

/// Folds reconstruction rows back into per-sample (channels, 2L) series;
/// positions the decoder did not cover stay zero.
pub fn fold_reconstruction(
    rows: &Tensor,
    coverage: &[(usize, usize, Domain)],
    batch: usize,
    channels: usize,
    patch_len: usize,
    total_patches: usize,
) -> Result<Vec<Tensor>> {
    let seq_len = total_patches * patch_len;
    let mut out = vec![Tensor::zeros(vec![channels, seq_len]); batch];
    if rows.shape() != [coverage.len(), channels * patch_len] {
        return Err(CrtError::ShapeMismatch {
            op: "fold_reconstruction",
            lhs: rows.shape().to_vec(),
            rhs: vec![coverage.len(), channels * patch_len],
        });
    }
    for (r, &(s, posn, _)) in coverage.iter().enumerate() {
        let row = rows.row(r);
        for c in 0..channels {
            let dst = &mut out[s].data_mut()[c * seq_len + posn * patch_len..][..patch_len];
            dst.copy_from_slice(&row[c * patch_len..(c + 1) * patch_len]);
        }
    }
    Ok(out)
}
