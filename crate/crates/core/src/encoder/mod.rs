//! Per-block sentence representations.
//!
//! A sentence becomes a [`BlockStack`]: an `H×L×D` tensor holding the output
//! of every encoder block at every (padded) position. Stacks come either
//! from [`SynthEncoder`], a deterministic stand-in for a pre-trained
//! Transformer, or from precomputed files (see [`file`]).

pub mod file;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Token id used for padding.
pub const PAD_ID: u32 = 0;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        TokenSequence { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A sequence padded or truncated to a fixed length, with validity flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl PaddedSequence {
    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Right-pads with [`PAD_ID`] or right-truncates to exactly `len` positions.
pub fn pad_to(seq: &TokenSequence, len: usize) -> PaddedSequence {
    let keep = seq.len().min(len);
    let mut ids = seq.tokens[..keep].to_vec();
    let mut mask = vec![true; keep];
    ids.resize(len, PAD_ID);
    mask.resize(len, false);
    PaddedSequence { ids, mask }
}

/// Encoder output for one sentence: `H×L×D` plus per-position validity.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockStack {
    pub blocks: Tensor<f32>,
    pub mask: Vec<bool>,
}

impl BlockStack {
    /// Wraps a tensor whose positions are all valid.
    pub fn unmasked(blocks: Tensor<f32>) -> Result<Self> {
        let (_, l, _) = blocks.dims3()?;
        Ok(BlockStack {
            blocks,
            mask: vec![true; l],
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.blocks.dims3().expect("block stack is rank 3")
    }

    /// Block `h` as an `L×D` matrix.
    pub fn block(&self, h: usize) -> Tensor<f32> {
        let (_, l, d) = self.dims();
        Tensor::matrix(
            l,
            d,
            self.blocks.data()[h * l * d..(h + 1) * l * d].to_vec(),
        )
        .expect("block slice")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockStackPair {
    pub x: BlockStack,
    pub y: BlockStack,
}

/// Which encoder blocks feed the model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSelection {
    All,
    /// Last `⌈H/2⌉` blocks.
    TopHalf,
    /// First `⌈H/2⌉` blocks.
    BottomHalf,
    /// Every second block starting at 0.
    SpacedHalf,
    Explicit(Vec<usize>),
}

impl BlockSelection {
    pub fn indices(&self, h: usize) -> Result<Vec<usize>> {
        if h == 0 {
            return Err(Error::argument("cannot select from zero blocks"));
        }
        let half = h.div_ceil(2);
        let idx = match self {
            BlockSelection::All => (0..h).collect(),
            BlockSelection::TopHalf => (h - half..h).collect(),
            BlockSelection::BottomHalf => (0..half).collect(),
            BlockSelection::SpacedHalf => (0..h).step_by(2).collect(),
            BlockSelection::Explicit(list) => {
                if list.is_empty() {
                    return Err(Error::argument("explicit block list is empty"));
                }
                if let Some(&bad) = list.iter().find(|&&i| i >= h) {
                    return Err(Error::argument(format!(
                        "block {bad} out of range for {h} blocks"
                    )));
                }
                if list.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::argument(
                        "explicit block list must be strictly increasing",
                    ));
                }
                list.clone()
            }
        };
        Ok(idx)
    }

    pub fn name(&self) -> String {
        match self {
            BlockSelection::All => "all".into(),
            BlockSelection::TopHalf => "top_half".into(),
            BlockSelection::BottomHalf => "bottom_half".into(),
            BlockSelection::SpacedHalf => "spaced_half".into(),
            BlockSelection::Explicit(v) => format!(
                "explicit[{}]",
                v.iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ),
        }
    }
}

/// Keeps the selected blocks, in order.
pub fn select_blocks(stack: &BlockStack, sel: &BlockSelection) -> Result<BlockStack> {
    let (h, l, d) = stack.dims();
    let idx = sel.indices(h)?;
    if idx.len() == h {
        return Ok(stack.clone());
    }
    let per = l * d;
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in &idx {
        data.extend_from_slice(&stack.blocks.data()[i * per..(i + 1) * per]);
    }
    Ok(BlockStack {
        blocks: Tensor::tensor3(idx.len(), l, d, data)?,
        mask: stack.mask.clone(),
    })
}

/// Groups of interchangeable tokens. Token ids `1..vocab` are split into
/// consecutive runs of `group_size`; id 0 is the pad token and belongs to no
/// group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynonymPartition {
    pub vocab: u32,
    pub group_size: u32,
}

impl SynonymPartition {
    pub fn new(vocab: u32, group_size: u32) -> Result<Self> {
        if vocab < 2 || group_size == 0 {
            return Err(Error::argument(
                "synonym partition needs vocab ≥ 2 and group size ≥ 1",
            ));
        }
        Ok(SynonymPartition { vocab, group_size })
    }

    pub fn group_of(&self, token: u32) -> Option<u32> {
        (token != PAD_ID && token < self.vocab).then(|| (token - 1) / self.group_size)
    }

    pub fn groups(&self) -> u32 {
        (self.vocab - 1).div_ceil(self.group_size)
    }

    /// All token ids sharing `token`'s group, including itself.
    pub fn synonyms(&self, token: u32) -> Vec<u32> {
        match self.group_of(token) {
            None => vec![token],
            Some(g) => {
                let start = 1 + g * self.group_size;
                (start..(start + self.group_size).min(self.vocab)).collect()
            }
        }
    }
}

/// Standard deviation of the per-token deviation from its group center.
const TOKEN_NOISE: f64 = 0.35;

/// Deterministic hierarchical encoder.
///
/// Block 0 is an embedding lookup where synonyms share a group center. Each
/// later block averages the previous block over a window of three valid
/// positions and applies `relu(W x + b)`, so deeper blocks see wider
/// context. Padded positions are zero in every block.
#[derive(Clone, Debug)]
pub struct SynthEncoder {
    vocab: usize,
    blocks: usize,
    dim: usize,
    embedding: Tensor<f32>,
    mixing: Vec<(Tensor<f32>, Tensor<f32>)>,
    partition: SynonymPartition,
}

impl SynthEncoder {
    pub fn new(
        vocab: usize,
        blocks: usize,
        dim: usize,
        group_size: u32,
        seed: u64,
    ) -> Result<Self> {
        if blocks == 0 || dim == 0 {
            return Err(Error::argument(
                "encoder needs at least one block and one feature",
            ));
        }
        let partition = SynonymPartition::new(vocab as u32, group_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let centers: Vec<Vec<f64>> = (0..partition.groups())
            .map(|_| (0..dim).map(|_| normal()).collect())
            .collect();
        let mut emb = Vec::with_capacity(vocab * dim);
        for t in 0..vocab as u32 {
            match partition.group_of(t) {
                Some(g) => {
                    for c in &centers[g as usize] {
                        emb.push((c + TOKEN_NOISE * normal()) as f32);
                    }
                }
                None => emb.extend((0..dim).map(|_| normal() as f32)),
            }
        }
        let embedding = Tensor::matrix(vocab, dim, emb)?;
        let std = (2.0 / dim as f64).sqrt();
        let mixing = (1..blocks)
            .map(|_| {
                let w = Tensor::from_fn(&[dim, dim], |_| (std * normal()) as f32);
                let b = Tensor::from_fn(&[dim], |_| (0.1 * normal()) as f32);
                (w, b)
            })
            .collect();
        Ok(SynthEncoder {
            vocab,
            blocks,
            dim,
            embedding,
            mixing,
            partition,
        })
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn partition(&self) -> SynonymPartition {
        self.partition
    }

    pub fn embedding(&self, token: u32) -> &[f32] {
        let t = token as usize;
        &self.embedding.data()[t * self.dim..(t + 1) * self.dim]
    }

    pub fn mixing(&self, block: usize) -> (&Tensor<f32>, &Tensor<f32>) {
        let (w, b) = &self.mixing[block - 1];
        (w, b)
    }

    pub fn encode(&self, seq: &PaddedSequence) -> Result<BlockStack> {
        let l = seq.ids.len();
        let d = self.dim;
        if let Some(&bad) = seq
            .ids
            .iter()
            .zip(&seq.mask)
            .find(|(&id, &valid)| valid && id as usize >= self.vocab)
            .map(|(id, _)| id)
        {
            return Err(Error::Input(format!(
                "token id {bad} is outside the vocabulary of {}",
                self.vocab
            )));
        }
        let mut data = vec![0f32; self.blocks * l * d];
        for (i, (&id, &valid)) in seq.ids.iter().zip(&seq.mask).enumerate() {
            if valid {
                data[i * d..(i + 1) * d].copy_from_slice(self.embedding(id));
            }
        }
        let mut avg = vec![0f32; d];
        for h in 1..self.blocks {
            let (w, b) = self.mixing(h);
            let (prev, cur) = data.split_at_mut(h * l * d);
            let prev = &prev[(h - 1) * l * d..];
            for i in 0..l {
                if !seq.mask[i] {
                    continue;
                }
                avg.iter_mut().for_each(|v| *v = 0.0);
                let mut count = 0f32;
                for j in i.saturating_sub(1)..(i + 2).min(l) {
                    if seq.mask[j] {
                        for (a, &p) in avg.iter_mut().zip(&prev[j * d..(j + 1) * d]) {
                            *a += p;
                        }
                        count += 1.0;
                    }
                }
                avg.iter_mut().for_each(|v| *v /= count);
                let out = &mut cur[i * d..(i + 1) * d];
                for (o, (wr, &bj)) in out.iter_mut().zip(w.data().chunks_exact(d).zip(b.data())) {
                    let s: f32 = wr.iter().zip(&avg).map(|(a, b)| a * b).sum::<f32>() + bj;
                    *o = s.max(0.0);
                }
            }
        }
        Ok(BlockStack {
            blocks: Tensor::tensor3(self.blocks, l, d, data)?,
            mask: seq.mask.clone(),
        })
    }
}
