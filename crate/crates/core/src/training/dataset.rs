//! Synthetic paraphrase pairs, their on-disk form, and the embedding-file
//! manifest.
//!
//! Split files are tab-separated with a header row:
//!
//! ```text
//! x<TAB>y<TAB>label
//! 3 17 9 22<TAB>4 17 22 9<TAB>0
//! ```
//!
//! Manifests list precomputed stacks instead of token ids:
//!
//! ```text
//! path_x<TAB>path_y<TAB>label
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::file::load_block_stack;
use crate::encoder::{pad_to, BlockStack, SynonymPartition, SynthEncoder, TokenSequence};
use crate::error::{Error, Result};

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];
const SUBSTITUTE_P: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairExample {
    pub x: TokenSequence,
    pub y: TokenSequence,
    pub label: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<PairExample>,
    pub val: Vec<PairExample>,
    pub test: Vec<PairExample>,
}

impl Splits {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &[PairExample])> {
        SPLIT_NAMES
            .into_iter()
            .zip([&self.train[..], &self.val[..], &self.test[..]])
    }
}

/// Generation parameters for the synthetic paraphrase task.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub pairs: usize,
    pub vocab: u32,
    pub min_len: usize,
    pub max_len: usize,
    pub synonym_group: u32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(pairs: usize, vocab: u32, seed: u64) -> Self {
        SynthSpec {
            pairs,
            vocab,
            min_len: 6,
            max_len: 12,
            synonym_group: 2,
            seed,
        }
    }
}

fn sample_sequence<R: Rng>(rng: &mut R, spec: &SynthSpec) -> TokenSequence {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    TokenSequence::new((0..len).map(|_| rng.random_range(1..spec.vocab)).collect())
}

fn perturb<R: Rng>(rng: &mut R, seq: &TokenSequence, part: &SynonymPartition) -> TokenSequence {
    let mut tokens: Vec<u32> = seq
        .tokens
        .iter()
        .map(|&t| {
            if rng.random_bool(SUBSTITUTE_P) {
                let syn = part.synonyms(t);
                syn[rng.random_range(0..syn.len())]
            } else {
                t
            }
        })
        .collect();
    if tokens.len() >= 2 {
        let i = rng.random_range(0..tokens.len() - 1);
        tokens.swap(i, i + 1);
    }
    TokenSequence::new(tokens)
}

/// Balanced binary task: label 0 pairs a sequence with a perturbed copy
/// (synonym substitution plus one adjacent swap), label 1 pairs two
/// independent sequences. Every pair has its own base sequence, so the
/// 80/10/10 split is disjoint by base.
pub fn gen_synth_dataset(spec: &SynthSpec) -> Result<Splits> {
    if spec.pairs < 10 {
        return Err(Error::argument(format!(
            "need at least 10 pairs, got {}",
            spec.pairs
        )));
    }
    if spec.vocab < 4 {
        return Err(Error::argument(format!(
            "need a vocabulary of at least 4, got {}",
            spec.vocab
        )));
    }
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::argument(format!(
            "bad length range {}..={}",
            spec.min_len, spec.max_len
        )));
    }
    let part = SynonymPartition::new(spec.vocab, spec.synonym_group)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels: Vec<usize> = (0..spec.pairs).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    let pairs: Vec<PairExample> = labels
        .into_iter()
        .map(|label| {
            let x = sample_sequence(&mut rng, spec);
            let y = if label == 0 {
                perturb(&mut rng, &x, &part)
            } else {
                sample_sequence(&mut rng, spec)
            };
            PairExample { x, y, label }
        })
        .collect();
    let n_train = spec.pairs * 8 / 10;
    let n_val = spec.pairs / 10;
    let mut it = pairs.into_iter();
    Ok(Splits {
        train: it.by_ref().take(n_train).collect(),
        val: it.by_ref().take(n_val).collect(),
        test: it.collect(),
    })
}

fn join_tokens(seq: &TokenSequence) -> String {
    let parts: Vec<String> = seq.tokens.iter().map(u32::to_string).collect();
    parts.join(" ")
}

pub fn write_split_tsv(pairs: &[PairExample]) -> String {
    let mut out = String::from("x\ty\tlabel\n");
    for p in pairs {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            join_tokens(&p.x),
            join_tokens(&p.y),
            p.label
        ));
    }
    out
}

/// Tab-separated rows after an optional header; blank lines are skipped.
fn rows<'a>(text: &'a str, header: &str) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    let mut offset = 0;
    let header = header.to_string();
    text.split_inclusive('\n')
        .enumerate()
        .filter_map(move |(i, raw)| {
            let at = offset;
            offset += raw.len();
            let line = raw.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() || (i == 0 && line == header) {
                return None;
            }
            Some((at, line.split('\t').collect()))
        })
}

fn parse_label(field: &str, at: usize) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::format(at, format!("bad label `{field}`")))
}

fn parse_tokens(field: &str, at: usize) -> Result<TokenSequence> {
    let tokens = field
        .split_whitespace()
        .map(|t| {
            t.parse::<u32>()
                .map_err(|_| Error::format(at, format!("bad token id `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if tokens.is_empty() {
        return Err(Error::format(at, "empty token sequence"));
    }
    Ok(TokenSequence::new(tokens))
}

pub fn parse_split_tsv(text: &str) -> Result<Vec<PairExample>> {
    rows(text, "x\ty\tlabel")
        .map(|(at, f)| {
            if f.len() != 3 {
                return Err(Error::format(
                    at,
                    format!("expected 3 fields, found {}", f.len()),
                ));
            }
            Ok(PairExample {
                x: parse_tokens(f[0], at)?,
                y: parse_tokens(f[1], at)?,
                label: parse_label(f[2], at)?,
            })
        })
        .collect()
}

pub fn write_splits(dir: impl AsRef<Path>, splits: &Splits) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, pairs) in splits.iter() {
        let path = dir.join(format!("{name}.tsv"));
        std::fs::write(&path, write_split_tsv(pairs)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_split(path: impl AsRef<Path>) -> Result<Vec<PairExample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_split_tsv(&text)
}

pub fn read_splits(dir: impl AsRef<Path>) -> Result<Splits> {
    let dir = dir.as_ref();
    Ok(Splits {
        train: read_split(dir.join("train.tsv"))?,
        val: read_split(dir.join("val.tsv"))?,
        test: read_split(dir.join("test.tsv"))?,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub path_x: PathBuf,
    pub path_y: PathBuf,
    pub label: usize,
}

/// Parses manifest rows, resolving relative paths against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRow>> {
    rows(text, "path_x\tpath_y\tlabel")
        .map(|(at, f)| {
            if f.len() != 3 {
                return Err(Error::format(
                    at,
                    format!("expected 3 fields, found {}", f.len()),
                ));
            }
            if f[0].is_empty() || f[1].is_empty() {
                return Err(Error::format(at, "empty path"));
            }
            Ok(ManifestRow {
                path_x: base.join(f[0]),
                path_y: base.join(f[1]),
                label: parse_label(f[2], at)?,
            })
        })
        .collect()
}

/// A labelled pair of encoder stacks.
#[derive(Clone, Debug, PartialEq)]
pub struct StackPair {
    pub x: BlockStack,
    pub y: BlockStack,
    pub label: usize,
}

/// Loads every stack a manifest references and checks they share dims.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<StackPair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out: Vec<StackPair> = Vec::new();
    for row in parse_manifest(&text, base)? {
        let x = BlockStack::unmasked(load_block_stack(&row.path_x)?)?;
        let y = BlockStack::unmasked(load_block_stack(&row.path_y)?)?;
        let dims = out.first().map(|p| p.x.dims()).unwrap_or(x.dims());
        for (p, s) in [(&row.path_x, &x), (&row.path_y, &y)] {
            if s.dims() != dims {
                return Err(Error::format(
                    4,
                    format!(
                        "{} has dims {:?}, expected {:?}",
                        p.display(),
                        s.dims(),
                        dims
                    ),
                ));
            }
        }
        out.push(StackPair {
            x,
            y,
            label: row.label,
        });
    }
    Ok(out)
}

/// Runs the synthetic encoder over token pairs.
pub fn encode_pairs(enc: &SynthEncoder, pairs: &[PairExample], l: usize) -> Result<Vec<StackPair>> {
    pairs
        .iter()
        .map(|p| {
            Ok(StackPair {
                x: enc.encode(&pad_to(&p.x, l))?,
                y: enc.encode(&pad_to(&p.y, l))?,
                label: p.label,
            })
        })
        .collect()
}

fn mean_embedding(enc: &SynthEncoder, seq: &TokenSequence) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; enc.dim()];
    for &t in &seq.tokens {
        if t as usize >= enc.vocab() {
            return Err(Error::Input(format!(
                "token id {t} is outside the vocabulary"
            )));
        }
        for (a, &e) in acc.iter_mut().zip(enc.embedding(t)) {
            *a += e as f64;
        }
    }
    let n = seq.len().max(1) as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Accuracy of the rule "match iff the cosine of the mean token embeddings
/// is at least `threshold`".
pub fn cosine_oracle_accuracy(
    enc: &SynthEncoder,
    pairs: &[PairExample],
    threshold: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::argument("empty split"));
    }
    let mut correct = 0;
    for p in pairs {
        let a = mean_embedding(enc, &p.x)?;
        let b = mean_embedding(enc, &p.y)?;
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos = dot / (na * nb).max(1e-12);
        let predicted = if cos >= threshold { 0 } else { 1 };
        correct += usize::from(predicted == p.label);
    }
    Ok(correct as f64 / pairs.len() as f64)
}
