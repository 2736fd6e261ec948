//! Dataset loading for both encoder modes.
//!
//! In `synth` mode a data directory holds `{train,val,test}.tsv` token
//! files, which the configured synthetic encoder turns into block stacks.
//! In `file` mode it holds `{train,val,test}.manifest` files pointing at
//! precomputed stacks.

use std::path::Path;

use trisim::config::EncoderMode;
use trisim::training::dataset::{encode_pairs, load_manifest, read_split, SPLIT_NAMES};
use trisim::training::{gen_synth_dataset, synth_encoder, Splits, StackPair, SynthSpec};
use trisim::{Error, Result, RunConfig};

#[derive(Clone, Debug)]
pub struct StackSplits {
    pub train: Vec<StackPair>,
    pub val: Vec<StackPair>,
    pub test: Vec<StackPair>,
}

impl StackSplits {
    pub fn get(&self, split: &str) -> Result<&[StackPair]> {
        match split {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(bad_split(other)),
        }
    }
}

fn bad_split(name: &str) -> Error {
    Error::Argument(format!(
        "unknown split `{name}`; expected one of {}",
        SPLIT_NAMES.join(", ")
    ))
}

pub fn check_split(name: &str) -> Result<()> {
    if SPLIT_NAMES.contains(&name) {
        Ok(())
    } else {
        Err(bad_split(name))
    }
}

/// One split of `dir` as encoder stacks.
pub fn load_split(cfg: &RunConfig, dir: &Path, split: &str) -> Result<Vec<StackPair>> {
    check_split(split)?;
    match cfg.encoder.mode {
        EncoderMode::Synth => {
            let pairs = read_split(dir.join(format!("{split}.tsv")))?;
            encode_pairs(&synth_encoder(&cfg.encoder)?, &pairs, cfg.encoder.l)
        }
        EncoderMode::File => load_manifest(dir.join(format!("{split}.manifest"))),
    }
}

pub fn load_all(cfg: &RunConfig, dir: &Path) -> Result<StackSplits> {
    Ok(StackSplits {
        train: load_split(cfg, dir, "train")?,
        val: load_split(cfg, dir, "val")?,
        test: load_split(cfg, dir, "test")?,
    })
}

pub fn encode_splits(cfg: &RunConfig, splits: &Splits) -> Result<StackSplits> {
    let enc = synth_encoder(&cfg.encoder)?;
    let l = cfg.encoder.l;
    Ok(StackSplits {
        train: encode_pairs(&enc, &splits.train, l)?,
        val: encode_pairs(&enc, &splits.val, l)?,
        test: encode_pairs(&enc, &splits.test, l)?,
    })
}

/// A fresh synthetic dataset drawn with `seed`, using the configuration's
/// vocabulary and synonym groups.
pub fn generate(cfg: &RunConfig, pairs: usize, seed: u64) -> Result<StackSplits> {
    if cfg.encoder.mode != EncoderMode::Synth {
        return Err(Error::Argument(
            "generated datasets need the synthetic encoder; pass --data in file mode".into(),
        ));
    }
    let vocab = u32::try_from(cfg.encoder.vocab)
        .map_err(|_| Error::Argument("vocabulary too large".into()))?;
    let mut spec = SynthSpec::new(pairs, vocab, seed);
    spec.synonym_group = cfg.encoder.synonym_group;
    encode_splits(cfg, &gen_synth_dataset(&spec)?)
}
