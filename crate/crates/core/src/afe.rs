//! Adaptive feature extraction.
//!
//! Each encoder block `h` gets its own gate network
//! `sigmoid(W2 relu(W1 x + b1) + b2)`, applied per position. Gates are
//! normalized so that, for every block and feature, they sum to one over
//! positions, then multiply the block's representation elementwise. The
//! weighted blocks are stacked into the `H×L×D` semantic tensor.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{BoundParams, Graph, Var};
use crate::params::{insert_dense, ParamSet};
use crate::tensor::{lit, Real};

pub fn param_name(block: usize, part: &str) -> String {
    format!("afe.block{block}.{part}")
}

/// Registers one gate network per selected block.
pub fn init_afe<T: Real, R: Rng>(
    params: &mut ParamSet<T>,
    rng: &mut R,
    blocks: &[usize],
    d: usize,
    reduction: usize,
) -> Result<()> {
    for &h in blocks {
        insert_dense(
            params,
            rng,
            param_name(h, "w1"),
            param_name(h, "b1"),
            d,
            reduction,
        )?;
        insert_dense(
            params,
            rng,
            param_name(h, "w2"),
            param_name(h, "b2"),
            reduction,
            d,
        )?;
    }
    Ok(())
}

/// Unnormalized gates for an `L×D` block, every entry in `(0, 1)`.
pub fn afe_gates<T: Real>(g: &mut Graph<T>, block: Var, bp: &BoundParams, h: usize) -> Result<Var> {
    let hidden = g.linear(
        block,
        bp.get(&param_name(h, "w1"))?,
        bp.get(&param_name(h, "b1"))?,
    )?;
    let hidden = g.relu(hidden);
    let out = g.linear(
        hidden,
        bp.get(&param_name(h, "w2"))?,
        bp.get(&param_name(h, "b2"))?,
    )?;
    Ok(g.sigmoid(out))
}

/// Divides every feature column of an `L×D` gate matrix by its sum.
pub fn afe_normalize<T: Real>(g: &mut Graph<T>, gates: Var) -> Result<Var> {
    let (l, d) = g.value(gates).dims2()?;
    let cube = g.reshape(gates, &[1, l, d])?;
    let norm = g.normalize_positions(cube)?;
    g.reshape(norm, &[l, d])
}

/// `X[h, i, d] = gate[h][i, d] * block[h][i, d]`, stacked in block order.
pub fn afe_stack<T: Real>(g: &mut Graph<T>, blocks: &[Var], gates: &[Var]) -> Result<Var> {
    if blocks.len() != gates.len() || blocks.is_empty() {
        return Err(Error::shape(format!(
            "{} blocks but {} gate matrices",
            blocks.len(),
            gates.len()
        )));
    }
    let mut layers = Vec::with_capacity(blocks.len());
    for (&b, &a) in blocks.iter().zip(gates) {
        let (l, d) = g.value(b).dims2()?;
        let weighted = g.mul(b, a)?;
        layers.push(g.reshape(weighted, &[1, l, d])?);
    }
    g.concat(&layers, 0)
}

/// Full extraction from an `H×L×D` stack of selected blocks. `block_ids`
/// names the gate network for each layer. Without `adaptive`, every layer is
/// scaled by the constant `1/L`.
pub fn afe_extract<T: Real>(
    g: &mut Graph<T>,
    stack: Var,
    block_ids: &[usize],
    adaptive: bool,
    bp: &BoundParams,
) -> Result<Var> {
    let (h, l, d) = g.value(stack).dims3()?;
    if h != block_ids.len() {
        return Err(Error::shape(format!(
            "stack has {h} blocks, gate list has {}",
            block_ids.len()
        )));
    }
    if !adaptive {
        return Ok(g.scale(stack, T::one() / lit::<T>(l as f64)));
    }
    let mut blocks = Vec::with_capacity(h);
    let mut gates = Vec::with_capacity(h);
    for (i, &id) in block_ids.iter().enumerate() {
        let layer = g.slice(stack, i, 1)?;
        let block = g.reshape(layer, &[l, d])?;
        let raw = afe_gates(g, block, bp, id)?;
        gates.push(afe_normalize(g, raw)?);
        blocks.push(block);
    }
    afe_stack(g, &blocks, &gates)
}
