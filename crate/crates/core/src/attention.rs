//! Cross-sentence spatial attention, the three feature-attention variants,
//! and their elementwise combination.

use rand::Rng;

use crate::config::FaVariant;
use crate::error::{Error, Result};
use crate::graph::{BoundParams, Graph, Var};
use crate::ops::{PoolMode, SoftmaxAxis, SpatialAxis};
use crate::params::{insert_dense, ParamSet};
use crate::tensor::{lit, Real, Tensor};

pub const SA_W: &str = "sa.proj.w";
pub const SA_B: &str = "sa.proj.b";

/// Registers the shared 1×1 output projection `D → D′`.
pub fn init_sa<T: Real, R: Rng>(
    params: &mut ParamSet<T>,
    rng: &mut R,
    d: usize,
    d_prime: usize,
) -> Result<()> {
    insert_dense(params, rng, SA_W.into(), SA_B.into(), d, d_prime)
}

/// Handles produced by [`sa_forward`].
#[derive(Clone, Copy, Debug)]
pub struct SaOutput {
    /// Projected `H×L×D′` result for the first sentence.
    pub x: Var,
    /// Projected `H×L×D′` result for the second sentence.
    pub y: Var,
    /// Raw scores `s[i, j] = K_i · Q_j`, `N×N`.
    pub scores: Var,
    /// Row softmax of the scores: entry `[i, j]` is `M_Y[j, i]`.
    pub row_soft: Var,
    /// Column softmax of the scores: entry `[i, j]` is `M_X[i, j]`.
    pub col_soft: Var,
    /// First sentence's attended rows before projection, `N×D`.
    pub x_attended: Var,
    /// Second sentence's attended rows before projection, `N×D`.
    pub y_attended: Var,
}

/// Spatial attention between two `H×L×D` tensors.
///
/// Keys and values of the first sentence are its flattened rows; queries and
/// values of the second are likewise. `X_sa[i] = Σ_j M_Y[j, i] Y_j` and
/// `Y_sa[j] = Σ_i M_X[i, j] X_i`, then both go through the shared 1×1
/// projection.
pub fn sa_forward<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    y: Var,
    bp: &BoundParams,
    scale_scores: bool,
) -> Result<SaOutput> {
    let (h, l, d) = g.value(x).dims3()?;
    if g.shape(y) != [h, l, d] {
        return Err(Error::argument(format!(
            "spatial attention inputs differ: {:?} vs {:?}",
            g.shape(x),
            g.shape(y)
        )));
    }
    let n = h * l;
    let k = g.reshape(x, &[n, d])?;
    let q = g.reshape(y, &[n, d])?;
    let mut scores = g.matmul(k, q, false, true)?;
    if scale_scores {
        let s = g.scale(scores, T::one() / lit::<T>(d as f64).sqrt());
        scores = s;
    }
    let row_soft = g.softmax(scores, SoftmaxAxis::Cols)?;
    let col_soft = g.softmax(scores, SoftmaxAxis::Rows)?;
    let x_att = g.matmul(row_soft, q, false, false)?;
    let y_att = g.matmul(col_soft, k, true, false)?;
    let xs = g.reshape(x_att, &[h, l, d])?;
    let ys = g.reshape(y_att, &[h, l, d])?;
    let (w, b) = (bp.get(SA_W)?, bp.get(SA_B)?);
    let xp = g.linear(xs, w, b)?;
    let yp = g.linear(ys, w, b)?;
    Ok(SaOutput {
        x: xp,
        y: yp,
        scores,
        row_soft,
        col_soft,
        x_attended: x_att,
        y_attended: y_att,
    })
}

/// The SA projection alone, used by cells that disable cross attention.
pub fn project_only<T: Real>(g: &mut Graph<T>, x: Var, bp: &BoundParams) -> Result<Var> {
    g.linear(x, bp.get(SA_W)?, bp.get(SA_B)?)
}

/// Similarity maps exported from one attention pass.
#[derive(Clone, Debug, PartialEq)]
pub struct SaMaps<T> {
    pub scores: Tensor<T>,
    /// `M_Y[j, i]`: each column sums to one.
    pub m_y: Tensor<T>,
    /// `M_X[i, j]`: each column sums to one.
    pub m_x: Tensor<T>,
}

impl<T: Real> SaMaps<T> {
    pub fn from_graph(g: &Graph<T>, out: &SaOutput) -> Self {
        let row = g.value(out.row_soft);
        let (r, c) = row.dims2().expect("square map");
        let m_y = Tensor::from_fn(&[c, r], |idx| row.at2(idx % r, idx / r));
        SaMaps {
            scores: g.value(out.scores).clone(),
            m_y,
            m_x: g.value(out.col_soft).clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// feature attention

pub fn fa_name(prefix: &str, part: &str) -> String {
    format!("{prefix}.{part}")
}

/// Registers the parameters of one FA variant under `prefix`.
pub fn init_fa<T: Real, R: Rng>(
    params: &mut ParamSet<T>,
    rng: &mut R,
    variant: FaVariant,
    prefix: &str,
    d: usize,
    d_prime: usize,
    reduction: usize,
) -> Result<()> {
    let n = |p: &str| fa_name(prefix, p);
    match variant {
        FaVariant::None => Ok(()),
        FaVariant::Fa1 | FaVariant::Fa2 => {
            let d_in = if variant == FaVariant::Fa1 { d } else { 2 * d };
            insert_dense(params, rng, n("w1"), n("b1"), d_in, reduction)?;
            insert_dense(params, rng, n("w2"), n("b2"), reduction, d_prime)
        }
        FaVariant::Fa3 => {
            params.insert(n("norm.gamma"), Tensor::full(&[d], T::one()))?;
            params.insert(n("norm.beta"), Tensor::zeros(&[d]))?;
            insert_dense(params, rng, n("phi_h.w"), n("phi_h.b"), d, d_prime)?;
            insert_dense(params, rng, n("phi_l.w"), n("phi_l.b"), d, d_prime)
        }
    }
}

fn excite<T: Real>(g: &mut Graph<T>, z: Var, bp: &BoundParams, prefix: &str) -> Result<Var> {
    let hidden = g.linear(
        z,
        bp.get(&fa_name(prefix, "w1"))?,
        bp.get(&fa_name(prefix, "b1"))?,
    )?;
    let hidden = g.relu(hidden);
    let out = g.linear(
        hidden,
        bp.get(&fa_name(prefix, "w2"))?,
        bp.get(&fa_name(prefix, "b2"))?,
    )?;
    Ok(g.sigmoid(out))
}

/// FA-1: average-pool squeeze over `(h, l)`, bottleneck excitation, and the
/// resulting `D′` gate broadcast to every position.
pub fn fa1_forward<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    bp: &BoundParams,
    prefix: &str,
) -> Result<Var> {
    let (h, l, _) = g.value(x).dims3()?;
    let z = g.pool(x, &[SpatialAxis::H, SpatialAxis::L], PoolMode::Avg)?;
    let w = excite(g, z, bp, prefix)?;
    g.broadcast(w, h, l)
}

/// FA-2: concatenated average and max squeezes, then as FA-1.
pub fn fa2_forward<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    bp: &BoundParams,
    prefix: &str,
) -> Result<Var> {
    let (h, l, _) = g.value(x).dims3()?;
    let avg = g.pool(x, &[SpatialAxis::H, SpatialAxis::L], PoolMode::Avg)?;
    let max = g.pool(x, &[SpatialAxis::H, SpatialAxis::L], PoolMode::Max)?;
    let z = g.concat(&[avg, max], 0)?;
    let w = excite(g, z, bp, prefix)?;
    g.broadcast(w, h, l)
}

/// FA-3: directional pooling along each spatial axis, sigmoid, per-channel
/// normalization over the concatenated `H+L` rows, separate 1×1 maps for
/// the block and position profiles, and a per-channel outer product.
pub fn fa3_forward<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    bp: &BoundParams,
    prefix: &str,
) -> Result<Var> {
    let (h, l, _) = g.value(x).dims3()?;
    let zh = g.pool(x, &[SpatialAxis::L], PoolMode::Avg)?;
    let zl = g.pool(x, &[SpatialAxis::H], PoolMode::Avg)?;
    let z = g.concat(&[zh, zl], 0)?;
    let z = g.sigmoid(z);
    let n = |p: &str| fa_name(prefix, p);
    let gnorm = g.instance_norm(z, bp.get(&n("norm.gamma"))?, bp.get(&n("norm.beta"))?)?;
    let gh = g.slice(gnorm, 0, h)?;
    let gl = g.slice(gnorm, h, l)?;
    let a = g.linear(gh, bp.get(&n("phi_h.w"))?, bp.get(&n("phi_h.b"))?)?;
    let b = g.linear(gl, bp.get(&n("phi_l.w"))?, bp.get(&n("phi_l.b"))?)?;
    g.outer(a, b)
}

pub fn fa_forward<T: Real>(
    g: &mut Graph<T>,
    variant: FaVariant,
    x: Var,
    bp: &BoundParams,
    prefix: &str,
) -> Result<Option<Var>> {
    Ok(match variant {
        FaVariant::None => None,
        FaVariant::Fa1 => Some(fa1_forward(g, x, bp, prefix)?),
        FaVariant::Fa2 => Some(fa2_forward(g, x, bp, prefix)?),
        FaVariant::Fa3 => Some(fa3_forward(g, x, bp, prefix)?),
    })
}

/// `X′ = SA ⊙ FA`; a missing FA acts as the all-ones tensor.
pub fn combine<T: Real>(g: &mut Graph<T>, sa: Var, fa: Option<Var>) -> Result<Var> {
    match fa {
        None => Ok(sa),
        Some(f) => {
            if g.shape(sa) != g.shape(f) {
                return Err(Error::argument(format!(
                    "cannot combine {:?} with {:?}",
                    g.shape(sa),
                    g.shape(f)
                )));
            }
            g.mul(sa, f)
        }
    }
}
