//! Feature fusion (the receptive-field block and the pooling baseline) and
//! the classifier head.

use rand::Rng;

use crate::config::FusionConfig;
use crate::error::{Error, Result};
use crate::graph::{BoundParams, Graph, Var};
use crate::ops::{PoolMode, SpatialAxis};
use crate::params::{insert_conv, insert_dense, ParamSet};
use crate::tensor::Real;

pub fn branch_prefix(i: usize, part: &str) -> String {
    format!("rfm.branch{i}.{part}")
}

pub const SHORTCUT_W: &str = "rfm.shortcut.w";
pub const SHORTCUT_B: &str = "rfm.shortcut.b";

/// Registers `k` branches (ψ then dilated φ) plus the 1×1 shortcut.
pub fn init_rfm<T: Real, R: Rng>(
    params: &mut ParamSet<T>,
    rng: &mut R,
    cfg: &FusionConfig,
    d_prime: usize,
) -> Result<()> {
    let dd = cfg.d_dprime;
    for i in 1..=cfg.k {
        insert_conv(
            params,
            rng,
            &branch_prefix(i, "psi"),
            cfg.psi_sizes[i - 1],
            d_prime,
            dd,
        )?;
        insert_conv(params, rng, &branch_prefix(i, "phi"), cfg.phi_size, dd, dd)?;
    }
    insert_dense(
        params,
        rng,
        SHORTCUT_W.into(),
        SHORTCUT_B.into(),
        d_prime,
        dd,
    )
}

/// `sigmoid([relu(φ_1(ψ_1 x)); …; relu(φ_k(ψ_k x)); φ_0 x])` on the feature
/// axis. Branch `i` uses dilation `dilations[i - 1]`.
pub fn rfm_forward<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    dilations: &[usize],
    bp: &BoundParams,
) -> Result<Var> {
    g.value(x).dims3()?;
    let mut parts = Vec::with_capacity(dilations.len() + 1);
    for (i, &r) in dilations.iter().enumerate() {
        let n = |p: &str| branch_prefix(i + 1, p);
        let psi = g.conv2d(x, bp.get(&n("psi.w"))?, bp.get(&n("psi.b"))?, 1)?;
        let phi = g.conv2d(psi, bp.get(&n("phi.w"))?, bp.get(&n("phi.b"))?, r)?;
        parts.push(g.relu(phi));
    }
    parts.push(g.linear(x, bp.get(SHORTCUT_W)?, bp.get(SHORTCUT_B)?)?);
    let cat = g.concat(&parts, 2)?;
    Ok(g.sigmoid(cat))
}

/// `[u_max; u_avg; v_max; v_avg; u_avg ⊙ v_avg; |u_avg − v_avg|]`.
pub fn pooling_fusion<T: Real>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
    if g.shape(x) != g.shape(y) {
        return Err(Error::shape(format!(
            "pooling fusion of {:?} and {:?}",
            g.shape(x),
            g.shape(y)
        )));
    }
    let both = [SpatialAxis::H, SpatialAxis::L];
    let u_max = g.pool(x, &both, PoolMode::Max)?;
    let u_avg = g.pool(x, &both, PoolMode::Avg)?;
    let v_max = g.pool(y, &both, PoolMode::Max)?;
    let v_avg = g.pool(y, &both, PoolMode::Avg)?;
    let prod = g.mul(u_avg, v_avg)?;
    let diff = g.sub(u_avg, v_avg)?;
    let dist = g.abs(diff);
    g.concat(&[u_max, u_avg, v_max, v_avg, prod, dist], 0)
}

/// `v = GAP([x; y; x ⊙ y])` over `(h, l)`.
pub fn head_vector<T: Real>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
    let prod = g.mul(x, y)?;
    let cat = g.concat(&[x, y, prod], 2)?;
    g.pool(cat, &[SpatialAxis::H, SpatialAxis::L], PoolMode::Avg)
}

pub fn init_head<T: Real, R: Rng>(
    params: &mut ParamSet<T>,
    rng: &mut R,
    d_in: usize,
    hidden: usize,
    labels: usize,
) -> Result<()> {
    insert_dense(
        params,
        rng,
        "head.w1".into(),
        "head.b1".into(),
        d_in,
        hidden,
    )?;
    insert_dense(
        params,
        rng,
        "head.w2".into(),
        "head.b2".into(),
        hidden,
        labels,
    )
}

/// Logits `W_2 relu(W_1 v + b_1) + b_2`; the softmax is left to the loss or
/// to [`crate::ops::softmax_vec`].
pub fn head_logits<T: Real>(g: &mut Graph<T>, v: Var, bp: &BoundParams) -> Result<Var> {
    let h = g.linear(v, bp.get("head.w1")?, bp.get("head.b1")?)?;
    let h = g.relu(h);
    g.linear(h, bp.get("head.w2")?, bp.get("head.b2")?)
}
