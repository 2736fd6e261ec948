//! Property tests. Every property runs from a fixed generator seed so that a
//! failure reproduces on rerun.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trisim::afe::{afe_extract, afe_gates, afe_normalize, param_name};
use trisim::attention::{fa1_forward, fa2_forward, fa3_forward, sa_forward, SaMaps, SA_B, SA_W};
use trisim::config::{FaVariant, FusionMode};
use trisim::fusion::{branch_prefix, head_vector, rfm_forward, SHORTCUT_B, SHORTCUT_W};
use trisim::gradcheck::{grad_check_dual, DEFAULT_STEP};
use trisim::gradsuite::{suite_config, TOLERANCE};
use trisim::ops::{conv2d_dilated, softmax_axis, ConvKernel, PoolMode, SoftmaxAxis, SpatialAxis};
use trisim::{dual, Graph, Model, ParamSet, Real, Result, Tensor, Var};

fn config(cases: u32, seed: u64) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(seed),
        failure_persistence: None,
        ..Config::default()
    }
}

fn uniform<T: Real>(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(r.random_range(lo..hi)))
}

/// Values at least `0.1` away from zero, for inputs feeding `relu`/`abs`.
fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = r.random_range(0.1..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// A shuffled ramp: all entries distinct by at least `0.05`, so max-pool
/// winners stay put under the finite-difference step.
fn distinct(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| 0.05 * i as f64 - 0.5).collect();
    v.shuffle(r);
    Tensor::new(shape, v).unwrap()
}

/// Row permutation of the leading `n` rows of width `w`.
fn permute_rows<T: Copy>(data: &[T], perm: &[usize], w: usize) -> Vec<T> {
    perm.iter()
        .flat_map(|&p| data[p * w..(p + 1) * w].iter().copied())
        .collect()
}

fn max_diff<T: Real>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// primitives

pub fn softmax_slices_sum_to_one_at_large_magnitudes() {
    proptest!(config(64, 101), |(seed in any::<u64>(), rows in 1usize..7, cols in 1usize..7)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let m64: Tensor<f64> = uniform(&mut r, &[rows, cols], -1e4, 1e4);
        let m32: Tensor<f32> = m64.cast();
        for axis in [SoftmaxAxis::Rows, SoftmaxAxis::Cols] {
            let s64 = softmax_axis(&m64, axis).unwrap();
            let s32 = softmax_axis(&m32, axis).unwrap();
            let (outer, inner) = if axis == SoftmaxAxis::Cols { (rows, cols) } else { (cols, rows) };
            for o in 0..outer {
                let idx = |i: usize| if axis == SoftmaxAxis::Cols { (o, i) } else { (i, o) };
                let sum64: f64 = (0..inner).map(|i| { let (a, b) = idx(i); s64.at2(a, b) }).sum();
                let sum32: f32 = (0..inner).map(|i| { let (a, b) = idx(i); s32.at2(a, b) }).sum();
                prop_assert!((sum64 - 1.0).abs() < 1e-12, "{sum64}");
                prop_assert!((sum32 - 1.0).abs() < 1e-6, "{sum32}");
                prop_assert!(s64.data().iter().all(|&p| p >= 0.0));
            }
        }
    });
}

pub fn unit_identity_conv_is_exact_identity() {
    proptest!(config(64, 101), |(seed in any::<u64>(), h in 1usize..9, l in 1usize..9, d in 1usize..6)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x: Tensor<f64> = uniform(&mut r, &[h, l, d], -100.0, 100.0);
        let mut k = ConvKernel::zeros(1, 1, d, d);
        for c in 0..d {
            k.set(0, 0, c, c, 1.0);
        }
        prop_assert_eq!(conv2d_dilated(&x, &k, 1).unwrap(), x);
    });
}

pub fn ops_are_deterministic() {
    proptest!(config(64, 101), |(seed in any::<u64>())| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x: Tensor<f32> = uniform(&mut r, &[3, 4, 2], -1.0, 1.0);
        let k = ConvKernel::new(uniform(&mut r, &[3, 3, 2, 2], -1.0, 1.0), uniform(&mut r, &[2], -1.0, 1.0)).unwrap();
        let a = conv2d_dilated(&x, &k, 2).unwrap();
        let b = conv2d_dilated(&x, &k, 2).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    });
}

fn check<P, W>(
    name: &str,
    f: &trisim::gradcheck::Dual<P, W>,
    inputs: &[Tensor<f64>],
) -> std::result::Result<(), TestCaseError>
where
    P: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    W: Fn(&mut Graph<trisim::dd::Dd>, &[Var]) -> Result<Var>,
{
    let r = grad_check_dual(f, inputs, DEFAULT_STEP, None).unwrap();
    prop_assert!(r.passes(TOLERANCE), "{name}: {r:?}");
    Ok(())
}

pub fn every_primitive_gradient_on_random_shapes() {
    proptest!(config(24, 202), |(seed in any::<u64>(), h in 1usize..4, l in 1usize..4, d in 1usize..4)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut sig = |shape: &[usize]| -> Tensor<f64> { uniform(&mut r, shape, -1.0, 1.0) };
        let t3 = [h, l, d];
        let w3 = sig(&t3);
        let wd = sig(&[d]);
        let wl = sig(&[l, d]);
        let x = sig(&t3);
        let y = sig(&t3);

        check("linear", &dual!(|g, v: &[Var]| -> Result<Var> {
            let o = g.linear(v[0], v[1], v[2])?;
            g.weighted_sum(o, w3.cast())
        }), &[x.clone(), sig(&[d, d]), sig(&[d])])?;

        let a = sig(&[h, l]);
        let b = sig(&[l, d]);
        let wm = sig(&[h, d]);
        check("matmul", &dual!(|g, v: &[Var]| -> Result<Var> {
            let o = g.matmul(v[0], v[1], false, false)?;
            g.weighted_sum(o, wm.cast())
        }), &[a.clone(), b.clone()])?;
        let bt = sig(&[d, l]);
        check("matmul_t", &dual!(|g, v: &[Var]| -> Result<Var> {
            let o = g.matmul(v[0], v[1], false, true)?;
            g.weighted_sum(o, wm.cast())
        }), &[a.clone(), bt])?;
        let at = sig(&[l, h]);
        check("matmul_ta", &dual!(|g, v: &[Var]| -> Result<Var> {
            let o = g.matmul(v[0], v[1], true, false)?;
            g.weighted_sum(o, wm.cast())
        }), &[at, b])?;

        let wa = sig(&[h, l]);
        for axis in [SoftmaxAxis::Rows, SoftmaxAxis::Cols] {
            check("softmax", &dual!(|g, v: &[Var]| -> Result<Var> {
                let o = g.softmax(v[0], axis)?;
                g.weighted_sum(o, wa.cast())
            }), std::slice::from_ref(&a))?;
        }

        let kinked = away_from_zero(&mut r, &t3);
        let mut sig = |shape: &[usize]| -> Tensor<f64> { uniform(&mut r, shape, -1.0, 1.0) };
        check("relu", &dual!(|g, v: &[Var]| -> Result<Var> {
            let o = g.relu(v[0]);
            g.weighted_sum(o, w3.cast())
        }), std::slice::from_ref(&kinked))?;
        check("abs", &dual!(|g, v: &[Var]| -> Result<Var> {
            let o = g.abs(v[0]);
            g.weighted_sum(o, w3.cast())
        }), &[kinked])?;
        check("sigmoid", &dual!(|g, v: &[Var]| -> Result<Var> {
            let o = g.sigmoid(v[0]);
            g.weighted_sum(o, w3.cast())
        }), std::slice::from_ref(&x))?;
        check("add_sub_mul", &dual!(|g, v: &[Var]| -> Result<Var> {
            let s = g.add(v[0], v[1])?;
            let t = g.sub(s, v[1])?;
            let t = g.sub(t, v[1])?;
            let m = g.mul(t, v[0])?;
            let m = g.scale(m, trisim::tensor::lit(-1.7));
            g.weighted_sum(m, w3.cast())
        }), &[x.clone(), y.clone()])?;

        let axes: [&[SpatialAxis]; 3] = [&[SpatialAxis::H], &[SpatialAxis::L], &[SpatialAxis::H, SpatialAxis::L]];
        for ax in axes {
            for mode in [PoolMode::Avg, PoolMode::Max] {
                let out = trisim::ops::pool_axis(&x, ax, mode).unwrap();
                let wp = sig(out.shape());
                let input = if mode == PoolMode::Max { distinct(&mut ChaCha8Rng::seed_from_u64(seed ^ 1), &t3) } else { x.clone() };
                check("pool", &dual!(|g, v: &[Var]| -> Result<Var> {
                    let o = g.pool(v[0], ax, mode)?;
                    g.weighted_sum(o, wp.cast())
                }), &[input])?;
            }
        }

        for (k, dil) in [(1usize, 1usize), (3, 1), (3, 2), (2, 3)] {
            let d_out = 2;
            let wc = sig(&[h, l, d_out]);
            check("conv2d", &dual!(|g, v: &[Var]| -> Result<Var> {
                let o = g.conv2d(v[0], v[1], v[2], dil)?;
                g.weighted_sum(o, wc.cast())
            }), &[x.clone(), sig(&[k, k, d, d_out]), sig(&[d_out])])?;
        }

        let rows = h + 1;
        let wn = sig(&[rows, d]);
        check("instance_norm", &dual!(|g, v: &[Var]| -> Result<Var> {
            let o = g.instance_norm(v[0], v[1], v[2])?;
            g.weighted_sum(o, wn.cast())
        }), &[sig(&[rows, d]), sig(&[d]), sig(&[d])])?;

        let wcat = sig(&[h, l, 2 * d]);
        check("concat_slice_reshape", &dual!(|g, v: &[Var]| -> Result<Var> {
            let c = g.concat(&[v[0], v[1]], 2)?;
            let c = g.reshape(c, &[h * l, 2 * d])?;
            let c = g.slice(c, 0, h * l)?;
            let c = g.reshape(c, &[h, l, 2 * d])?;
            g.weighted_sum(c, wcat.cast())
        }), &[x.clone(), y.clone()])?;

        check("broadcast_outer", &dual!(|g, v: &[Var]| -> Result<Var> {
            let b = g.broadcast(v[0], h, l)?;
            let o = g.outer(v[1], v[2])?;
            let m = g.mul(b, o)?;
            g.weighted_sum(m, w3.cast())
        }), &[wd.clone(), sig(&[h, d]), wl.clone()])?;

        let positive: Tensor<f64> = uniform(&mut r, &t3, 0.2, 1.0);
        check("normalize_positions", &dual!(|g, v: &[Var]| -> Result<Var> {
            let o = g.normalize_positions(v[0])?;
            g.weighted_sum(o, w3.cast())
        }), &[positive])?;

        let label = r.random_range(0..d);
        check("softmax_cross_entropy", &dual!(|g, v: &[Var]| -> Result<Var> {
            g.softmax_cross_entropy(v[0], label)
        }), &[wd])?;
    });
}

// ---------------------------------------------------------------------------
// gating

fn afe_params<T: Real>(r: &mut ChaCha8Rng, ids: &[usize], d: usize, red: usize) -> ParamSet<T> {
    let mut p = ParamSet::new();
    for &id in ids {
        p.insert(param_name(id, "w1"), uniform(r, &[red, d], -1.0, 1.0))
            .unwrap();
        p.insert(param_name(id, "b1"), uniform(r, &[red], -1.0, 1.0))
            .unwrap();
        p.insert(param_name(id, "w2"), uniform(r, &[d, red], -1.0, 1.0))
            .unwrap();
        p.insert(param_name(id, "b2"), uniform(r, &[d], -1.0, 1.0))
            .unwrap();
    }
    p
}

fn column_sums<T: Real>(m: &Tensor<T>) -> Vec<f64> {
    let (rows, cols) = m.dims2().unwrap();
    (0..cols)
        .map(|c| (0..rows).map(|r| m.at2(r, c).to_f64_lossy()).sum())
        .collect()
}

fn normalized_gates<T: Real>(block: &Tensor<T>, p: &ParamSet<T>) -> Tensor<T> {
    let mut g = Graph::new();
    let bp = g.bind(p);
    let b = g.leaf(block.clone());
    let raw = afe_gates(&mut g, b, &bp, 0).unwrap();
    let n = afe_normalize(&mut g, raw).unwrap();
    g.value(n).clone()
}

pub fn afe_gate_columns_sum_to_one() {
    proptest!(config(64, 303), |(seed in any::<u64>(), l in 1usize..13, d in 1usize..9, red in 1usize..4)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p64: ParamSet<f64> = afe_params(&mut r, &[0], d, red);
        let block: Tensor<f64> = uniform(&mut r, &[l, d], -3.0, 3.0);
        for s in column_sums(&normalized_gates(&block, &p64)) {
            prop_assert!((s - 1.0).abs() < 1e-12, "{s}");
        }
        let g32 = normalized_gates(&block.cast::<f32>(), &p64.cast::<f32>());
        for s in column_sums(&g32) {
            prop_assert!((s - 1.0).abs() < 1e-6, "{s}");
        }
    });
}

pub fn afe_stack_is_a_contraction() {
    proptest!(config(64, 303), |(seed in any::<u64>(), h in 1usize..4, l in 2usize..9, d in 1usize..6)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<usize> = (0..h).collect();
        let p: ParamSet<f64> = afe_params(&mut r, &ids, d, 2);
        let xv: Tensor<f64> = uniform(&mut r, &[h, l, d], -5.0, 5.0);
        let mut g = Graph::new();
        let bp = g.bind(&p);
        let x = g.leaf(xv.clone());
        let out = afe_extract(&mut g, x, &ids, true, &bp).unwrap();
        for (o, i) in g.value(out).data().iter().zip(xv.data()) {
            prop_assert!(o.abs() <= i.abs());
        }
    });
}

pub fn afe_gates_follow_position_permutations() {
    proptest!(config(64, 303), |(seed in any::<u64>(), l in 1usize..10, d in 1usize..6)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p: ParamSet<f64> = afe_params(&mut r, &[0], d, 3);
        let block: Tensor<f64> = uniform(&mut r, &[l, d], -2.0, 2.0);
        let mut perm: Vec<usize> = (0..l).collect();
        perm.shuffle(&mut r);
        let moved = Tensor::new(&[l, d], permute_rows(block.data(), &perm, d)).unwrap();
        let base = normalized_gates(&block, &p);
        let after = normalized_gates(&moved, &p);
        prop_assert!(max_diff(after.data(), &permute_rows(base.data(), &perm, d)) < 1e-12);
    });
}

// ---------------------------------------------------------------------------
// attention

fn sa_params<T: Real>(r: &mut ChaCha8Rng, d: usize, dp: usize) -> ParamSet<T> {
    let mut p = ParamSet::new();
    p.insert(SA_W, uniform(r, &[dp, d], -1.0, 1.0)).unwrap();
    p.insert(SA_B, uniform(r, &[dp], -1.0, 1.0)).unwrap();
    p
}

fn run_sa(
    x: &Tensor<f32>,
    y: &Tensor<f32>,
    p: &ParamSet<f32>,
) -> (Tensor<f32>, Tensor<f32>, SaMaps<f32>) {
    let mut g = Graph::new();
    let bp = g.bind(p);
    let (xv, yv) = (g.leaf(x.clone()), g.leaf(y.clone()));
    let out = sa_forward(&mut g, xv, yv, &bp, false).unwrap();
    let maps = SaMaps::from_graph(&g, &out);
    (g.value(out.x).clone(), g.value(out.y).clone(), maps)
}

fn fa_dense<T: Real>(r: &mut ChaCha8Rng, d_in: usize, dp: usize) -> ParamSet<T> {
    let mut p = ParamSet::new();
    p.insert("fa.w1", uniform(r, &[3, d_in], -1.0, 1.0))
        .unwrap();
    p.insert("fa.b1", uniform(r, &[3], -1.0, 1.0)).unwrap();
    p.insert("fa.w2", uniform(r, &[dp, 3], -1.0, 1.0)).unwrap();
    p.insert("fa.b2", uniform(r, &[dp], -1.0, 1.0)).unwrap();
    p
}

fn fa3_params(r: &mut ChaCha8Rng, d: usize, dp: usize) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    p.insert("fa.norm.gamma", uniform(r, &[d], 0.5, 1.5))
        .unwrap();
    p.insert("fa.norm.beta", uniform(r, &[d], -1.0, 1.0))
        .unwrap();
    for side in ["phi_h", "phi_l"] {
        p.insert(format!("fa.{side}.w"), uniform(r, &[dp, d], -1.0, 1.0))
            .unwrap();
        p.insert(format!("fa.{side}.b"), uniform(r, &[dp], -1.0, 1.0))
            .unwrap();
    }
    p
}

fn fa3(x: &Tensor<f64>, p: &ParamSet<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let bp = g.bind(p);
    let xv = g.leaf(x.clone());
    let out = fa3_forward(&mut g, xv, &bp, "fa").unwrap();
    g.value(out).clone()
}

/// Permutes axis 0 (`along_h`) or axis 1 of an `H×L×D` tensor.
fn permute_axis(t: &Tensor<f64>, perm: &[usize], along_h: bool) -> Tensor<f64> {
    let (h, l, d) = t.dims3().unwrap();
    Tensor::from_fn(&[h, l, d], |idx| {
        let (i, j, c) = (idx / (l * d), (idx / d) % l, idx % d);
        if along_h {
            t.at3(perm[i], j, c)
        } else {
            t.at3(i, perm[j], c)
        }
    })
}

pub fn sa_maps_are_stochastic() {
    proptest!(config(64, 404), |(seed in any::<u64>(), h in 1usize..4, l in 1usize..7, d in 1usize..9)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut r, &[h, l, d], -2.0, 2.0);
        let y = uniform(&mut r, &[h, l, d], -2.0, 2.0);
        let (_, _, maps) = run_sa(&x, &y, &sa_params(&mut r, d, 2));
        let n = h * l;
        for i in 0..n {
            let s: f32 = (0..n).map(|j| maps.m_y.at2(j, i)).sum();
            prop_assert!((s - 1.0).abs() < 1e-6, "m_y column {i}: {s}");
        }
        for j in 0..n {
            let s: f32 = (0..n).map(|i| maps.m_x.at2(i, j)).sum();
            prop_assert!((s - 1.0).abs() < 1e-6, "m_x column {j}: {s}");
        }
    });
}

pub fn sa_ignores_partner_order() {
    proptest!(config(64, 404), |(seed in any::<u64>(), h in 1usize..4, l in 1usize..7, d in 1usize..9)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut r, &[h, l, d], -1.0, 1.0);
        let y = uniform(&mut r, &[h, l, d], -1.0, 1.0);
        let p = sa_params(&mut r, d, 3);
        let mut perm: Vec<usize> = (0..h * l).collect();
        perm.shuffle(&mut r);
        let y_perm = Tensor::new(&[h, l, d], permute_rows(y.data(), &perm, d)).unwrap();
        let (xa, ya, _) = run_sa(&x, &y, &p);
        let (xb, yb, _) = run_sa(&x, &y_perm, &p);
        prop_assert!(max_diff(xa.data(), xb.data()) < 1e-6);
        prop_assert!(max_diff(yb.data(), &permute_rows(ya.data(), &perm, 3)) < 1e-6);
    });
}

pub fn fa1_fa2_ignore_spatial_order() {
    proptest!(config(64, 404), |(seed in any::<u64>(), h in 1usize..4, l in 1usize..7, d in 1usize..6)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x: Tensor<f32> = uniform(&mut r, &[h, l, d], -2.0, 2.0);
        let mut perm: Vec<usize> = (0..h * l).collect();
        perm.shuffle(&mut r);
        let moved = Tensor::new(&[h, l, d], permute_rows(x.data(), &perm, d)).unwrap();
        for variant in [FaVariant::Fa1, FaVariant::Fa2] {
            let d_in = if variant == FaVariant::Fa1 { d } else { 2 * d };
            let p: ParamSet<f32> = fa_dense(&mut r, d_in, 2);
            let run = |t: &Tensor<f32>| {
                let mut g = Graph::new();
                let bp = g.bind(&p);
                let v = g.leaf(t.clone());
                let out = if variant == FaVariant::Fa1 {
                    fa1_forward(&mut g, v, &bp, "fa")
                } else {
                    fa2_forward(&mut g, v, &bp, "fa")
                }
                .unwrap();
                g.value(out).clone()
            };
            let (a, b) = (run(&x), run(&moved));
            prop_assert!(a.data().iter().all(|&w| w > 0.0 && w < 1.0));
            prop_assert!(max_diff(a.data(), b.data()) < 1e-6, "{variant:?}");
        }
    });
}

pub fn fa3_follows_row_and_column_permutations() {
    proptest!(config(64, 404), |(seed in any::<u64>(), h in 1usize..5, l in 1usize..7, d in 1usize..6)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x: Tensor<f64> = uniform(&mut r, &[h, l, d], -2.0, 2.0);
        let p = fa3_params(&mut r, d, 3);
        let base = fa3(&x, &p);
        for (along_h, n) in [(true, h), (false, l)] {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut r);
            let moved = fa3(&permute_axis(&x, &perm, along_h), &p);
            prop_assert!(max_diff(moved.data(), permute_axis(&base, &perm, along_h).data()) < 1e-12);
        }
    });
}

// ---------------------------------------------------------------------------
// fusion and the full network

fn rfm_params(
    r: &mut ChaCha8Rng,
    psi: &[usize],
    phi: usize,
    dp: usize,
    dd: usize,
) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (i, &s) in psi.iter().enumerate() {
        p.insert(
            branch_prefix(i + 1, "psi.w"),
            uniform(r, &[s, s, dp, dd], -0.5, 0.5),
        )
        .unwrap();
        p.insert(branch_prefix(i + 1, "psi.b"), uniform(r, &[dd], -0.5, 0.5))
            .unwrap();
        p.insert(
            branch_prefix(i + 1, "phi.w"),
            uniform(r, &[phi, phi, dd, dd], -0.5, 0.5),
        )
        .unwrap();
        p.insert(branch_prefix(i + 1, "phi.b"), uniform(r, &[dd], -0.5, 0.5))
            .unwrap();
    }
    p.insert(SHORTCUT_W, uniform(r, &[dd, dp], -0.5, 0.5))
        .unwrap();
    p.insert(SHORTCUT_B, uniform(r, &[dd], -0.5, 0.5)).unwrap();
    p
}

fn pair(r: &mut ChaCha8Rng, model: &Model<f32>) -> (Tensor<f32>, Tensor<f32>) {
    let e = &model.config().encoder;
    let h = model.block_ids().len();
    (
        uniform(r, &[h, e.l, e.d], -1.0, 1.0),
        uniform(r, &[h, e.l, e.d], -1.0, 1.0),
    )
}

const CELLS: [(FaVariant, FusionMode); 8] = [
    (FaVariant::None, FusionMode::Rfm),
    (FaVariant::Fa1, FusionMode::Rfm),
    (FaVariant::Fa2, FusionMode::Rfm),
    (FaVariant::Fa3, FusionMode::Rfm),
    (FaVariant::None, FusionMode::Pooling),
    (FaVariant::Fa1, FusionMode::Pooling),
    (FaVariant::Fa2, FusionMode::Pooling),
    (FaVariant::Fa3, FusionMode::Pooling),
];

pub fn rfm_output_is_in_unit_interval_and_keeps_spatial_dims() {
    proptest!(config(48, 505), |(seed in any::<u64>(), h in 1usize..5, l in 1usize..9, k in 1usize..5, phi_half in 0usize..4, psi_half in proptest::collection::vec(0usize..4, 4), rates in proptest::collection::vec(1usize..5, 4))| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (dp, dd) = (3, 2);
        let psi: Vec<usize> = psi_half[..k].iter().map(|s| 2 * s + 1).collect();
        let p = rfm_params(&mut r, &psi, 2 * phi_half + 1, dp, dd);
        let xv: Tensor<f64> = uniform(&mut r, &[h, l, dp], -1.0, 1.0);
        let mut g = Graph::new();
        let bp = g.bind(&p);
        let x = g.leaf(xv);
        let out = rfm_forward(&mut g, x, &rates[..k], &bp).unwrap();
        prop_assert_eq!(g.shape(out), &[h, l, (k + 1) * dd]);
        prop_assert!(g.value(out).data().iter().all(|&v| v > 0.0 && v < 1.0));
    });
}

pub fn probabilities_sum_to_one() {
    proptest!(config(48, 505), |(seed in any::<u64>(), cell in 0usize..8)| {
        let (fa, fusion) = CELLS[cell];
        let model = Model::<f32>::init(&suite_config(fa, fusion), seed).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = pair(&mut r, &model);
        let probs = model.predict(&x, &y).unwrap();
        prop_assert!(probs.iter().all(|&q| q >= 0.0));
        prop_assert!((probs.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    });
}

pub fn swapping_the_pair_swaps_the_branches_exactly() {
    proptest!(config(48, 505), |(seed in any::<u64>(), cell in 0usize..8)| {
        let (fa, fusion) = CELLS[cell];
        let model = Model::<f32>::init(&suite_config(fa, fusion), seed).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (xv, yv) = pair(&mut r, &model);
        let run = |a: &Tensor<f32>, b: &Tensor<f32>| {
            let mut g = Graph::new();
            let bp = g.bind(model.params());
            let (x, y) = (g.leaf(a.clone()), g.leaf(b.clone()));
            let f = model.forward(&mut g, &bp, x, y).unwrap();
            (g.value(f.x_prime).clone(), g.value(f.y_prime).clone())
        };
        let (xp, yp) = run(&xv, &yv);
        let (xs, ys) = run(&yv, &xv);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&xp), bits(&ys));
        prop_assert_eq!(bits(&yp), bits(&xs));
    });
}

pub fn product_segment_is_swap_invariant() {
    proptest!(config(48, 505), |(seed in any::<u64>(), h in 1usize..4, l in 1usize..7, c in 1usize..6)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let xv: Tensor<f32> = uniform(&mut r, &[h, l, c], -1.0, 1.0);
        let yv: Tensor<f32> = uniform(&mut r, &[h, l, c], -1.0, 1.0);
        let mut g = Graph::new();
        let (x, y) = (g.leaf(xv), g.leaf(yv));
        let a = head_vector(&mut g, x, y).unwrap();
        let b = head_vector(&mut g, y, x).unwrap();
        let (a, b) = (g.value(a).data(), g.value(b).data());
        prop_assert_eq!(&a[2 * c..], &b[2 * c..]);
        prop_assert_eq!(&a[..c], &b[c..2 * c]);
        prop_assert_eq!(&a[c..2 * c], &b[..c]);
    });
}
