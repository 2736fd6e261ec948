//! Independent loop implementations of every forward stage, compared against
//! the library on random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trisim::afe::{afe_extract, param_name};
use trisim::attention::{fa1_forward, fa2_forward, fa3_forward, sa_forward, SaMaps, SA_B, SA_W};
use trisim::fusion::{
    branch_prefix, head_logits, head_vector, pooling_fusion, rfm_forward, SHORTCUT_B, SHORTCUT_W,
};
use trisim::ops::{conv2d_dilated, conv_offset, softmax_vec, ConvKernel};
use trisim::{Graph, ParamSet, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn assert_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (i, (a, b)) in got.iter().zip(want).enumerate() {
        assert!((a - b).abs() <= tol, "{what}[{i}]: {a} vs {b}");
    }
}

/// `w` is `[d_out, d_in]`.
fn dense(x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), d_in);
    (0..d_out)
        .map(|j| {
            let mut s = b.data()[j];
            for i in 0..d_in {
                s += w.data()[j * d_in + i] * x[i];
            }
            s
        })
        .collect()
}

/// Zero-pads `a` explicitly, then sums `P(i + m·r, j + n·r, d)·K(m, n, d, d')`.
fn conv_oracle(a: &Tensor<f64>, k: &ConvKernel<f64>, r: usize) -> Vec<f64> {
    let (h, l, d_in) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (kh, kl, _, d_out) = k.dims();
    let (oh, ol) = (conv_offset(kh, r), conv_offset(kl, r));
    let (ph, pl) = (h + (kh - 1) * r, l + (kl - 1) * r);
    let mut pad = vec![vec![vec![0.0; d_in]; pl]; ph];
    for i in 0..h {
        for j in 0..l {
            for d in 0..d_in {
                pad[i + oh][j + ol][d] = a.at3(i, j, d);
            }
        }
    }
    let w = |m: usize, n: usize, d: usize, e: usize| {
        k.weight.data()[((m * kl + n) * d_in + d) * d_out + e]
    };
    let mut out = Vec::with_capacity(h * l * d_out);
    for i in 0..h {
        for j in 0..l {
            for e in 0..d_out {
                let mut s = k.bias.data()[e];
                for m in 0..kh {
                    for n in 0..kl {
                        for d in 0..d_in {
                            s += pad[i + m * r][j + n * r][d] * w(m, n, d, e);
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

pub fn conv_matches_padded_loop_oracle_exhaustively() {
    let mut r = rng(19);
    let mut cases = 0;
    for h in 1..=8 {
        for l in 1..=8 {
            for kh in 1..=3 {
                for kl in 1..=3 {
                    for dil in 1..=3 {
                        let a = random(&mut r, &[h, l, 2]);
                        let k =
                            ConvKernel::new(random(&mut r, &[kh, kl, 2, 3]), random(&mut r, &[3]))
                                .unwrap();
                        let got = conv2d_dilated(&a, &k, dil).unwrap();
                        assert_eq!(got.shape(), &[h, l, 3]);
                        let want = conv_oracle(&a, &k, dil);
                        assert_close(
                            got.data(),
                            &want,
                            1e-12,
                            &format!("conv {h}x{l} k{kh}x{kl} r{dil}"),
                        );
                        cases += 1;
                    }
                }
            }
        }
    }
    assert_eq!(cases, 8 * 8 * 3 * 3 * 3);
}

pub fn conv_rejects_zero_dilation() {
    let k = ConvKernel::<f64>::zeros(3, 3, 1, 1);
    assert!(conv2d_dilated(&Tensor::zeros(&[2, 2, 1]), &k, 0).is_err());
}

fn sa_params(r: &mut ChaCha8Rng, d: usize, dp: usize) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    p.insert(SA_W, random(r, &[dp, d])).unwrap();
    p.insert(SA_B, random(r, &[dp])).unwrap();
    p
}

struct SaOracle {
    scores: Vec<Vec<f64>>,
    /// `m_y[j][i]`
    m_y: Vec<Vec<f64>>,
    /// `m_x[i][j]`
    m_x: Vec<Vec<f64>>,
    x: Vec<f64>,
    y: Vec<f64>,
}

fn sa_oracle(x: &Tensor<f64>, y: &Tensor<f64>, p: &ParamSet<f64>, scale: bool) -> SaOracle {
    let d = x.shape()[2];
    let n = x.len() / d;
    let row = |t: &Tensor<f64>, i: usize| t.data()[i * d..(i + 1) * d].to_vec();
    let factor = if scale { 1.0 / (d as f64).sqrt() } else { 1.0 };
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let (k, q) = (row(x, i), row(y, j));
            s[i][j] = factor * (0..d).map(|c| k[c] * q[c]).sum::<f64>();
        }
    }
    let mut m_y = vec![vec![0.0; n]; n];
    for i in 0..n {
        let z: f64 = (0..n).map(|j| s[i][j].exp()).sum();
        for j in 0..n {
            m_y[j][i] = s[i][j].exp() / z;
        }
    }
    let mut m_x = vec![vec![0.0; n]; n];
    for j in 0..n {
        let z: f64 = (0..n).map(|i| s[i][j].exp()).sum();
        for i in 0..n {
            m_x[i][j] = s[i][j].exp() / z;
        }
    }
    let (w, b) = (p.value(SA_W).unwrap(), p.value(SA_B).unwrap());
    let mut xo = Vec::new();
    let mut yo = Vec::new();
    for i in 0..n {
        let mut acc = vec![0.0; d];
        for j in 0..n {
            for c in 0..d {
                acc[c] += m_y[j][i] * row(y, j)[c];
            }
        }
        xo.extend(dense(&acc, w, b));
    }
    for j in 0..n {
        let mut acc = vec![0.0; d];
        for i in 0..n {
            for c in 0..d {
                acc[c] += m_x[i][j] * row(x, i)[c];
            }
        }
        yo.extend(dense(&acc, w, b));
    }
    SaOracle {
        scores: s,
        m_y,
        m_x,
        x: xo,
        y: yo,
    }
}

pub fn spatial_attention_matches_double_loop_oracle() {
    let mut r = rng(7);
    for scale in [false, true] {
        for _ in 0..5 {
            let (h, l, d, dp) = (2, 3, 4, 3);
            let xv = random(&mut r, &[h, l, d]);
            let yv = random(&mut r, &[h, l, d]);
            let p = sa_params(&mut r, d, dp);
            let mut g = Graph::new();
            let bp = g.bind(&p);
            let (x, y) = (g.leaf(xv.clone()), g.leaf(yv.clone()));
            let out = sa_forward(&mut g, x, y, &bp, scale).unwrap();
            let maps = SaMaps::from_graph(&g, &out);
            let want = sa_oracle(&xv, &yv, &p, scale);
            assert_eq!(g.shape(out.x), &[h, l, dp]);
            assert_close(g.value(out.x).data(), &want.x, 1e-9, "x_sa");
            assert_close(g.value(out.y).data(), &want.y, 1e-9, "y_sa");
            let flat = |m: &Vec<Vec<f64>>| m.iter().flatten().copied().collect::<Vec<_>>();
            assert_close(maps.scores.data(), &flat(&want.scores), 1e-9, "scores");
            assert_close(maps.m_y.data(), &flat(&want.m_y), 1e-9, "m_y");
            assert_close(maps.m_x.data(), &flat(&want.m_x), 1e-9, "m_x");
        }
    }
}

fn fa_dense_params(r: &mut ChaCha8Rng, d_in: usize, red: usize, dp: usize) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    p.insert("fa.w1", random(r, &[red, d_in])).unwrap();
    p.insert("fa.b1", random(r, &[red])).unwrap();
    p.insert("fa.w2", random(r, &[dp, red])).unwrap();
    p.insert("fa.b2", random(r, &[dp])).unwrap();
    p
}

fn excite_oracle(z: &[f64], p: &ParamSet<f64>) -> Vec<f64> {
    let hidden: Vec<f64> = dense(z, p.value("fa.w1").unwrap(), p.value("fa.b1").unwrap())
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    dense(
        &hidden,
        p.value("fa.w2").unwrap(),
        p.value("fa.b2").unwrap(),
    )
    .into_iter()
    .map(sig)
    .collect()
}

fn squeeze(x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let (h, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut avg = vec![0.0; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for i in 0..h {
        for j in 0..l {
            for c in 0..d {
                avg[c] += x.at3(i, j, c);
                max[c] = max[c].max(x.at3(i, j, c));
            }
        }
    }
    for a in &mut avg {
        *a /= (h * l) as f64;
    }
    (avg, max)
}

fn broadcast(w: &[f64], positions: usize) -> Vec<f64> {
    (0..positions).flat_map(|_| w.iter().copied()).collect()
}

pub fn fa1_and_fa2_match_loop_oracles() {
    let mut r = rng(11);
    let (h, l, d, red, dp) = (3, 4, 5, 2, 3);
    for spike in [false, true] {
        let mut xv = random(&mut r, &[h, l, d]);
        if spike {
            xv.data_mut()[(2 * l + 1) * d + 3] = 40.0;
        }
        let (avg, max) = squeeze(&xv);
        if spike {
            assert_eq!(max[3], 40.0);
            assert!(avg[3] < 40.0 / (h * l) as f64 + 1.0);
        }

        let p1 = fa_dense_params(&mut r, d, red, dp);
        let mut g = Graph::new();
        let bp = g.bind(&p1);
        let x = g.leaf(xv.clone());
        let out = fa1_forward(&mut g, x, &bp, "fa").unwrap();
        let want = broadcast(&excite_oracle(&avg, &p1), h * l);
        assert_close(g.value(out).data(), &want, 1e-12, "fa1");

        let p2 = fa_dense_params(&mut r, 2 * d, red, dp);
        let mut g = Graph::new();
        let bp = g.bind(&p2);
        let x = g.leaf(xv.clone());
        let out = fa2_forward(&mut g, x, &bp, "fa").unwrap();
        let z: Vec<f64> = avg.iter().chain(&max).copied().collect();
        let want = broadcast(&excite_oracle(&z, &p2), h * l);
        assert_close(g.value(out).data(), &want, 1e-12, "fa2");
    }
}

fn fa3_params(r: &mut ChaCha8Rng, d: usize, dp: usize) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    p.insert(
        "fa.norm.gamma",
        Tensor::from_fn(&[d], |_| r.random_range(0.5..1.5)),
    )
    .unwrap();
    p.insert("fa.norm.beta", random(r, &[d])).unwrap();
    p.insert("fa.phi_h.w", random(r, &[dp, d])).unwrap();
    p.insert("fa.phi_h.b", random(r, &[dp])).unwrap();
    p.insert("fa.phi_l.w", random(r, &[dp, d])).unwrap();
    p.insert("fa.phi_l.b", random(r, &[dp])).unwrap();
    p
}

fn fa3_oracle(x: &Tensor<f64>, p: &ParamSet<f64>) -> Vec<f64> {
    let (h, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    // directional means
    let mut rows = Vec::with_capacity(h + l);
    for i in 0..h {
        rows.push(
            (0..d)
                .map(|c| (0..l).map(|j| x.at3(i, j, c)).sum::<f64>() / l as f64)
                .collect::<Vec<_>>(),
        );
    }
    for j in 0..l {
        rows.push(
            (0..d)
                .map(|c| (0..h).map(|i| x.at3(i, j, c)).sum::<f64>() / h as f64)
                .collect::<Vec<_>>(),
        );
    }
    // sigmoid, then per-column normalization with population variance
    for row in &mut rows {
        for v in row.iter_mut() {
            *v = sig(*v);
        }
    }
    let n = (h + l) as f64;
    let (gamma, beta) = (
        p.value("fa.norm.gamma").unwrap(),
        p.value("fa.norm.beta").unwrap(),
    );
    let mut normed = rows.clone();
    for c in 0..d {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        for (k, r) in rows.iter().enumerate() {
            normed[k][c] = gamma.data()[c] * (r[c] - mean) / (var + 1e-5).sqrt() + beta.data()[c];
        }
    }
    let a: Vec<Vec<f64>> = normed[..h]
        .iter()
        .map(|r| {
            dense(
                r,
                p.value("fa.phi_h.w").unwrap(),
                p.value("fa.phi_h.b").unwrap(),
            )
        })
        .collect();
    let b: Vec<Vec<f64>> = normed[h..]
        .iter()
        .map(|r| {
            dense(
                r,
                p.value("fa.phi_l.w").unwrap(),
                p.value("fa.phi_l.b").unwrap(),
            )
        })
        .collect();
    let dp = a[0].len();
    let mut out = Vec::with_capacity(h * l * dp);
    for ai in &a {
        for bj in &b {
            for e in 0..dp {
                out.push(ai[e] * bj[e]);
            }
        }
    }
    out
}

pub fn fa3_matches_step_by_step_oracle() {
    let mut r = rng(13);
    for (h, l) in [(3, 4), (1, 1), (2, 5)] {
        let (d, dp) = (5, 3);
        let xv = random(&mut r, &[h, l, d]);
        let p = fa3_params(&mut r, d, dp);
        let mut g = Graph::new();
        let bp = g.bind(&p);
        let x = g.leaf(xv.clone());
        let out = fa3_forward(&mut g, x, &bp, "fa").unwrap();
        assert_eq!(g.shape(out), &[h, l, dp]);
        assert_close(
            g.value(out).data(),
            &fa3_oracle(&xv, &p),
            1e-9,
            &format!("fa3 {h}x{l}"),
        );
    }
}

fn rfm_params(r: &mut ChaCha8Rng, psi: &[usize], dp: usize, dd: usize) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (i, &s) in psi.iter().enumerate() {
        p.insert(branch_prefix(i + 1, "psi.w"), random(r, &[s, s, dp, dd]))
            .unwrap();
        p.insert(branch_prefix(i + 1, "psi.b"), random(r, &[dd]))
            .unwrap();
        p.insert(branch_prefix(i + 1, "phi.w"), random(r, &[3, 3, dd, dd]))
            .unwrap();
        p.insert(branch_prefix(i + 1, "phi.b"), random(r, &[dd]))
            .unwrap();
    }
    p.insert(SHORTCUT_W, random(r, &[dd, dp])).unwrap();
    p.insert(SHORTCUT_B, random(r, &[dd])).unwrap();
    p
}

fn rfm_oracle(x: &Tensor<f64>, p: &ParamSet<f64>, dilations: &[usize]) -> Vec<f64> {
    let (h, l, dp) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let kernel = |w: &str, b: &str| {
        ConvKernel::new(p.value(w).unwrap().clone(), p.value(b).unwrap().clone()).unwrap()
    };
    let mut parts: Vec<Vec<f64>> = Vec::new();
    for (i, &r) in dilations.iter().enumerate() {
        let n = |s: &str| branch_prefix(i + 1, s);
        let psi = conv_oracle(x, &kernel(&n("psi.w"), &n("psi.b")), 1);
        let dd = psi.len() / (h * l);
        let psi = Tensor::tensor3(h, l, dd, psi).unwrap();
        let phi = conv_oracle(&psi, &kernel(&n("phi.w"), &n("phi.b")), r);
        parts.push(phi.into_iter().map(|v| v.max(0.0)).collect());
    }
    let (w, b) = (p.value(SHORTCUT_W).unwrap(), p.value(SHORTCUT_B).unwrap());
    parts.push(
        (0..h * l)
            .flat_map(|pos| dense(&x.data()[pos * dp..(pos + 1) * dp], w, b))
            .collect(),
    );
    let widths: Vec<usize> = parts.iter().map(|q| q.len() / (h * l)).collect();
    let mut out = Vec::new();
    for pos in 0..h * l {
        for (q, &wd) in parts.iter().zip(&widths) {
            out.extend(q[pos * wd..(pos + 1) * wd].iter().map(|&v| sig(v)));
        }
    }
    out
}

pub fn rfm_matches_per_branch_oracle() {
    let mut r = rng(17);
    for (h, l) in [(2, 3), (3, 5), (4, 4)] {
        let (dp, dd) = (3, 2);
        let xv = random(&mut r, &[h, l, dp]);
        let p = rfm_params(&mut r, &[1, 3], dp, dd);
        let mut g = Graph::new();
        let bp = g.bind(&p);
        let x = g.leaf(xv.clone());
        let out = rfm_forward(&mut g, x, &[1, 2], &bp).unwrap();
        assert_eq!(g.shape(out), &[h, l, 3 * dd]);
        assert_close(
            g.value(out).data(),
            &rfm_oracle(&xv, &p, &[1, 2]),
            1e-9,
            "rfm",
        );
    }
}

pub fn pooling_fusion_matches_loop_oracle() {
    let mut r = rng(23);
    let xv = random(&mut r, &[3, 4, 5]);
    let yv = random(&mut r, &[3, 4, 5]);
    let mut g = Graph::new();
    let (x, y) = (g.leaf(xv.clone()), g.leaf(yv.clone()));
    let out = pooling_fusion(&mut g, x, y).unwrap();
    let (ua, um) = squeeze(&xv);
    let (va, vm) = squeeze(&yv);
    let mut want = Vec::new();
    want.extend(&um);
    want.extend(&ua);
    want.extend(&vm);
    want.extend(&va);
    want.extend(ua.iter().zip(&va).map(|(a, b)| a * b));
    want.extend(ua.iter().zip(&va).map(|(a, b)| (a - b).abs()));
    assert_close(g.value(out).data(), &want, 1e-12, "pooling fusion");
}

pub fn head_matches_loop_oracle() {
    let mut r = rng(29);
    let (h, l, c, hidden, labels) = (2, 3, 4, 5, 3);
    let xv = random(&mut r, &[h, l, c]);
    let yv = random(&mut r, &[h, l, c]);
    let mut p = ParamSet::new();
    p.insert("head.w1", random(&mut r, &[hidden, 3 * c]))
        .unwrap();
    p.insert("head.b1", random(&mut r, &[hidden])).unwrap();
    p.insert("head.w2", random(&mut r, &[labels, hidden]))
        .unwrap();
    p.insert("head.b2", random(&mut r, &[labels])).unwrap();
    let mut g = Graph::new();
    let bp = g.bind(&p);
    let (x, y) = (g.leaf(xv.clone()), g.leaf(yv.clone()));
    let v = head_vector(&mut g, x, y).unwrap();
    let logits = head_logits(&mut g, v, &bp).unwrap();
    let probs = softmax_vec(g.value(logits).data());

    let mut vo = vec![0.0; 3 * c];
    for pos in 0..h * l {
        for k in 0..c {
            let (a, b) = (xv.data()[pos * c + k], yv.data()[pos * c + k]);
            vo[k] += a;
            vo[c + k] += b;
            vo[2 * c + k] += a * b;
        }
    }
    for e in &mut vo {
        *e /= (h * l) as f64;
    }
    assert_close(g.value(v).data(), &vo, 1e-12, "head vector");
    let hid: Vec<f64> = dense(
        &vo,
        p.value("head.w1").unwrap(),
        p.value("head.b1").unwrap(),
    )
    .into_iter()
    .map(|z| z.max(0.0))
    .collect();
    let z = dense(
        &hid,
        p.value("head.w2").unwrap(),
        p.value("head.b2").unwrap(),
    );
    let total: f64 = z.iter().map(|q| q.exp()).sum();
    let want: Vec<f64> = z.iter().map(|q| q.exp() / total).collect();
    assert_close(&probs, &want, 1e-9, "probabilities");
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

pub fn afe_matches_loop_oracle() {
    let mut r = rng(31);
    let (h, l, d, red) = (3, 4, 5, 2);
    let ids = [0usize, 2, 5];
    let xv = random(&mut r, &[h, l, d]);
    let mut p = ParamSet::new();
    for &id in &ids {
        p.insert(param_name(id, "w1"), random(&mut r, &[red, d]))
            .unwrap();
        p.insert(param_name(id, "b1"), random(&mut r, &[red]))
            .unwrap();
        p.insert(param_name(id, "w2"), random(&mut r, &[d, red]))
            .unwrap();
        p.insert(param_name(id, "b2"), random(&mut r, &[d]))
            .unwrap();
    }
    let mut g = Graph::new();
    let bp = g.bind(&p);
    let x = g.leaf(xv.clone());
    let out = afe_extract(&mut g, x, &ids, true, &bp).unwrap();

    let mut want = vec![0.0; h * l * d];
    for (hh, &id) in ids.iter().enumerate() {
        let gate = |pos: usize| -> Vec<f64> {
            let row = &xv.data()[(hh * l + pos) * d..(hh * l + pos + 1) * d];
            let hid: Vec<f64> = dense(
                row,
                p.value(&param_name(id, "w1")).unwrap(),
                p.value(&param_name(id, "b1")).unwrap(),
            )
            .into_iter()
            .map(|z| z.max(0.0))
            .collect();
            dense(
                &hid,
                p.value(&param_name(id, "w2")).unwrap(),
                p.value(&param_name(id, "b2")).unwrap(),
            )
            .into_iter()
            .map(sig)
            .collect()
        };
        let gates: Vec<Vec<f64>> = (0..l).map(gate).collect();
        for c in 0..d {
            let sum: f64 = gates.iter().map(|gr| gr[c]).sum();
            for pos in 0..l {
                let i = (hh * l + pos) * d + c;
                want[i] = gates[pos][c] / sum * xv.data()[i];
            }
        }
    }
    assert_close(g.value(out).data(), &want, 1e-12, "afe");

    let mut g = Graph::new();
    let bp = g.bind(&p);
    let x = g.leaf(xv.clone());
    let plain = afe_extract(&mut g, x, &ids, false, &bp).unwrap();
    let want: Vec<f64> = xv.data().iter().map(|v| v / l as f64).collect();
    assert_close(g.value(plain).data(), &want, 1e-15, "constant gates");
}
