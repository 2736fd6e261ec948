//! Finite-difference checks for every primitive op, every module, and the
//! assembled model under each attention/fusion combination.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::afe::afe_extract;
use crate::attention::{fa1_forward, fa2_forward, fa3_forward, sa_forward};
use crate::config::{FaVariant, FusionMode, ModelConfig, RunConfig};
use crate::dd::Dd;
use crate::dual;
use crate::error::Result;
use crate::fusion::{head_logits, head_vector, pooling_fusion, rfm_forward};
use crate::gradcheck::{grad_check_dual, Dual, DEFAULT_STEP};
use crate::graph::{BoundParams, Graph, OpKind, Var};
use crate::model::Model;
use crate::ops::{PoolMode, SoftmaxAxis, SpatialAxis};
use crate::params::ParamSet;
use crate::tensor::{lit, Real, Tensor};

/// Largest relative error a row may report.
pub const TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Primitive,
    Module,
    Model,
}

impl RowKind {
    pub fn name(self) -> &'static str {
        match self {
            RowKind::Primitive => "primitive",
            RowKind::Module => "module",
            RowKind::Model => "model",
        }
    }
}

/// Points closer than this to a relu/abs zero or a max-pool tie are redrawn,
/// so that no `±h` probe crosses a kink.
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_REDRAWS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRow {
    pub name: String,
    pub kind: RowKind,
    /// Against the double-double difference quotient; decides pass/fail.
    pub max_rel_error: f64,
    /// Against an `f64` difference quotient; informational.
    pub plain_rel_error: f64,
    pub coords: usize,
    pub redraws: usize,
    pub kink_margin: Option<f64>,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// The model configuration used by the suite: H=2, L=3, D=4, D′=2, D″=2,
/// k=2, with the given attention and fusion arms.
pub fn suite_config(fa: FaVariant, fusion: FusionMode) -> ModelConfig {
    let mut c = RunConfig::desk();
    c.encoder.h = 2;
    c.encoder.l = 3;
    c.encoder.d = 4;
    c.blocks.reduction = 2;
    c.attention.d_prime = 2;
    c.attention.reduction = 2;
    c.attention.fa = fa;
    c.fusion.mode = fusion;
    c.fusion.k = 2;
    c.fusion.psi_sizes = vec![1, 3];
    c.fusion.dilations = vec![1, 2];
    c.fusion.d_dprime = 2;
    c.head.hidden = 4;
    c.model()
}

/// How one input of a row is produced.
#[derive(Clone, Debug)]
enum Draw {
    /// Uniform in `±[0.1, 1]`.
    Signed(Vec<usize>),
    /// Uniform in `[0.2, 1]`.
    Positive(Vec<usize>),
}

fn signed(shape: &[usize]) -> Draw {
    Draw::Signed(shape.to_vec())
}

fn positive(shape: &[usize]) -> Draw {
    Draw::Positive(shape.to_vec())
}

/// Parameters are drawn like data rather than taken from initialization: a
/// bias that init happens to put within `h` of zero can feed a relu whose
/// input ignores the data (a fully padded convolution window), and only
/// redrawing the parameter moves it.
fn param_draws(params: &ParamSet<f64>) -> Vec<Draw> {
    params.iter().map(|p| signed(p.value.shape())).collect()
}

/// Sum of `weighted_sum(out_i, w_i)` over all outputs.
fn reduce<T: Real>(g: &mut Graph<T>, outs: &[Var], weights: &[Tensor<f64>]) -> Result<Var> {
    let mut total = g.weighted_sum(outs[0], weights[0].cast())?;
    for (&o, w) in outs.iter().zip(weights).skip(1) {
        let s = g.weighted_sum(o, w.cast())?;
        total = g.add(total, s)?;
    }
    Ok(total)
}

fn bind(names: &[String], v: &[Var]) -> Result<BoundParams> {
    BoundParams::from_parts(names, v[..names.len()].to_vec())
}

struct Suite {
    rng: ChaCha8Rng,
    fault: Option<OpKind>,
    rows: Vec<SuiteRow>,
}

impl Suite {
    fn signed_tensor(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| {
            let m: f64 = self.rng.random_range(0.1..1.0);
            if self.rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
    }

    fn draw(&mut self, draws: &[Draw]) -> Vec<Tensor<f64>> {
        draws
            .iter()
            .map(|d| match d {
                Draw::Signed(s) => self.signed_tensor(s),
                Draw::Positive(s) => Tensor::from_fn(s, |_| self.rng.random_range(0.2..1.0)),
            })
            .collect()
    }

    /// Checks scalar `f` at a point drawn from `draws`, redrawing while the
    /// point sits within [`KINK_MARGIN`] of a kink.
    fn run<P, W>(&mut self, name: &str, kind: RowKind, draws: &[Draw], f: &Dual<P, W>) -> Result<()>
    where
        P: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
        W: Fn(&mut Graph<Dd>, &[Var]) -> Result<Var>,
    {
        let mut redraws = 0;
        let inputs = loop {
            let inputs = self.draw(draws);
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
            (f.plain)(&mut g, &vars)?;
            let clear = g.kink_margin().is_none_or(|m| m >= KINK_MARGIN);
            if clear || redraws == MAX_REDRAWS {
                break inputs;
            }
            redraws += 1;
        };
        let r = grad_check_dual(f, &inputs, DEFAULT_STEP, self.fault)?;
        self.rows.push(SuiteRow {
            name: name.to_string(),
            kind,
            max_rel_error: r.max_rel_error,
            plain_rel_error: r.plain_rel_error,
            coords: r.coords_checked,
            redraws,
            kink_margin: r.kink_margin,
        });
        Ok(())
    }

    /// A vector-valued function reduced to a scalar with fixed random
    /// weights. The first `params.len()` inputs are bound under the
    /// parameter names; `data` follows.
    fn reduced<P, W>(
        &mut self,
        name: &str,
        kind: RowKind,
        params: &ParamSet<f64>,
        data: &[Draw],
        f: Dual<P, W>,
    ) -> Result<()>
    where
        P: Fn(&mut Graph<f64>, &BoundParams, &[Var]) -> Result<Vec<Var>>,
        W: Fn(&mut Graph<Dd>, &BoundParams, &[Var]) -> Result<Vec<Var>>,
    {
        let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
        let mut draws = param_draws(params);
        draws.extend_from_slice(data);
        let n = names.len();

        // Output shapes depend only on input shapes.
        let mut probe = Graph::new();
        let vars: Vec<Var> = draws
            .iter()
            .map(|d| match d {
                Draw::Signed(s) | Draw::Positive(s) => probe.leaf(Tensor::full(s, 0.5)),
            })
            .collect();
        let outs = (f.plain)(&mut probe, &bind(&names, &vars)?, &vars[n..])?;
        let weights: Vec<Tensor<f64>> = outs
            .iter()
            .map(|&o| self.signed_tensor(probe.shape(o)))
            .collect();

        let scalar = Dual {
            plain: |g: &mut Graph<f64>, v: &[Var]| -> Result<Var> {
                let outs = (f.plain)(g, &bind(&names, v)?, &v[n..])?;
                reduce(g, &outs, &weights)
            },
            wide: |g: &mut Graph<Dd>, v: &[Var]| -> Result<Var> {
                let outs = (f.wide)(g, &bind(&names, v)?, &v[n..])?;
                reduce(g, &outs, &weights)
            },
        };
        self.run(name, kind, &draws, &scalar)
    }

    fn prim<P, W>(&mut self, name: &str, data: &[Draw], f: Dual<P, W>) -> Result<()>
    where
        P: Fn(&mut Graph<f64>, &BoundParams, &[Var]) -> Result<Vec<Var>>,
        W: Fn(&mut Graph<Dd>, &BoundParams, &[Var]) -> Result<Vec<Var>>,
    {
        self.reduced(name, RowKind::Primitive, &ParamSet::new(), data, f)
    }

    fn module<P, W>(
        &mut self,
        name: &str,
        params: &ParamSet<f64>,
        data: &[Draw],
        f: Dual<P, W>,
    ) -> Result<()>
    where
        P: Fn(&mut Graph<f64>, &BoundParams, &[Var]) -> Result<Vec<Var>>,
        W: Fn(&mut Graph<Dd>, &BoundParams, &[Var]) -> Result<Vec<Var>>,
    {
        self.reduced(name, RowKind::Module, params, data, f)
    }

    fn primitives(&mut self) -> Result<()> {
        self.prim(
            "linear",
            &[signed(&[3, 4]), signed(&[2, 4]), signed(&[2])],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![g.linear(v[0], v[1], v[2])?])
            }),
        )?;
        self.prim(
            "matmul",
            &[signed(&[3, 3]), signed(&[3, 3])],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                [(false, false), (true, false), (false, true), (true, true)]
                    .into_iter()
                    .map(|(ta, tb)| g.matmul(v[0], v[1], ta, tb))
                    .collect()
            }),
        )?;
        self.prim(
            "softmax",
            &[signed(&[3, 4])],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![
                    g.softmax(v[0], SoftmaxAxis::Rows)?,
                    g.softmax(v[0], SoftmaxAxis::Cols)?,
                ])
            }),
        )?;
        let t = signed(&[3, 4]);
        self.prim(
            "relu",
            std::slice::from_ref(&t),
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> { Ok(vec![g.relu(v[0])]) }),
        )?;
        self.prim(
            "sigmoid",
            std::slice::from_ref(&t),
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![g.sigmoid(v[0])])
            }),
        )?;
        self.prim(
            "abs",
            std::slice::from_ref(&t),
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> { Ok(vec![g.abs(v[0])]) }),
        )?;
        let pair = [t.clone(), t.clone()];
        self.prim(
            "add",
            &pair,
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![g.add(v[0], v[1])?])
            }),
        )?;
        self.prim(
            "sub",
            &pair,
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![g.sub(v[0], v[1])?])
            }),
        )?;
        self.prim(
            "mul",
            &pair,
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![g.mul(v[0], v[1])?])
            }),
        )?;
        self.prim(
            "scale",
            &[t],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![g.scale(v[0], lit(-1.7))])
            }),
        )?;
        self.prim(
            "pool",
            &[signed(&[2, 3, 4])],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                let mut outs = Vec::new();
                for mode in [PoolMode::Avg, PoolMode::Max] {
                    for axes in [
                        &[SpatialAxis::H][..],
                        &[SpatialAxis::L],
                        &[SpatialAxis::H, SpatialAxis::L],
                    ] {
                        outs.push(g.pool(v[0], axes, mode)?);
                    }
                }
                Ok(outs)
            }),
        )?;
        self.prim(
            "conv2d",
            &[signed(&[3, 4, 2]), signed(&[3, 3, 2, 2]), signed(&[2])],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![
                    g.conv2d(v[0], v[1], v[2], 1)?,
                    g.conv2d(v[0], v[1], v[2], 2)?,
                ])
            }),
        )?;
        self.prim(
            "instance_norm",
            &[signed(&[5, 3]), signed(&[3]), signed(&[3])],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![g.instance_norm(v[0], v[1], v[2])?])
            }),
        )?;
        self.prim(
            "concat",
            &[signed(&[2, 3]), signed(&[2, 3])],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![
                    g.concat(&[v[0], v[1]], 0)?,
                    g.concat(&[v[0], v[1]], 1)?,
                ])
            }),
        )?;
        self.prim(
            "slice",
            &[signed(&[4, 3])],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![g.slice(v[0], 1, 2)?])
            }),
        )?;
        self.prim(
            "reshape",
            &[signed(&[4, 3])],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![g.reshape(v[0], &[2, 6])?])
            }),
        )?;
        self.prim(
            "broadcast",
            &[signed(&[3])],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![g.broadcast(v[0], 2, 2)?])
            }),
        )?;
        self.prim(
            "outer",
            &[signed(&[2, 3]), signed(&[4, 3])],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![g.outer(v[0], v[1])?])
            }),
        )?;
        self.prim(
            "normalize_positions",
            &[positive(&[2, 3, 2])],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![g.normalize_positions(v[0])?])
            }),
        )?;
        let label = self.rng.random_range(0..3);
        self.run(
            "softmax_cross_entropy",
            RowKind::Primitive,
            &[signed(&[3])],
            &dual!(|g, v: &[Var]| -> Result<Var> { g.softmax_cross_entropy(v[0], label) }),
        )?;
        let weights = self.signed_tensor(&[2, 3]);
        self.run(
            "weighted_sum",
            RowKind::Primitive,
            &[signed(&[2, 3])],
            &dual!(|g, v: &[Var]| -> Result<Var> { g.weighted_sum(v[0], weights.cast()) }),
        )
    }

    fn modules(&mut self, seed: u64) -> Result<()> {
        let full = Model::<f64>::init(&suite_config(FaVariant::Fa3, FusionMode::Rfm), seed)?;
        let subset = |model: &Model<f64>, prefix: &str| -> Result<ParamSet<f64>> {
            let mut p = ParamSet::new();
            for t in model.params().iter().filter(|t| t.name.starts_with(prefix)) {
                p.insert(t.name.clone(), t.value.clone())?;
            }
            Ok(p)
        };
        let fa1 = subset(
            &Model::init(&suite_config(FaVariant::Fa1, FusionMode::Pooling), seed)?,
            "fa.",
        )?;
        let fa2 = subset(
            &Model::init(&suite_config(FaVariant::Fa2, FusionMode::Pooling), seed)?,
            "fa.",
        )?;
        let stack = signed(&[2, 3, 4]);

        let ids = full.block_ids().to_vec();
        self.module(
            "afe",
            &subset(&full, "afe.")?,
            std::slice::from_ref(&stack),
            dual!(|g, bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![afe_extract(g, v[0], &ids, true, bp)?])
            }),
        )?;
        self.module(
            "sa",
            &subset(&full, "sa.")?,
            &[stack.clone(), stack.clone()],
            dual!(|g, bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                let o = sa_forward(g, v[0], v[1], bp, false)?;
                Ok(vec![o.x, o.y])
            }),
        )?;
        self.module(
            "fa1",
            &fa1,
            std::slice::from_ref(&stack),
            dual!(|g, bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![fa1_forward(g, v[0], bp, "fa")?])
            }),
        )?;
        self.module(
            "fa2",
            &fa2,
            std::slice::from_ref(&stack),
            dual!(|g, bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![fa2_forward(g, v[0], bp, "fa")?])
            }),
        )?;
        self.module(
            "fa3",
            &subset(&full, "fa.")?,
            &[stack],
            dual!(|g, bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![fa3_forward(g, v[0], bp, "fa")?])
            }),
        )?;

        let reduced_stack = signed(&[2, 3, 2]);
        let dilations = full.config().fusion.dilations.clone();
        self.module(
            "rfm",
            &subset(&full, "rfm.")?,
            std::slice::from_ref(&reduced_stack),
            dual!(|g, bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![rfm_forward(g, v[0], &dilations, bp)?])
            }),
        )?;
        self.module(
            "pooling_fusion",
            &ParamSet::new(),
            &[reduced_stack.clone(), reduced_stack],
            dual!(|g, _bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                Ok(vec![pooling_fusion(g, v[0], v[1])?])
            }),
        )?;
        let rfm_out = positive(&[2, 3, 6]);
        self.module(
            "head",
            &subset(&full, "head.")?,
            &[rfm_out.clone(), rfm_out],
            dual!(|g, bp: &BoundParams, v: &[Var]| -> Result<Vec<Var>> {
                let hv = head_vector(g, v[0], v[1])?;
                Ok(vec![head_logits(g, hv, bp)?])
            }),
        )
    }

    fn models(&mut self, seed: u64) -> Result<()> {
        for fusion in [FusionMode::Rfm, FusionMode::Pooling] {
            for fa in [
                FaVariant::None,
                FaVariant::Fa1,
                FaVariant::Fa2,
                FaVariant::Fa3,
            ] {
                let cfg = suite_config(fa, fusion);
                self.model_row(&format!("model[{}]", cell_name(&cfg)), &cfg, seed)?;
            }
        }
        Ok(())
    }

    fn model_row(&mut self, name: &str, cfg: &ModelConfig, seed: u64) -> Result<()> {
        let model = Model::<f64>::init(cfg, seed)?;
        let labels = cfg.head.labels.len();
        let label = self.rng.random_range(0..labels);
        let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
        let n = names.len();
        let stack = [model.block_ids().len(), cfg.encoder.l, cfg.encoder.d];
        let mut draws = param_draws(model.params());
        draws.push(signed(&stack));
        draws.push(signed(&stack));
        let f = dual!(|g, v: &[Var]| -> Result<Var> {
            let bp = bind(&names, v)?;
            let out = model.forward(g, &bp, v[n], v[n + 1])?;
            g.softmax_cross_entropy(out.logits, label)
        });
        self.run(name, RowKind::Model, &draws, &f)
    }
}

/// `sa+fa3,rfm`-style label of a model's attention and fusion arms.
pub fn cell_name(cfg: &ModelConfig) -> String {
    let a = &cfg.attention;
    let attn = match (a.sa, a.fa) {
        (true, FaVariant::None) => "sa".to_string(),
        (true, fa) => format!("sa+{}", fa.name()),
        (false, FaVariant::None) => "proj".to_string(),
        (false, fa) => fa.name().to_string(),
    };
    let fusion = match cfg.fusion.mode {
        FusionMode::Rfm => "rfm",
        FusionMode::Pooling => "pooling",
    };
    format!("{attn},{fusion}")
}

/// Keeps every architectural choice of `cfg` but shrinks the dimensions to
/// those of [`suite_config`], so the configured model can be checked in
/// seconds.
pub fn shrink_to_suite(cfg: &ModelConfig) -> ModelConfig {
    let base = suite_config(cfg.attention.fa, cfg.fusion.mode);
    let mut c = cfg.clone();
    c.encoder = base.encoder;
    c.blocks.reduction = base.blocks.reduction;
    c.attention.d_prime = base.attention.d_prime;
    c.attention.reduction = base.attention.reduction;
    c.fusion.d_dprime = base.fusion.d_dprime;
    c.head.hidden = base.head.hidden;
    c
}

/// Runs every row. With `fault`, the backward rule of that op flips sign,
/// which rows using it must detect.
pub fn run_suite(seed: u64, fault: Option<OpKind>) -> Result<Vec<SuiteRow>> {
    run_suite_with(seed, fault, None)
}

/// [`run_suite`] plus one `model[config]` row for `extra` shrunk by
/// [`shrink_to_suite`].
pub fn run_suite_with(
    seed: u64,
    fault: Option<OpKind>,
    extra: Option<&ModelConfig>,
) -> Result<Vec<SuiteRow>> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        fault,
        rows: Vec::new(),
    };
    s.primitives()?;
    s.modules(seed)?;
    s.models(seed)?;
    if let Some(cfg) = extra {
        let small = shrink_to_suite(cfg);
        s.model_row(
            &format!("model[config:{}]", cell_name(&small)),
            &small,
            seed,
        )?;
    }
    Ok(s.rows)
}
