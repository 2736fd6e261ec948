//! The full similarity network: AFE → SA/FA → RFM or pooling → head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::afe::{afe_extract, init_afe};
use crate::attention::{
    combine, fa_forward, init_fa, init_sa, project_only, sa_forward, SaMaps, SaOutput,
};
use crate::config::{FusionMode, ModelConfig};
use crate::encoder::{select_blocks, BlockStack};
use crate::error::{Error, Result};
use crate::fusion::{head_logits, head_vector, init_head, init_rfm, pooling_fusion, rfm_forward};
use crate::graph::{BoundParams, Graph, Var};
use crate::ops::softmax_vec;
use crate::params::ParamSet;
use crate::tensor::{Real, Tensor};

/// Graph handles from one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub logits: Var,
    pub x_prime: Var,
    pub y_prime: Var,
    pub sa: Option<SaOutput>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamSet<T>,
    block_ids: Vec<usize>,
}

fn fa_prefixes(tied: bool) -> (&'static str, &'static str) {
    if tied {
        ("fa", "fa")
    } else {
        ("fa.x", "fa.y")
    }
}

impl<T: Real> Model<T> {
    /// Fresh parameters drawn from a generator seeded with `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block_ids = config.blocks.strategy.indices(config.encoder.h)?;
        let d = config.encoder.d;
        let a = &config.attention;
        let mut params = ParamSet::new();
        if config.blocks.adaptive {
            init_afe(
                &mut params,
                &mut rng,
                &block_ids,
                d,
                config.blocks.reduction,
            )?;
        }
        init_sa(&mut params, &mut rng, d, a.d_prime)?;
        let (px, py) = fa_prefixes(a.tied);
        init_fa(&mut params, &mut rng, a.fa, px, d, a.d_prime, a.reduction)?;
        if !a.tied {
            init_fa(&mut params, &mut rng, a.fa, py, d, a.d_prime, a.reduction)?;
        }
        if config.fusion.mode == FusionMode::Rfm {
            init_rfm(&mut params, &mut rng, &config.fusion, a.d_prime)?;
        }
        init_head(
            &mut params,
            &mut rng,
            config.head_input(),
            config.head.hidden,
            config.head.labels.len(),
        )?;
        Ok(Model {
            config: config.clone(),
            params,
            block_ids,
        })
    }

    /// Adopts an existing parameter set after checking that its names and
    /// shapes are exactly those the configuration implies.
    pub fn from_params(config: &ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let template = Model::<T>::init(config, 0)?;
        if template.params.len() != params.len() {
            return Err(Error::format(
                0,
                format!(
                    "configuration expects {} parameters, found {}",
                    template.params.len(),
                    params.len()
                ),
            ));
        }
        for (want, got) in template.params.iter().zip(params.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::format(
                    0,
                    format!(
                        "parameter `{}` {:?} does not match expected `{}` {:?}",
                        got.name,
                        got.value.shape(),
                        want.name,
                        want.value.shape()
                    ),
                ));
            }
        }
        Ok(Model {
            config: config.clone(),
            params,
            block_ids: template.block_ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    pub fn block_ids(&self) -> &[usize] {
        &self.block_ids
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            block_ids: self.block_ids.clone(),
        }
    }

    /// Applies block selection to an encoder stack and checks its dims.
    pub fn prepare(&self, stack: &BlockStack) -> Result<Tensor<T>> {
        let e = &self.config.encoder;
        let (h, l, d) = stack.dims();
        if (h, l, d) != (e.h, e.l, e.d) {
            return Err(Error::format(
                4,
                format!(
                    "stack is {h}×{l}×{d}, model expects {}×{}×{}",
                    e.h, e.l, e.d
                ),
            ));
        }
        let selected = select_blocks(stack, &self.config.blocks.strategy)?;
        Ok(selected.blocks.cast())
    }

    /// Records a forward pass on already-prepared stacks. Parameters come
    /// from `bp`, so the graph may use a different scalar than the model.
    pub fn forward<U: Real>(
        &self,
        g: &mut Graph<U>,
        bp: &BoundParams,
        x: Var,
        y: Var,
    ) -> Result<Forward> {
        let c = &self.config;
        let xa = afe_extract(g, x, &self.block_ids, c.blocks.adaptive, bp)?;
        let ya = afe_extract(g, y, &self.block_ids, c.blocks.adaptive, bp)?;
        let a = &c.attention;
        let (xs, ys, sa) = if a.sa {
            let out = sa_forward(g, xa, ya, bp, a.scale_scores)?;
            (out.x, out.y, Some(out))
        } else {
            (project_only(g, xa, bp)?, project_only(g, ya, bp)?, None)
        };
        let (px, py) = fa_prefixes(a.tied);
        let fx = fa_forward(g, a.fa, xa, bp, px)?;
        let fy = fa_forward(g, a.fa, ya, bp, py)?;
        let x_prime = combine(g, xs, fx)?;
        let y_prime = combine(g, ys, fy)?;
        let v = match c.fusion.mode {
            FusionMode::Rfm => {
                let xr = rfm_forward(g, x_prime, &c.fusion.dilations, bp)?;
                let yr = rfm_forward(g, y_prime, &c.fusion.dilations, bp)?;
                head_vector(g, xr, yr)?
            }
            FusionMode::Pooling => pooling_fusion(g, x_prime, y_prime)?,
        };
        let logits = head_logits(g, v, bp)?;
        Ok(Forward {
            logits,
            x_prime,
            y_prime,
            sa,
        })
    }

    /// Class probabilities for one prepared pair.
    pub fn predict(&self, x: &Tensor<T>, y: &Tensor<T>) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let bp = g.bind(&self.params);
        let (xv, yv) = (g.leaf(x.clone()), g.leaf(y.clone()));
        let f = self.forward(&mut g, &bp, xv, yv)?;
        Ok(softmax_vec(g.value(f.logits).data()))
    }

    /// Similarity maps for one prepared pair; `None` when SA is disabled.
    pub fn similarity_maps(&self, x: &Tensor<T>, y: &Tensor<T>) -> Result<Option<SaMaps<T>>> {
        let mut g = Graph::new();
        let bp = g.bind(&self.params);
        let (xv, yv) = (g.leaf(x.clone()), g.leaf(y.clone()));
        let f = self.forward(&mut g, &bp, xv, yv)?;
        Ok(f.sa.map(|sa| SaMaps::from_graph(&g, &sa)))
    }

    /// Cross-entropy loss and one gradient per parameter, in parameter order.
    pub fn loss_and_grads(
        &self,
        x: &Tensor<T>,
        y: &Tensor<T>,
        label: usize,
    ) -> Result<(T, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let bp = g.bind(&self.params);
        let (xv, yv) = (g.leaf(x.clone()), g.leaf(y.clone()));
        let f = self.forward(&mut g, &bp, xv, yv)?;
        let loss = g.softmax_cross_entropy(f.logits, label)?;
        let loss_value = g.value(loss).data()[0];
        let mut grads = g.backward(loss)?;
        let out = bp
            .vars()
            .iter()
            .zip(self.params.iter())
            .map(|(&v, p)| {
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect();
        Ok((loss_value, out))
    }

    /// Loss and predicted probabilities without building gradients.
    pub fn loss(&self, x: &Tensor<T>, y: &Tensor<T>, label: usize) -> Result<(T, Vec<T>)> {
        let probs = self.predict(x, y)?;
        if label >= probs.len() {
            return Err(Error::argument(format!("label {label} out of range")));
        }
        let p = probs[label].max(crate::tensor::lit(1e-12));
        Ok((-p.ln(), probs))
    }
}
