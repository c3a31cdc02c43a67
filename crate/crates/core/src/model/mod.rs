//! Forecasting models: `[B, T, N, C]` history in, `[B, F, N, C]` forecast out.
//!
//! Every variant tokenizes each entity's full history into one
//! `D`-dimensional vector, transforms the `[B, N, D]` token set with `L`
//! pre-norm residual blocks and decodes each token with a shared linear head.
//! Only `featmlp` is tied to the entity count it was built with.

mod config;
pub mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use config::{Arch, ModelConfig};
pub use layers::{
    block_forward, feature_mlp_mix, full_variate_attention, latent_attention,
    random_projection_attention, Block, Dense, FeatureMix, FullAttention, LatentAttention, Norm,
    TemporalMlp,
};

use crate::compute::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Layout {
    Linear {
        map: Dense,
    },
    Deep {
        embedding: Dense,
        blocks: Vec<Block>,
        head: Dense,
    },
}

#[derive(Clone, Debug)]
pub struct ForecastModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

struct Init {
    rng: ChaCha8Rng,
    store: ParamStore,
}

impl Init {
    fn xavier(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let t = Tensor::from_fn([rows, cols], |_| self.rng.random_range(-bound..=bound));
        self.store.add(name, t, true)
    }

    fn zeros(&mut self, name: String, len: usize) -> ParamId {
        self.store.add(name, Tensor::zeros([len]), true)
    }

    fn ones(&mut self, name: String, len: usize) -> ParamId {
        self.store.add(name, Tensor::full([len], 1.0), true)
    }

    fn dense(&mut self, name: &str, rows: usize, cols: usize) -> Dense {
        Dense {
            w: self.xavier(format!("{name}.w"), rows, cols),
            b: self.zeros(format!("{name}.b"), cols),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gamma: self.ones(format!("{name}.gamma"), d),
            beta: self.zeros(format!("{name}.beta"), d),
        }
    }

    fn mlp(&mut self, name: &str, d: usize, hidden: usize) -> TemporalMlp {
        TemporalMlp {
            up: self.dense(&format!("{name}.up"), d, hidden),
            down: self.dense(&format!("{name}.down"), hidden, d),
        }
    }

    /// Frozen keys drawn from N(0, σ²) with σ² = 1/√D.
    fn frozen_keys(&mut self, name: String, m: usize, d: usize) -> ParamId {
        let std = (d as f64).powf(-0.25);
        let normal = Normal::new(0.0, std).expect("finite std");
        let t = Tensor::from_fn([m, d], |_| normal.sample(&mut self.rng));
        self.store.add(name, t, false)
    }
}

impl ForecastModel {
    /// Builds a model with Xavier-uniform weights, zero biases, unit
    /// layer-norm gains and, for `eiformer`, frozen Gaussian projection keys.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            store: ParamStore::new(),
        };
        let tc = config.history_len * config.channels;
        let fc = config.forecast_len * config.channels;
        let d = config.embed_dim;
        let m = config.latent_count;
        let hidden = config.hidden_mult * d;

        let layout = if config.arch == Arch::Linear {
            Layout::Linear {
                map: init.dense("linear", tc, fc),
            }
        } else {
            let embedding = init.dense("embed", tc, d);
            let blocks = (0..config.num_blocks)
                .map(|l| {
                    let p = format!("block{l}");
                    match config.arch {
                        Arch::EiFormer => Block::EiFormer {
                            rp_norm: init.norm(&format!("{p}.rp_norm"), d),
                            rp: LatentAttention {
                                w: init.xavier(format!("{p}.rp.w"), d, d),
                                k: init.frozen_keys(format!("{p}.rp.k_frozen"), m, d),
                                v: init.xavier(format!("{p}.rp.v"), m, d),
                            },
                            latent_norm: init.norm(&format!("{p}.latent_norm"), d),
                            latent: LatentAttention {
                                w: init.xavier(format!("{p}.latent.w"), d, d),
                                k: init.xavier(format!("{p}.latent.k"), m, d),
                                v: init.xavier(format!("{p}.latent.v"), m, d),
                            },
                            mlp_norm: init.norm(&format!("{p}.mlp_norm"), d),
                            mlp: init.mlp(&format!("{p}.mlp"), d, hidden),
                        },
                        Arch::IVariate => Block::IVariate {
                            attn_norm: init.norm(&format!("{p}.attn_norm"), d),
                            attn: FullAttention {
                                wq: init.xavier(format!("{p}.attn.wq"), d, d),
                                wk: init.xavier(format!("{p}.attn.wk"), d, d),
                                wv: init.xavier(format!("{p}.attn.wv"), d, d),
                            },
                            mlp_norm: init.norm(&format!("{p}.mlp_norm"), d),
                            mlp: init.mlp(&format!("{p}.mlp"), d, hidden),
                        },
                        Arch::FeatMlp => {
                            let n = config.featmlp_entities.expect("validated");
                            Block::FeatMlp {
                                mix_norm: init.norm(&format!("{p}.mix_norm"), d),
                                mix: FeatureMix {
                                    w: init.xavier(format!("{p}.mix.w"), n, n),
                                    b: init.zeros(format!("{p}.mix.b"), n),
                                    entities: n,
                                },
                                mlp_norm: init.norm(&format!("{p}.mlp_norm"), d),
                                mlp: init.mlp(&format!("{p}.mlp"), d, hidden),
                            }
                        }
                        Arch::Linear => unreachable!(),
                    }
                })
                .collect();
            let head = init.dense("head", d, fc);
            Layout::Deep {
                embedding,
                blocks,
                head,
            }
        };
        Ok(Self {
            config,
            params: init.store,
            layout,
        })
    }

    /// Rebuilds the layout for `config` and installs `params`, which must
    /// match it name for name and shape for shape.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config)?;
        if model.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (fresh, loaded) in model.params.iter().zip(params.iter()) {
            if fresh.name != loaded.name
                || fresh.value.shape() != loaded.value.shape()
                || fresh.trainable != loaded.trainable
            {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    loaded.name,
                    loaded.value.shape(),
                    fresh.name,
                    fresh.value.shape()
                )));
            }
        }
        model.params = params;
        model.params.clear_grads();
        Ok(model)
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    /// Total scalar count, frozen buffers included.
    pub fn param_count(&self) -> usize {
        self.params.scalar_count(false)
    }

    pub fn trainable_count(&self) -> usize {
        self.params.scalar_count(true)
    }

    pub fn param(&self, name: &str) -> Option<ParamId> {
        self.params.by_name(name)
    }

    /// Ids of the frozen projection keys.
    pub fn frozen_ids(&self) -> Vec<ParamId> {
        self.params
            .ids()
            .filter(|&id| !self.params.get(id).trainable)
            .collect()
    }

    pub fn blocks(&self) -> &[Block] {
        match &self.layout {
            Layout::Linear { .. } => &[],
            Layout::Deep { blocks, .. } => blocks,
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 4 || shape[1] != c.history_len || shape[3] != c.channels {
            return Err(Error::Shape(format!(
                "input {shape:?} must be [B, {}, N, {}]",
                c.history_len, c.channels
            )));
        }
        if let (Arch::FeatMlp, Some(width)) = (c.arch, c.featmlp_entities) {
            if shape[2] != width {
                return Err(Error::Inductiveness {
                    expected: width,
                    actual: shape[2],
                });
            }
        }
        Ok(())
    }

    /// `[B, T, N, C] → [B, N, T·C]`: one flattened history per entity.
    fn tokens(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let xp = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(xp, [s[0], s[2], s[1] * s[3]])
    }

    /// `[B, N, F·C] → [B, F, N, C]`.
    fn untokens(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        let s = tape.shape(y).to_vec();
        let (f, c) = (self.config.forecast_len, self.config.channels);
        let y = tape.reshape(y, [s[0], s[1], f, c])?;
        tape.permute(y, &[0, 2, 1, 3])
    }

    /// Entity embedding `[B, T, N, C] → [B, N, D]`; no cross-entity mixing.
    pub fn embed_entities(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        let Layout::Deep { embedding, .. } = &self.layout else {
            return Err(Error::Contract(
                "the linear model has no entity embedding".into(),
            ));
        };
        let tok = self.tokens(tape, x)?;
        embedding.forward(tape, store, tok)
    }

    /// Full forward on `store` (usually `self.params`), recording every
    /// intermediate on `tape`. Returns the forecast and, per capture point,
    /// the embedding output and each block's post-residual output.
    pub fn forward_captured(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
    ) -> Result<(Var, Vec<(String, Var)>)> {
        self.check_input(tape.shape(x))?;
        match &self.layout {
            Layout::Linear { map } => {
                let tok = self.tokens(tape, x)?;
                let y = map.forward(tape, store, tok)?;
                let out = self.untokens(tape, y)?;
                Ok((out, vec![("linear".to_string(), y)]))
            }
            Layout::Deep {
                embedding,
                blocks,
                head,
            } => {
                let tok = self.tokens(tape, x)?;
                let mut h = embedding.forward(tape, store, tok)?;
                let mut caps = vec![("embedding".to_string(), h)];
                for (l, block) in blocks.iter().enumerate() {
                    h = block_forward(tape, store, h, block)?;
                    caps.push((format!("block{l}"), h));
                }
                let y = head.forward(tape, store, h)?;
                Ok((self.untokens(tape, y)?, caps))
            }
        }
    }

    pub fn forward_with(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.forward_captured(tape, store, x).map(|(out, _)| out)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.forward_with(tape, &self.params, x)
    }

    /// Inference on a fresh tape.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        if !x.is_finite() {
            return Err(Error::Numeric("input contains non-finite values".into()));
        }
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let out = self.forward(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }
}

/// Closed-form parameter count of a configuration.
pub fn expected_param_count(c: &ModelConfig) -> usize {
    let (tc, fc, d, m) = (
        c.history_len * c.channels,
        c.forecast_len * c.channels,
        c.embed_dim,
        c.latent_count,
    );
    let h = c.hidden_mult * d;
    let dense = |i: usize, o: usize| i * o + o;
    let norm = 2 * d;
    let mlp = dense(d, h) + dense(h, d);
    match c.arch {
        Arch::Linear => dense(tc, fc),
        arch => {
            let block = match arch {
                Arch::EiFormer => 3 * norm + 2 * (d * d + 2 * m * d) + mlp,
                Arch::IVariate => 2 * norm + 3 * d * d + mlp,
                Arch::FeatMlp => {
                    let n = c.featmlp_entities.unwrap_or(0);
                    2 * norm + n * n + n + mlp
                }
                Arch::Linear => unreachable!(),
            };
            dense(tc, d) + c.num_blocks * block + dense(d, fc)
        }
    }
}
