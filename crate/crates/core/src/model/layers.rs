//! Tape-level building blocks shared by every architecture.

use crate::compute::{probe, ParamId, ParamStore, Tape, Var, LAYER_NORM_EPS};
use crate::error::{Error, Result};

/// Affine map over the last axis: `x · W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

/// Query projection `W` plus latent keys `K` and values `V`, each `[M, D]`.
///
/// Used both for the learnable latent attention and for the random
/// projection, whose `K` is a frozen parameter.
#[derive(Clone, Copy, Debug)]
pub struct LatentAttention {
    pub w: ParamId,
    pub k: ParamId,
    pub v: ParamId,
}

impl LatentAttention {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let k = tape.param(store, self.k);
        let v = tape.param(store, self.v);
        latent_attention(tape, h, w, k, v)
    }
}

/// `softmax(h W Kᵀ / √D) V` with `h: [B, N, D]`, `K, V: [M, D]`.
///
/// The only attention map built is `[B, N, M]`.
pub fn latent_attention(tape: &mut Tape, h: Var, w: Var, k: Var, v: Var) -> Result<Var> {
    let d = *tape.shape(h).last().unwrap_or(&0);
    let ks = tape.shape(k).to_vec();
    if ks.len() != 2 || ks[1] != d {
        return Err(Error::Shape(format!(
            "latent attention: keys {ks:?} do not match token width {d}"
        )));
    }
    if tape.shape(v) != ks.as_slice() {
        return Err(Error::Shape(format!(
            "latent attention: values {:?} must match keys {ks:?}",
            tape.shape(v)
        )));
    }
    let q = tape.matmul(h, w)?;
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let attn = tape.softmax_rows(logits)?;
    probe::note_attention_map(tape.value(attn).numel());
    tape.matmul(attn, v)
}

/// Alias of [`latent_attention`] for the frozen-key projection: the math is
/// identical, only the trainability of `K` differs.
pub fn random_projection_attention(
    tape: &mut Tape,
    h0: Var,
    w: Var,
    k_frozen: Var,
    v: Var,
) -> Result<Var> {
    latent_attention(tape, h0, w, k_frozen, v)
}

#[derive(Clone, Copy, Debug)]
pub struct FullAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

impl FullAttention {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let wq = tape.param(store, self.wq);
        let wk = tape.param(store, self.wk);
        let wv = tape.param(store, self.wv);
        full_variate_attention(tape, h, wq, wk, wv)
    }
}

/// `softmax((h Wq)(h Wk)ᵀ / √D)(h Wv)`; builds an `[B, N, N]` map.
pub fn full_variate_attention(tape: &mut Tape, h: Var, wq: Var, wk: Var, wv: Var) -> Result<Var> {
    let d = *tape.shape(h).last().unwrap_or(&0);
    let q = tape.matmul(h, wq)?;
    let k = tape.matmul(h, wk)?;
    let v = tape.matmul(h, wv)?;
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let attn = tape.softmax_rows(logits)?;
    probe::note_attention_map(tape.value(attn).numel());
    tape.matmul(attn, v)
}

/// Two-layer per-entity feed-forward with GELU: `D → hD → D`.
#[derive(Clone, Copy, Debug)]
pub struct TemporalMlp {
    pub up: Dense,
    pub down: Dense,
}

impl TemporalMlp {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let z = self.up.forward(tape, store, h)?;
        let z = tape.gelu(z);
        self.down.forward(tape, store, z)
    }
}

/// Entity-axis mixing `GELU(Wmix · h + b)` with `Wmix: [N, N]`, `b: [N]`.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMix {
    pub w: ParamId,
    pub b: ParamId,
    pub entities: usize,
}

impl FeatureMix {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        feature_mlp_mix(tape, h, w, b)
    }
}

/// `h: [B, N, D]`, `w: [N, N]`, `b: [N]`. Any other `N` is an
/// [`Error::Inductiveness`].
pub fn feature_mlp_mix(tape: &mut Tape, h: Var, w: Var, b: Var) -> Result<Var> {
    let hs = tape.shape(h).to_vec();
    let width = tape.shape(w)[0];
    let n = hs[hs.len() - 2];
    if n != width {
        return Err(Error::Inductiveness {
            expected: width,
            actual: n,
        });
    }
    let mixed = tape.matmul(w, h)?;
    let b = tape.reshape(b, [width, 1])?;
    let mixed = tape.add(mixed, b)?;
    Ok(tape.gelu(mixed))
}

/// Pre-norm residual block; the variant decides which sub-layers exist.
#[derive(Clone, Debug)]
pub enum Block {
    EiFormer {
        rp_norm: Norm,
        rp: LatentAttention,
        latent_norm: Norm,
        latent: LatentAttention,
        mlp_norm: Norm,
        mlp: TemporalMlp,
    },
    IVariate {
        attn_norm: Norm,
        attn: FullAttention,
        mlp_norm: Norm,
        mlp: TemporalMlp,
    },
    FeatMlp {
        mix_norm: Norm,
        mix: FeatureMix,
        mlp_norm: Norm,
        mlp: TemporalMlp,
    },
}

fn residual(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    norm: &Norm,
    f: impl FnOnce(&mut Tape, Var) -> Result<Var>,
) -> Result<Var> {
    let n = norm.forward(tape, store, h)?;
    let y = f(tape, n)?;
    tape.add(h, y)
}

/// `h₁ = h + RP(LN h)`, `h₂ = h₁ + Latent(LN h₁)`, `h₃ = h₂ + MLP(LN h₂)`;
/// the baselines swap or drop the attention sub-layers.
pub fn block_forward(tape: &mut Tape, store: &ParamStore, h: Var, block: &Block) -> Result<Var> {
    match block {
        Block::EiFormer {
            rp_norm,
            rp,
            latent_norm,
            latent,
            mlp_norm,
            mlp,
        } => {
            let h = residual(tape, store, h, rp_norm, |t, x| rp.forward(t, store, x))?;
            let h = residual(tape, store, h, latent_norm, |t, x| {
                latent.forward(t, store, x)
            })?;
            residual(tape, store, h, mlp_norm, |t, x| mlp.forward(t, store, x))
        }
        Block::IVariate {
            attn_norm,
            attn,
            mlp_norm,
            mlp,
        } => {
            let h = residual(tape, store, h, attn_norm, |t, x| attn.forward(t, store, x))?;
            residual(tape, store, h, mlp_norm, |t, x| mlp.forward(t, store, x))
        }
        Block::FeatMlp {
            mix_norm,
            mix,
            mlp_norm,
            mlp,
        } => {
            let h = residual(tape, store, h, mix_norm, |t, x| mix.forward(t, store, x))?;
            residual(tape, store, h, mlp_norm, |t, x| mlp.forward(t, store, x))
        }
    }
}
