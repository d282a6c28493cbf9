use rand::Rng;

use super::{normal_matrix, Matrix, ParamId, ParamStore, Tape, Var};

/// Affine map `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let std = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: store.add(
                format!("{name}.weight"),
                normal_matrix(rng, fan_in, fan_out, std),
            ),
            bias: store.add(format!("{name}.bias"), Matrix::zeros(1, fan_out)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn register(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Matrix::filled(1, dim, 1.0)),
            beta: store.add(format!("{name}.beta"), Matrix::zeros(1, dim)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Pre-norm transformer block: multi-head self-attention then a GELU
/// feed-forward layer, each wrapped in a residual connection.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub heads: usize,
    pub ln_attn: LayerNormParams,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub ln_ffn: LayerNormParams,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl TransformerBlock {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
    ) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim must divide into heads");
        Self {
            heads,
            ln_attn: LayerNormParams::register(store, &format!("{name}.ln_attn"), dim),
            query: Linear::register(store, rng, &format!("{name}.attn.query"), dim, dim),
            key: Linear::register(store, rng, &format!("{name}.attn.key"), dim, dim),
            value: Linear::register(store, rng, &format!("{name}.attn.value"), dim, dim),
            out: Linear::register(store, rng, &format!("{name}.attn.out"), dim, dim),
            ln_ffn: LayerNormParams::register(store, &format!("{name}.ln_ffn"), dim),
            ffn_in: Linear::register(store, rng, &format!("{name}.ffn.in"), dim, ffn_dim),
            ffn_out: Linear::register(store, rng, &format!("{name}.ffn.out"), ffn_dim, dim),
        }
    }

    /// `keep` masks keys: tokens with `false` are never attended to, so the
    /// outputs at the remaining positions ignore them entirely.
    pub fn forward(&self, tape: &mut Tape, x: Var, keep: Option<&[bool]>) -> Var {
        let h = self.ln_attn.forward(tape, x);
        let attn = self.attention(tape, h, keep);
        let x = tape.add(x, attn);

        let h = self.ln_ffn.forward(tape, x);
        let h = self.ffn_in.forward(tape, h);
        let h = tape.gelu(h);
        let h = self.ffn_out.forward(tape, h);
        tape.add(x, h)
    }

    fn attention(&self, tape: &mut Tape, x: Var, keep: Option<&[bool]>) -> Var {
        let dim = tape.value(x).cols();
        let head_dim = dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let q = self.query.forward(tape, x);
        let k = self.key.forward(tape, x);
        let v = self.value.forward(tape, x);
        let heads: Vec<Var> = (0..self.heads)
            .map(|h| {
                let qh = tape.slice_cols(q, h * head_dim, head_dim);
                let kh = tape.slice_cols(k, h * head_dim, head_dim);
                let vh = tape.slice_cols(v, h * head_dim, head_dim);
                let scores = tape.matmul_t(qh, kh);
                let scores = tape.scale(scores, scale);
                let p = tape.softmax(scores, keep);
                tape.matmul(p, vh)
            })
            .collect();
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        };
        self.out.forward(tape, merged)
    }
}
