//! Encoder and denoiser built on the tape.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tape::{Tape, Var};
use super::{ModelParams, CHANNELS, COND_DIM, SEQ_LEN};
use crate::scalar::Real;

/// Named trainable tensors. Biases and embeddings are `1 x n` / `k x n`.
pub type ParamSet<T> = BTreeMap<String, Array2<T>>;

/// Encoder condition tokens: start, end, length.
const TOKENS: usize = 3;

fn linear_shapes(out: &mut Vec<(String, (usize, usize))>, name: &str, fan_in: usize, fan_out: usize) {
    out.push((format!("{name}.w"), (fan_in, fan_out)));
    out.push((format!("{name}.b"), (1, fan_out)));
}

/// Every trainable tensor with its shape, in a fixed order.
pub fn param_shapes(p: &ModelParams) -> Vec<(String, (usize, usize))> {
    let h = p.hidden;
    let mut v = Vec::new();
    linear_shapes(&mut v, "enc.in", COND_DIM, h);
    linear_shapes(&mut v, "enc.tok", h, TOKENS * h);
    v.push(("enc.tok_emb".into(), (TOKENS, h)));
    for n in ["q", "k", "v", "o"] {
        linear_shapes(&mut v, &format!("enc.attn.{n}"), h, h);
    }
    linear_shapes(&mut v, "time", h, h);
    linear_shapes(&mut v, "dec.in", CHANNELS, h);
    for b in 0..p.blocks {
        let pre = format!("block{b}");
        linear_shapes(&mut v, &format!("{pre}.sm"), 3 * h, h);
        for n in ["q", "k", "v", "o"] {
            linear_shapes(&mut v, &format!("{pre}.attn.{n}"), h, h);
        }
        linear_shapes(&mut v, &format!("{pre}.am.conv"), 3 * h, h);
        linear_shapes(&mut v, &format!("{pre}.am.cond"), h, h);
        linear_shapes(&mut v, &format!("{pre}.am.out"), h, h);
        linear_shapes(&mut v, &format!("{pre}.ffm.gate"), h, h);
        linear_shapes(&mut v, &format!("{pre}.ffm.fuse"), 2 * h, h);
    }
    linear_shapes(&mut v, "head", h, 2 * CHANNELS);
    v
}

/// Gaussian weights with standard deviation `1 / sqrt(fan_in)`, zero biases
/// and a zero output head, so an untrained model predicts the data mean.
pub fn init_params<T: Real>(p: &ModelParams, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    param_shapes(p)
        .into_iter()
        .map(|(name, (r, c))| {
            let std = if name.ends_with(".b") || name == "head.w" {
                0.0
            } else if name == "enc.tok_emb" {
                1.0
            } else {
                1.0 / (r as f64).sqrt()
            };
            let t = if std == 0.0 {
                Array2::zeros((r, c))
            } else {
                let d = Normal::new(0.0, std).expect("positive std");
                Array2::from_shape_simple_fn((r, c), || T::of(d.sample(&mut rng)))
            };
            (name, t)
        })
        .collect()
}

/// Puts every tensor on the tape as a trainable leaf.
pub fn bind<T: Real>(tape: &mut Tape<T>, params: &ParamSet<T>) -> BTreeMap<String, Var> {
    params
        .iter()
        .map(|(k, v)| (k.clone(), tape.param(v.clone())))
        .collect()
}

/// Puts every tensor on the tape as a constant, for inference.
pub fn bind_frozen<T: Real>(tape: &mut Tape<T>, params: &ParamSet<T>) -> BTreeMap<String, Var> {
    params
        .iter()
        .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
        .collect()
}

/// Sinusoidal embedding of `t` with `width` channels: `sin` in even slots,
/// `cos` in odd slots, frequencies `10000^(-2i/width)`.
pub fn timestep_embedding<T: Real>(steps: &[usize], width: usize) -> Array2<T> {
    sinusoid(steps.iter().map(|s| *s as f64), width)
}

fn sinusoid<T: Real>(positions: impl Iterator<Item = f64>, width: usize) -> Array2<T> {
    let positions: Vec<f64> = positions.collect();
    Array2::from_shape_fn((positions.len(), width), |(r, c)| {
        let i = (c / 2) as f64;
        let freq = 10000f64.powf(-2.0 * i / width as f64);
        let x = positions[r] * freq;
        T::of(if c % 2 == 0 { x.sin() } else { x.cos() })
    })
}

struct Net<'a> {
    p: &'a BTreeMap<String, Var>,
}

impl Net<'_> {
    fn w(&self, name: &str) -> Var {
        *self.p.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    fn linear<T: Real>(&self, t: &mut Tape<T>, x: Var, name: &str) -> Var {
        let m = t.matmul(x, self.w(&format!("{name}.w")));
        t.add_row(m, self.w(&format!("{name}.b")))
    }

    /// Kernel-3 convolution along time inside each sequence, zero padded.
    fn conv<T: Real>(&self, t: &mut Tape<T>, x: Var, name: &str, block: usize) -> Var {
        let prev = t.shift(x, block, -1);
        let next = t.shift(x, block, 1);
        let cat = t.concat_cols(&[prev, x, next]);
        self.linear(t, cat, name)
    }

    fn attention<T: Real>(&self, t: &mut Tape<T>, qk_in: Var, v_in: Var, name: &str, heads: usize, block: usize) -> Var {
        let q = self.linear(t, qk_in, &format!("{name}.q"));
        let k = self.linear(t, qk_in, &format!("{name}.k"));
        let v = self.linear(t, v_in, &format!("{name}.v"));
        let a = t.attention(q, k, v, heads, block);
        self.linear(t, a, &format!("{name}.o"))
    }
}

/// Condition feature `B x h` from the raw `B x 7` condition rows.
///
/// The condition goes through a two-layer MLP that emits one token per
/// condition part, the tokens attend to each other, and the result is
/// mean-pooled and normalized.
pub fn encoder_forward<T: Real>(
    tape: &mut Tape<T>,
    bound: &BTreeMap<String, Var>,
    params: &ModelParams,
    cond: Var,
) -> Var {
    let net = Net { p: bound };
    let h = params.hidden;
    let batch = tape.value(cond).nrows();
    let x = net.linear(tape, cond, "enc.in");
    let x = tape.silu(x);
    let x = net.linear(tape, x, "enc.tok");
    let tokens = tape.reshape(x, batch * TOKENS, h);
    let emb = tape.tile_rows(net.w("enc.tok_emb"), batch);
    let tokens = tape.add(tokens, emb);
    let n = tape.layer_norm(tokens);
    let a = net.attention(tape, n, n, "enc.attn", params.heads, TOKENS);
    let tokens = tape.add(tokens, a);
    let pooled = tape.block_mean(tokens, TOKENS);
    tape.layer_norm(pooled)
}

/// Denoiser output `(B * 80) x 12`: predicted clean sample then the variance
/// interpolation channels.
///
/// `cond_feature` is the encoder output plus the timestep projection;
/// `ffm` holds the fusion weight of each row broadcast over `h` columns.
pub fn denoiser_forward<T: Real>(
    tape: &mut Tape<T>,
    bound: &BTreeMap<String, Var>,
    params: &ModelParams,
    x_t: Var,
    cond_feature: Var,
    ffm: Var,
) -> Var {
    let net = Net { p: bound };
    let h = params.hidden;
    let batch = tape.value(cond_feature).nrows();
    let pe = sinusoid::<T>((0..SEQ_LEN).map(|i| i as f64), h);
    let pe = tape.constant(pe);
    let pe = tape.tile_rows(pe, batch);

    let mut x = net.linear(tape, x_t, "dec.in");
    for b in 0..params.blocks {
        let pre = format!("block{b}");
        // Spatial module: gated cross-channel convolution.
        let n = tape.layer_norm(x);
        let c = net.conv(tape, n, &format!("{pre}.sm"), SEQ_LEN);
        let g = tape.sigmoid(c);
        let gated = tape.mul(n, g);
        x = tape.add(x, gated);

        // Temporal self-attention, position-encoded query and key.
        let n = tape.layer_norm(x);
        let xp = tape.add(n, pe);
        let a = net.attention(tape, xp, n, &format!("{pre}.attn"), params.heads, SEQ_LEN);
        x = tape.add(x, a);

        // Alignment module.
        let n = tape.layer_norm(x);
        let c = net.conv(tape, n, &format!("{pre}.am.conv"), SEQ_LEN);
        let cond = net.linear(tape, cond_feature, &format!("{pre}.am.cond"));
        let cond = tape.repeat_rows(cond, SEQ_LEN);
        let a = tape.add(c, cond);
        let a = tape.silu(a);
        let a = net.linear(tape, a, &format!("{pre}.am.out"));
        x = tape.add(x, a);

        // Feature fusion: gated condition, weighted toward both endpoints.
        let gate = net.linear(tape, cond_feature, &format!("{pre}.ffm.gate"));
        let gate = tape.sigmoid(gate);
        let gated = tape.mul(cond_feature, gate);
        let gated = tape.repeat_rows(gated, SEQ_LEN);
        let n = tape.layer_norm(x);
        let cat = tape.concat_cols(&[n, gated]);
        let fused = net.linear(tape, cat, &format!("{pre}.ffm.fuse"));
        let fused = tape.mul(fused, ffm);
        x = tape.add(x, fused);
    }
    let n = tape.layer_norm(x);
    net.linear(tape, n, "head")
}

/// Encoder output plus the projected timestep embedding.
pub(super) fn condition_feature<T: Real>(
    tape: &mut Tape<T>,
    bound: &BTreeMap<String, Var>,
    params: &ModelParams,
    cond: Var,
    steps: &[usize],
) -> Var {
    let enc = encoder_forward(tape, bound, params, cond);
    let emb = tape.constant(timestep_embedding(steps, params.hidden));
    let net = Net { p: bound };
    let temb = net.linear(tape, emb, "time");
    tape.add(enc, temb)
}

/// FFM weights for a batch, one row per time step broadcast over `width`.
pub(super) fn ffm_matrix<T: Real>(l_valid: &[usize], width: usize, sigma_frac: f64) -> Array2<T> {
    let mut m = Array2::zeros((l_valid.len() * SEQ_LEN, width));
    for (b, &l) in l_valid.iter().enumerate() {
        let w = super::ffm_weights::<f64>(l, SEQ_LEN, sigma_frac);
        for (i, wi) in w.into_iter().enumerate() {
            m.row_mut(b * SEQ_LEN + i).fill(T::of(wi));
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelParams {
        ModelParams { hidden: 8, blocks: 1, heads: 2, steps: 10, ddim_steps: 5, ..Default::default() }
    }

    fn cond(batch: usize) -> Array2<f64> {
        Array2::from_shape_fn((batch, COND_DIM), |(r, c)| 0.1 * (r as f64 + 1.0) - 0.05 * c as f64)
    }

    #[test]
    fn encoder_is_deterministic_and_shaped() {
        let p = small();
        let params = init_params::<f64>(&p, 4);
        let run = || {
            let mut t = Tape::new();
            let b = bind(&mut t, &params);
            let c = t.constant(cond(3));
            let out = encoder_forward(&mut t, &b, &p, c);
            t.value(out).clone()
        };
        let a = run();
        assert_eq!(a.dim(), (3, 8));
        assert_eq!(a, run());
    }

    #[test]
    fn zero_weights_give_zero_condition_feature() {
        let p = small();
        let zeros: ParamSet<f64> = init_params::<f64>(&p, 4)
            .into_iter()
            .map(|(k, v)| (k, Array2::zeros(v.raw_dim())))
            .collect();
        let mut t = Tape::new();
        let b = bind(&mut t, &zeros);
        let c = t.constant(cond(2));
        let out = encoder_forward(&mut t, &b, &p, c);
        assert!(t.value(out).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn denoiser_output_shape() {
        let p = small();
        let params = init_params::<f64>(&p, 5);
        let mut t = Tape::new();
        let b = bind(&mut t, &params);
        let c = t.constant(cond(2));
        let feat = condition_feature(&mut t, &b, &p, c, &[3, 7]);
        let x = t.constant(Array2::from_elem((2 * SEQ_LEN, CHANNELS), 0.3));
        let ffm = t.constant(ffm_matrix(&[10, 80], 8, p.sigma_frac));
        let out = denoiser_forward(&mut t, &b, &p, x, feat, ffm);
        assert_eq!(t.value(out).dim(), (2 * SEQ_LEN, 2 * CHANNELS));
        // The zero head makes an untrained model predict the normalized mean.
        assert!(t.value(out).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shapes_cover_every_tensor() {
        let p = ModelParams::default();
        let shapes = param_shapes(&p);
        let params = init_params::<f32>(&p, 1);
        assert_eq!(shapes.len(), params.len());
        for (name, shape) in shapes {
            assert_eq!(params[&name].dim(), shape);
        }
    }

    #[test]
    fn timestep_embedding_layout() {
        let e = timestep_embedding::<f64>(&[0, 5], 4);
        assert_eq!(e.row(0).to_vec(), vec![0.0, 1.0, 0.0, 1.0]);
        assert!((e[[1, 0]] - 5f64.sin()).abs() < 1e-15);
        assert!((e[[1, 3]] - (5.0 * 0.01f64).cos()).abs() < 1e-15);
    }
}
