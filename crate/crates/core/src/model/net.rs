//! Forward pass, tape and exact backward pass of the cross-encoder.
//!
//! The forward pass records every intermediate needed for
//! backpropagation in a [`Tape`]; backward replays nothing and draws no
//! randomness, so a (forward, backward) pair always shares one dropout
//! realization.

use ndarray::{s, Array1, Array2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    layer_base, Gradients, ModelError, ModelParameters, B_FF1, B_FF2, B_K, B_O, B_Q, B_V,
    LN1_BIAS, LN1_GAIN, LN2_BIAS, LN2_GAIN, POS_EMB, TOK_EMB, W_FF1, W_FF2, W_K, W_O, W_Q, W_V,
};

/// Outputs per forward pass, one per annotated dimension.
pub const PREDICTION_DIMS: usize = 7;

/// Seven regression outputs in score-vector component order (Overall at
/// index 4).
pub type Prediction = [f64; PREDICTION_DIMS];

const LN_EPS: f64 = 1e-5;

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044_715;
    let t = (C * (x + A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

fn uniform_open01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inverted-dropout mask source. Masks are drawn from one stream in a fixed
/// site order (embedding, then attention and feed-forward per layer), so a
/// dropout seed pins the whole realization.
struct DropoutStream {
    rng: Option<ChaCha8Rng>,
    p: f64,
}

impl DropoutStream {
    fn new(active: bool, p: f64, seed: u64) -> Self {
        Self {
            rng: (active && p > 0.0).then(|| ChaCha8Rng::seed_from_u64(seed)),
            p,
        }
    }

    fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>> {
        let p = self.p;
        let keep = 1.0 / (1.0 - p);
        self.rng.as_mut().map(|rng| {
            Array2::from_shape_simple_fn((rows, cols), || {
                if uniform_open01(rng) < p {
                    0.0
                } else {
                    keep
                }
            })
        })
    }
}

/// Per-row layer normalization; returns the output plus the caches the
/// backward pass needs.
fn layer_norm(
    x: &Array2<f64>,
    gain: &Array2<f64>,
    bias: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let (n, d) = x.dim();
    let mut y = Array2::zeros((n, d));
    let mut xhat = Array2::zeros((n, d));
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        for c in 0..d {
            let xh = (row[c] - mean) * inv;
            xhat[[r, c]] = xh;
            y[[r, c]] = xh * gain[[0, c]] + bias[[0, c]];
        }
    }
    (y, xhat, inv_std)
}

/// Backward of [`layer_norm`]; accumulates parameter gradients and returns
/// the input gradient.
fn layer_norm_backward(
    dy: &Array2<f64>,
    xhat: &Array2<f64>,
    inv_std: &[f64],
    gain: &Array2<f64>,
    dgain: &mut Array2<f64>,
    dbias: &mut Array2<f64>,
) -> Array2<f64> {
    let (n, d) = dy.dim();
    let mut dx = Array2::zeros((n, d));
    for r in 0..n {
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            let g = dy[[r, c]] * gain[[0, c]];
            mean_dxhat += g;
            mean_dxhat_xhat += g * xhat[[r, c]];
            dgain[[0, c]] += dy[[r, c]] * xhat[[r, c]];
            dbias[[0, c]] += dy[[r, c]];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        for c in 0..d {
            let g = dy[[r, c]] * gain[[0, c]];
            dx[[r, c]] = inv_std[r] * (g - mean_dxhat - xhat[[r, c]] * mean_dxhat_xhat);
        }
    }
    dx
}

fn softmax_rows_inplace(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// `ds = p * (dp - rowsum(dp * p))`
fn softmax_rows_backward(probs: &Array2<f64>, dprobs: &Array2<f64>) -> Array2<f64> {
    let (n, m) = probs.dim();
    let mut ds = Array2::zeros((n, m));
    for r in 0..n {
        let mut dot = 0.0;
        for c in 0..m {
            dot += dprobs[[r, c]] * probs[[r, c]];
        }
        for c in 0..m {
            ds[[r, c]] = probs[[r, c]] * (dprobs[[r, c]] - dot);
        }
    }
    ds
}

struct LayerTape {
    xhat1: Array2<f64>,
    inv_std1: Vec<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    xhat2: Array2<f64>,
    inv_std2: Vec<f64>,
    ffn_pre: Array2<f64>,
    ffn_act: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
}

/// Everything backward needs from one forward pass. Opaque to callers; a
/// tape is only valid together with the parameters that produced it.
pub struct Tape {
    ids: Vec<u32>,
    emb_mask: Option<Array2<f64>>,
    layers: Vec<LayerTape>,
    xhat_f: Array2<f64>,
    inv_std_f: Vec<f64>,
    head_inputs: Vec<Array1<f64>>,
    head_pre: Vec<Array1<f64>>,
}

impl ModelParameters {
    fn t(&self, idx: usize) -> &Array2<f64> {
        &self.tensors[idx]
    }

    fn lt(&self, layer: usize, offset: usize) -> &Array2<f64> {
        &self.tensors[layer_base(layer) + offset]
    }

    /// Runs the encoder over a token sequence. Dropout is active only in
    /// train mode and is driven solely by `dropout_seed`; eval mode is a
    /// pure function of parameters and input.
    pub fn forward(
        &self,
        ids: &[u32],
        train_mode: bool,
        dropout_seed: u64,
    ) -> Result<(Prediction, Tape), ModelError> {
        let config = &self.config;
        let n = ids.len();
        if n == 0 {
            return Err(ModelError::EmptySequence);
        }
        if n > config.max_positions {
            return Err(ModelError::SequenceTooLong {
                len: n,
                max: config.max_positions,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab: config.vocab_size,
            });
        }

        let d = config.embed_dim;
        let heads = config.num_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dropout = DropoutStream::new(train_mode, config.dropout_p, dropout_seed);

        let tok_emb = self.t(TOK_EMB);
        let pos_emb = self.t(POS_EMB);
        let mut x = Array2::zeros((n, d));
        for (i, &id) in ids.iter().enumerate() {
            for c in 0..d {
                x[[i, c]] = tok_emb[[id as usize, c]] + pos_emb[[i, c]];
            }
        }
        let emb_mask = dropout.mask(n, d);
        if let Some(m) = &emb_mask {
            x *= m;
        }

        let mut layer_tapes = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            // attention block
            let (h, xhat1, inv_std1) = layer_norm(&x, self.lt(l, LN1_GAIN), self.lt(l, LN1_BIAS));
            let q = h.dot(self.lt(l, W_Q)) + self.lt(l, B_Q);
            let k = h.dot(self.lt(l, W_K)) + self.lt(l, B_K);
            let v = h.dot(self.lt(l, W_V)) + self.lt(l, B_V);
            let mut ctx = Array2::zeros((n, d));
            let mut probs = Vec::with_capacity(heads);
            for head in 0..heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let qh = q.slice(cols);
                let kh = k.slice(cols);
                let vh = v.slice(cols);
                let mut scores = qh.dot(&kh.t());
                scores *= scale;
                softmax_rows_inplace(&mut scores);
                let ctx_h = scores.dot(&vh);
                ctx.slice_mut(cols).assign(&ctx_h);
                probs.push(scores);
            }
            let mut attn = ctx.dot(self.lt(l, W_O)) + self.lt(l, B_O);
            let attn_mask = dropout.mask(n, d);
            if let Some(m) = &attn_mask {
                attn *= m;
            }
            x += &attn;

            // feed-forward block
            let (h2, xhat2, inv_std2) = layer_norm(&x, self.lt(l, LN2_GAIN), self.lt(l, LN2_BIAS));
            let ffn_pre = h2.dot(self.lt(l, W_FF1)) + self.lt(l, B_FF1);
            let ffn_act = ffn_pre.mapv(gelu);
            let mut y = ffn_act.dot(self.lt(l, W_FF2)) + self.lt(l, B_FF2);
            let ffn_mask = dropout.mask(n, y.ncols());
            if let Some(m) = &ffn_mask {
                y *= m;
            }
            x += &y;

            layer_tapes.push(LayerTape {
                xhat1,
                inv_std1,
                q,
                k,
                v,
                probs,
                ctx,
                attn_mask,
                xhat2,
                inv_std2,
                ffn_pre,
                ffn_act,
                ffn_mask,
            });
        }

        let fin = super::final_norm_base(config);
        let (xf, xhat_f, inv_std_f) = layer_norm(&x, &self.tensors[fin], &self.tensors[fin + 1]);
        let mut activation = xf.row(0).to_owned();

        let head_count = config.head_dims().len();
        let hb = super::head_base(config);
        let mut head_inputs = Vec::with_capacity(head_count);
        let mut head_pre = Vec::with_capacity(head_count);
        for i in 0..head_count {
            let w = &self.tensors[hb + 2 * i];
            let b = &self.tensors[hb + 2 * i + 1];
            head_inputs.push(activation.clone());
            let z = activation.dot(w) + b.row(0);
            head_pre.push(z.clone());
            activation = if config.head_activation && i + 1 < head_count {
                z.mapv(gelu)
            } else {
                z
            };
        }

        let mut prediction = [0.0; PREDICTION_DIMS];
        prediction.copy_from_slice(activation.as_slice().expect("contiguous"));
        let tape = Tape {
            ids: ids.to_vec(),
            emb_mask,
            layers: layer_tapes,
            xhat_f,
            inv_std_f,
            head_inputs,
            head_pre,
        };
        Ok((prediction, tape))
    }

    /// Eval-mode forward without keeping the tape.
    pub fn predict(&self, ids: &[u32]) -> Result<Prediction, ModelError> {
        Ok(self.forward(ids, false, 0)?.0)
    }

    /// Exact gradients of `loss_gradient . prediction` with respect to every
    /// parameter, reusing the dropout realization stored in `tape`.
    pub fn backward(&self, tape: &Tape, loss_gradient: &Prediction) -> Gradients {
        let mut grads = Gradients::zeros_for(self);
        self.backward_into(tape, loss_gradient, &mut grads);
        grads
    }

    /// [`Self::backward`] accumulating into an existing gradient buffer.
    pub fn backward_into(&self, tape: &Tape, loss_gradient: &Prediction, grads: &mut Gradients) {
        let config = &self.config;
        let n = tape.ids.len();
        let d = config.embed_dim;
        let heads = config.num_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // head
        let head_count = config.head_dims().len();
        let hb = super::head_base(config);
        let mut da = Array1::from(loss_gradient.to_vec());
        for i in (0..head_count).rev() {
            let dz = if config.head_activation && i + 1 < head_count {
                let pre = &tape.head_pre[i];
                Array1::from_shape_fn(da.len(), |j| da[j] * gelu_prime(pre[j]))
            } else {
                da
            };
            let input = &tape.head_inputs[i];
            let outer = input
                .view()
                .insert_axis(Axis(1))
                .dot(&dz.view().insert_axis(Axis(0)));
            grads.tensors[hb + 2 * i] += &outer;
            grads.tensors[hb + 2 * i + 1].row_mut(0).scaled_add(1.0, &dz);
            da = self.tensors[hb + 2 * i].dot(&dz);
        }

        // final layer norm: only the CLS row carries gradient
        let fin = super::final_norm_base(config);
        let mut dxf = Array2::zeros((n, d));
        dxf.row_mut(0).assign(&da);
        let (dgain_f, rest) = grads.tensors[fin..].split_at_mut(1);
        let mut dx = layer_norm_backward(
            &dxf,
            &tape.xhat_f,
            &tape.inv_std_f,
            &self.tensors[fin],
            &mut dgain_f[0],
            &mut rest[0],
        );

        for l in (0..config.num_layers).rev() {
            let lt = &tape.layers[l];
            let base = layer_base(l);

            // feed-forward block
            let dy = match &lt.ffn_mask {
                Some(m) => &dx * m,
                None => dx.clone(),
            };
            grads.tensors[base + W_FF2] += &lt.ffn_act.t().dot(&dy);
            grads.tensors[base + B_FF2]
                .row_mut(0)
                .scaled_add(1.0, &dy.sum_axis(Axis(0)));
            let dg = dy.dot(&self.lt(l, W_FF2).t());
            let mut du = dg;
            du.zip_mut_with(&lt.ffn_pre, |g, &u| *g *= gelu_prime(u));
            let h2 = {
                let gain = self.lt(l, LN2_GAIN);
                let bias = self.lt(l, LN2_BIAS);
                let mut h2 = lt.xhat2.clone();
                for mut row in h2.rows_mut() {
                    for c in 0..d {
                        row[c] = row[c] * gain[[0, c]] + bias[[0, c]];
                    }
                }
                h2
            };
            grads.tensors[base + W_FF1] += &h2.t().dot(&du);
            grads.tensors[base + B_FF1]
                .row_mut(0)
                .scaled_add(1.0, &du.sum_axis(Axis(0)));
            let dh2 = du.dot(&self.lt(l, W_FF1).t());
            let (dgain2, dbias2) = {
                let (a, b) = grads.tensors[base + LN2_GAIN..].split_at_mut(1);
                (a, b)
            };
            let dx_ln2 = layer_norm_backward(
                &dh2,
                &lt.xhat2,
                &lt.inv_std2,
                self.lt(l, LN2_GAIN),
                &mut dgain2[0],
                &mut dbias2[0],
            );
            dx += &dx_ln2;

            // attention block
            let dattn = match &lt.attn_mask {
                Some(m) => &dx * m,
                None => dx.clone(),
            };
            grads.tensors[base + W_O] += &lt.ctx.t().dot(&dattn);
            grads.tensors[base + B_O]
                .row_mut(0)
                .scaled_add(1.0, &dattn.sum_axis(Axis(0)));
            let dctx = dattn.dot(&self.lt(l, W_O).t());
            let mut dq = Array2::zeros((n, d));
            let mut dk = Array2::zeros((n, d));
            let mut dv = Array2::zeros((n, d));
            for head in 0..heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let probs = &lt.probs[head];
                let dctx_h = dctx.slice(cols);
                let vh = lt.v.slice(cols);
                let qh = lt.q.slice(cols);
                let kh = lt.k.slice(cols);
                let dprobs = dctx_h.dot(&vh.t());
                dv.slice_mut(cols).assign(&probs.t().dot(&dctx_h));
                let mut dscores = softmax_rows_backward(probs, &dprobs);
                dscores *= scale;
                dq.slice_mut(cols).assign(&dscores.dot(&kh));
                dk.slice_mut(cols).assign(&dscores.t().dot(&qh));
            }
            let h1 = {
                let gain = self.lt(l, LN1_GAIN);
                let bias = self.lt(l, LN1_BIAS);
                let mut h1 = lt.xhat1.clone();
                for mut row in h1.rows_mut() {
                    for c in 0..d {
                        row[c] = row[c] * gain[[0, c]] + bias[[0, c]];
                    }
                }
                h1
            };
            grads.tensors[base + W_Q] += &h1.t().dot(&dq);
            grads.tensors[base + B_Q]
                .row_mut(0)
                .scaled_add(1.0, &dq.sum_axis(Axis(0)));
            grads.tensors[base + W_K] += &h1.t().dot(&dk);
            grads.tensors[base + B_K]
                .row_mut(0)
                .scaled_add(1.0, &dk.sum_axis(Axis(0)));
            grads.tensors[base + W_V] += &h1.t().dot(&dv);
            grads.tensors[base + B_V]
                .row_mut(0)
                .scaled_add(1.0, &dv.sum_axis(Axis(0)));
            let dh_total =
                dq.dot(&self.lt(l, W_Q).t()) + dk.dot(&self.lt(l, W_K).t()) + dv.dot(&self.lt(l, W_V).t());
            let (dgain1, dbias1) = {
                let (a, b) = grads.tensors[base + LN1_GAIN..].split_at_mut(1);
                (a, b)
            };
            let dx_ln1 = layer_norm_backward(
                &dh_total,
                &lt.xhat1,
                &lt.inv_std1,
                self.lt(l, LN1_GAIN),
                &mut dgain1[0],
                &mut dbias1[0],
            );
            dx += &dx_ln1;
        }

        if let Some(m) = &tape.emb_mask {
            dx *= m;
        }
        for (i, &id) in tape.ids.iter().enumerate() {
            grads.tensors[TOK_EMB]
                .row_mut(id as usize)
                .scaled_add(1.0, &dx.row(i));
            grads.tensors[POS_EMB]
                .row_mut(i)
                .scaled_add(1.0, &dx.row(i));
        }
    }
}
