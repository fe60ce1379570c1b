//! Forward pass, hand-written reverse-mode backward pass, monotone
//! quantile head, and pinball loss for the fixed encoder architecture.

use super::params::ModelParams;
use super::{ModelConfig, ModelError};

const LN_EPS: f64 = 1e-5;

pub fn softplus(x: f64) -> f64 {
    // log(1 + e^x), stable at both tails.
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// out[m x n] = a[m x k] . w[k x n] + b[n]
fn linear(a: &[f64], w: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        row.copy_from_slice(b);
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let wrow = &w[p * n..(p + 1) * n];
            for (o, wv) in row.iter_mut().zip(wrow) {
                *o += av * wv;
            }
        }
    }
}

/// out[m x k] += a[m x n] . b[k x n]^T
fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for q in 0..k {
            let brow = &b[q * n..(q + 1) * n];
            let mut acc = 0.0;
            for p in 0..n {
                acc += arow[p] * brow[p];
            }
            orow[q] += acc;
        }
    }
}

/// out[k x n] += a[m x k]^T . b[m x n]
fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn colsum_acc(a: &[f64], out: &mut [f64], m: usize, n: usize) {
    for i in 0..m {
        for (o, v) in out.iter_mut().zip(&a[i * n..(i + 1) * n]) {
            *o += v;
        }
    }
}

/// Normalizes one row; returns 1/std. `xn = g * xhat + b`.
fn layer_norm_row(x: &[f64], g: &[f64], b: &[f64], xhat: &mut [f64], xn: &mut [f64]) -> f64 {
    let d = x.len();
    let mean = x.iter().sum::<f64>() / d as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for j in 0..d {
        xhat[j] = (x[j] - mean) * rstd;
        xn[j] = g[j] * xhat[j] + b[j];
    }
    rstd
}

/// Backward of one normalized row: accumulates gamma/beta grads at
/// `dg_off`/`db_off` in `grads` and adds the input gradient into `dx`.
fn layer_norm_row_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: f64,
    g: &[f64],
    grads: &mut [f64],
    dg_off: usize,
    db_off: usize,
    dx: &mut [f64],
) {
    let d = dy.len();
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for j in 0..d {
        grads[dg_off + j] += dy[j] * xhat[j];
        grads[db_off + j] += dy[j];
        let dxh = dy[j] * g[j];
        m1 += dxh;
        m2 += dxh * xhat[j];
    }
    m1 /= d as f64;
    m2 /= d as f64;
    for j in 0..d {
        let dxh = dy[j] * g[j];
        dx[j] += rstd * (dxh - m1 - xhat[j] * m2);
    }
}

struct LayerCache {
    x_in: Vec<f64>,
    xhat1: Vec<f64>,
    xn1: Vec<f64>,
    rstd1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>, // heads x C x C
    ctx: Vec<f64>,
    x2: Vec<f64>,
    xhat2: Vec<f64>,
    xn2: Vec<f64>,
    rstd2: Vec<f64>,
    u: Vec<f64>, // C x d_ff, pre-activation
    g: Vec<f64>, // C x d_ff, gelu output
}

impl LayerCache {
    fn new(c: usize, d: usize, f: usize, heads: usize) -> Self {
        Self {
            x_in: vec![0.0; c * d],
            xhat1: vec![0.0; c * d],
            xn1: vec![0.0; c * d],
            rstd1: vec![0.0; c],
            q: vec![0.0; c * d],
            k: vec![0.0; c * d],
            v: vec![0.0; c * d],
            att: vec![0.0; heads * c * c],
            ctx: vec![0.0; c * d],
            x2: vec![0.0; c * d],
            xhat2: vec![0.0; c * d],
            xn2: vec![0.0; c * d],
            rstd2: vec![0.0; c],
            u: vec![0.0; c * f],
            g: vec![0.0; c * f],
        }
    }
}

struct Scratch {
    z_in: Vec<f64>,
    x: Vec<f64>,
    branch: Vec<f64>,
    xhat_f: Vec<f64>,
    rstd_f: f64,
    h_last: Vec<f64>,
    raw: Vec<f64>,
    d_x: Vec<f64>,
    d_xn: Vec<f64>,
    d_q: Vec<f64>,
    d_k: Vec<f64>,
    d_v: Vec<f64>,
    d_ctx: Vec<f64>,
    d_att: Vec<f64>,
    d_u: Vec<f64>,
    d_g: Vec<f64>,
    d_h: Vec<f64>,
}

/// Reusable forward/backward buffers for one model shape.
pub struct Workspace {
    cfg: ModelConfig,
    layers: Vec<LayerCache>,
    s: Scratch,
}

impl Workspace {
    pub fn new(cfg: ModelConfig) -> Self {
        let (c, d, f) = (cfg.context, cfg.d_model, cfg.d_ff);
        let layers = (0..cfg.n_layers).map(|_| LayerCache::new(c, d, f, cfg.n_heads)).collect();
        let s = Scratch {
            z_in: vec![0.0; c],
            x: vec![0.0; c * d],
            branch: vec![0.0; c * d],
            xhat_f: vec![0.0; d],
            rstd_f: 0.0,
            h_last: vec![0.0; d],
            raw: vec![0.0; cfg.outputs()],
            d_x: vec![0.0; c * d],
            d_xn: vec![0.0; c * d],
            d_q: vec![0.0; c * d],
            d_k: vec![0.0; c * d],
            d_v: vec![0.0; c * d],
            d_ctx: vec![0.0; c * d],
            d_att: vec![0.0; c * c],
            d_u: vec![0.0; c * f],
            d_g: vec![0.0; c * f],
            d_h: vec![0.0; d],
        };
        Self { cfg, layers, s }
    }

    /// Raw readout outputs `a` from the last forward call, H x |T| row-major.
    pub fn raw(&self) -> &[f64] {
        &self.s.raw
    }
}

/// Runs the encoder on one normalized context; raw outputs land in
/// `ws.raw()`.
pub fn forward(params: &ModelParams, z_in: &[f64], ws: &mut Workspace) -> Result<(), ModelError> {
    let cfg = params.layout.cfg;
    debug_assert_eq!(cfg, ws.cfg, "workspace built for a different config");
    if z_in.len() != cfg.context {
        return Err(ModelError::ShapeMismatch { expected: cfg.context, got: z_in.len() });
    }
    if let Some(pos) = z_in.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput(pos));
    }

    let (c, d, f, heads) = (cfg.context, cfg.d_model, cfg.d_ff, cfg.n_heads);
    let dk = d / heads;
    let inv_sqrt_dk = 1.0 / (dk as f64).sqrt();
    let p = &params.data;
    let lay = &params.layout;
    let s = &mut ws.s;
    s.z_in.copy_from_slice(z_in);

    // Scalar embedding + positional embedding.
    for i in 0..c {
        let zi = z_in[i];
        let row = &mut s.x[i * d..(i + 1) * d];
        for j in 0..d {
            row[j] = zi * p[lay.embed_w + j] + p[lay.embed_b + j] + p[lay.pos + i * d + j];
        }
    }

    for (l, lo) in lay.layers.iter().enumerate() {
        let cache = &mut ws.layers[l];
        cache.x_in.copy_from_slice(&s.x);

        for i in 0..c {
            cache.rstd1[i] = layer_norm_row(
                &cache.x_in[i * d..(i + 1) * d],
                &p[lo.ln1_g..lo.ln1_g + d],
                &p[lo.ln1_b..lo.ln1_b + d],
                &mut cache.xhat1[i * d..(i + 1) * d],
                &mut cache.xn1[i * d..(i + 1) * d],
            );
        }

        linear(&cache.xn1, &p[lo.wq..lo.wq + d * d], &p[lo.bq..lo.bq + d], &mut cache.q, c, d, d);
        linear(&cache.xn1, &p[lo.wk..lo.wk + d * d], &p[lo.bk..lo.bk + d], &mut cache.k, c, d, d);
        linear(&cache.xn1, &p[lo.wv..lo.wv + d * d], &p[lo.bv..lo.bv + d], &mut cache.v, c, d, d);

        for h in 0..heads {
            let off = h * dk;
            let att_h = &mut cache.att[h * c * c..(h + 1) * c * c];
            for i in 0..c {
                let qrow = &cache.q[i * d + off..i * d + off + dk];
                let scores = &mut att_h[i * c..(i + 1) * c];
                let mut maxv = f64::NEG_INFINITY;
                for j in 0..c {
                    let krow = &cache.k[j * d + off..j * d + off + dk];
                    let mut acc = 0.0;
                    for t in 0..dk {
                        acc += qrow[t] * krow[t];
                    }
                    scores[j] = acc * inv_sqrt_dk;
                    maxv = maxv.max(scores[j]);
                }
                let mut total = 0.0;
                for v in scores.iter_mut() {
                    *v = (*v - maxv).exp();
                    total += *v;
                }
                for v in scores.iter_mut() {
                    *v /= total;
                }
            }
            for i in 0..c {
                let arow = &att_h[i * c..(i + 1) * c];
                let crow = &mut cache.ctx[i * d + off..i * d + off + dk];
                crow.fill(0.0);
                for j in 0..c {
                    let w = arow[j];
                    if w == 0.0 {
                        continue;
                    }
                    let vrow = &cache.v[j * d + off..j * d + off + dk];
                    for t in 0..dk {
                        crow[t] += w * vrow[t];
                    }
                }
            }
        }

        linear(&cache.ctx, &p[lo.wo..lo.wo + d * d], &p[lo.bo..lo.bo + d], &mut s.branch, c, d, d);
        for (xv, (inv, bv)) in s.x.iter_mut().zip(cache.x_in.iter().zip(&s.branch)) {
            *xv = inv + bv;
        }
        cache.x2.copy_from_slice(&s.x);

        for i in 0..c {
            cache.rstd2[i] = layer_norm_row(
                &cache.x2[i * d..(i + 1) * d],
                &p[lo.ln2_g..lo.ln2_g + d],
                &p[lo.ln2_b..lo.ln2_b + d],
                &mut cache.xhat2[i * d..(i + 1) * d],
                &mut cache.xn2[i * d..(i + 1) * d],
            );
        }
        linear(&cache.xn2, &p[lo.w1..lo.w1 + d * f], &p[lo.b1..lo.b1 + f], &mut cache.u, c, d, f);
        for (gv, uv) in cache.g.iter_mut().zip(&cache.u) {
            *gv = gelu(*uv);
        }
        linear(&cache.g, &p[lo.w2..lo.w2 + f * d], &p[lo.b2..lo.b2 + d], &mut s.branch, c, f, d);
        for (xv, (x2v, bv)) in s.x.iter_mut().zip(cache.x2.iter().zip(&s.branch)) {
            *xv = x2v + bv;
        }
    }

    // Final layer norm, last position only: the readout sees nothing else.
    let last = &s.x[(c - 1) * d..c * d];
    s.rstd_f = layer_norm_row(
        last,
        &p[lay.final_ln_g..lay.final_ln_g + d],
        &p[lay.final_ln_b..lay.final_ln_b + d],
        &mut s.xhat_f,
        &mut s.h_last,
    );

    let out = cfg.outputs();
    s.raw.copy_from_slice(&p[lay.readout_b..lay.readout_b + out]);
    for j in 0..d {
        let hv = s.h_last[j];
        if hv == 0.0 {
            continue;
        }
        let wrow = &p[lay.readout_w + j * out..lay.readout_w + (j + 1) * out];
        for (o, wv) in s.raw.iter_mut().zip(wrow) {
            *o += hv * wv;
        }
    }
    Ok(())
}

/// Backpropagates `d_raw` (gradient at the raw outputs) through the state
/// cached by the last [`forward`], accumulating into `grads`.
pub fn backward(params: &ModelParams, ws: &mut Workspace, d_raw: &[f64], grads: &mut [f64]) {
    let cfg = params.layout.cfg;
    let (c, d, f, heads) = (cfg.context, cfg.d_model, cfg.d_ff, cfg.n_heads);
    let dk = d / heads;
    let inv_sqrt_dk = 1.0 / (dk as f64).sqrt();
    let out = cfg.outputs();
    let p = &params.data;
    let lay = &params.layout;
    let s = &mut ws.s;

    // Readout.
    for o in 0..out {
        grads[lay.readout_b + o] += d_raw[o];
    }
    s.d_h.fill(0.0);
    for j in 0..d {
        let hv = s.h_last[j];
        let wrow = &p[lay.readout_w + j * out..lay.readout_w + (j + 1) * out];
        let grow = &mut grads[lay.readout_w + j * out..lay.readout_w + (j + 1) * out];
        let mut acc = 0.0;
        for o in 0..out {
            grow[o] += hv * d_raw[o];
            acc += wrow[o] * d_raw[o];
        }
        s.d_h[j] = acc;
    }

    // Final layer norm; gradient exists only at the last position.
    s.d_x.fill(0.0);
    layer_norm_row_backward(
        &s.d_h,
        &s.xhat_f,
        s.rstd_f,
        &p[lay.final_ln_g..lay.final_ln_g + d],
        grads,
        lay.final_ln_g,
        lay.final_ln_b,
        &mut s.d_x[(c - 1) * d..c * d],
    );

    for (l, lo) in lay.layers.iter().enumerate().rev() {
        let cache = &ws.layers[l];

        // Feedforward branch: d_x holds the layer-output gradient, which is
        // also the residual gradient into x2.
        s.d_g.fill(0.0);
        matmul_nt_acc(&s.d_x, &p[lo.w2..lo.w2 + f * d], &mut s.d_g, c, d, f);
        matmul_tn_acc(&cache.g, &s.d_x, &mut grads[lo.w2..lo.w2 + f * d], c, f, d);
        colsum_acc(&s.d_x, &mut grads[lo.b2..lo.b2 + d], c, d);
        for i in 0..c * f {
            s.d_u[i] = s.d_g[i] * gelu_prime(cache.u[i]);
        }
        s.d_xn.fill(0.0);
        matmul_nt_acc(&s.d_u, &p[lo.w1..lo.w1 + d * f], &mut s.d_xn, c, f, d);
        matmul_tn_acc(&cache.xn2, &s.d_u, &mut grads[lo.w1..lo.w1 + d * f], c, d, f);
        colsum_acc(&s.d_u, &mut grads[lo.b1..lo.b1 + f], c, f);
        for i in 0..c {
            layer_norm_row_backward(
                &s.d_xn[i * d..(i + 1) * d],
                &cache.xhat2[i * d..(i + 1) * d],
                cache.rstd2[i],
                &p[lo.ln2_g..lo.ln2_g + d],
                grads,
                lo.ln2_g,
                lo.ln2_b,
                &mut s.d_x[i * d..(i + 1) * d],
            );
        }

        // Attention branch: d_x now holds the x2 gradient.
        s.d_ctx.fill(0.0);
        matmul_nt_acc(&s.d_x, &p[lo.wo..lo.wo + d * d], &mut s.d_ctx, c, d, d);
        matmul_tn_acc(&cache.ctx, &s.d_x, &mut grads[lo.wo..lo.wo + d * d], c, d, d);
        colsum_acc(&s.d_x, &mut grads[lo.bo..lo.bo + d], c, d);

        s.d_q.fill(0.0);
        s.d_k.fill(0.0);
        s.d_v.fill(0.0);
        for h in 0..heads {
            let off = h * dk;
            let att_h = &cache.att[h * c * c..(h + 1) * c * c];
            for i in 0..c {
                let dctx_row = &s.d_ctx[i * d + off..i * d + off + dk];
                let datt_row = &mut s.d_att[i * c..(i + 1) * c];
                for j in 0..c {
                    let vrow = &cache.v[j * d + off..j * d + off + dk];
                    let mut acc = 0.0;
                    for t in 0..dk {
                        acc += dctx_row[t] * vrow[t];
                    }
                    datt_row[j] = acc;
                }
                let arow = &att_h[i * c..(i + 1) * c];
                for j in 0..c {
                    let w = arow[j];
                    if w == 0.0 {
                        continue;
                    }
                    let dvrow = &mut s.d_v[j * d + off..j * d + off + dk];
                    for t in 0..dk {
                        dvrow[t] += w * dctx_row[t];
                    }
                }
            }
            // Softmax backward, in place on d_att.
            for i in 0..c {
                let arow = &att_h[i * c..(i + 1) * c];
                let drow = &mut s.d_att[i * c..(i + 1) * c];
                let dot: f64 = arow.iter().zip(drow.iter()).map(|(a, g)| a * g).sum();
                for j in 0..c {
                    drow[j] = arow[j] * (drow[j] - dot);
                }
            }
            for i in 0..c {
                let drow = &s.d_att[i * c..(i + 1) * c];
                let dqrow_start = i * d + off;
                for j in 0..c {
                    let g = drow[j] * inv_sqrt_dk;
                    if g == 0.0 {
                        continue;
                    }
                    let krow = &cache.k[j * d + off..j * d + off + dk];
                    let qrow = &cache.q[i * d + off..i * d + off + dk];
                    for t in 0..dk {
                        s.d_q[dqrow_start + t] += g * krow[t];
                        s.d_k[j * d + off + t] += g * qrow[t];
                    }
                }
            }
        }

        s.d_xn.fill(0.0);
        matmul_nt_acc(&s.d_q, &p[lo.wq..lo.wq + d * d], &mut s.d_xn, c, d, d);
        matmul_nt_acc(&s.d_k, &p[lo.wk..lo.wk + d * d], &mut s.d_xn, c, d, d);
        matmul_nt_acc(&s.d_v, &p[lo.wv..lo.wv + d * d], &mut s.d_xn, c, d, d);
        matmul_tn_acc(&cache.xn1, &s.d_q, &mut grads[lo.wq..lo.wq + d * d], c, d, d);
        matmul_tn_acc(&cache.xn1, &s.d_k, &mut grads[lo.wk..lo.wk + d * d], c, d, d);
        matmul_tn_acc(&cache.xn1, &s.d_v, &mut grads[lo.wv..lo.wv + d * d], c, d, d);
        colsum_acc(&s.d_q, &mut grads[lo.bq..lo.bq + d], c, d);
        colsum_acc(&s.d_k, &mut grads[lo.bk..lo.bk + d], c, d);
        colsum_acc(&s.d_v, &mut grads[lo.bv..lo.bv + d], c, d);
        for i in 0..c {
            layer_norm_row_backward(
                &s.d_xn[i * d..(i + 1) * d],
                &cache.xhat1[i * d..(i + 1) * d],
                cache.rstd1[i],
                &p[lo.ln1_g..lo.ln1_g + d],
                grads,
                lo.ln1_g,
                lo.ln1_b,
                &mut s.d_x[i * d..(i + 1) * d],
            );
        }
    }

    // Embedding.
    for i in 0..c {
        let drow = &s.d_x[i * d..(i + 1) * d];
        let zi = s.z_in[i];
        for j in 0..d {
            grads[lay.pos + i * d + j] += drow[j];
            grads[lay.embed_b + j] += drow[j];
            grads[lay.embed_w + j] += zi * drow[j];
        }
    }
}

/// Maps raw outputs to non-decreasing quantiles: base value plus softplus
/// increments, per horizon row.
pub fn to_quantiles_into(raw: &[f64], horizon: usize, n_q: usize, out: &mut [f64]) {
    debug_assert_eq!(raw.len(), horizon * n_q);
    for h in 0..horizon {
        let row = h * n_q;
        out[row] = raw[row];
        for k in 1..n_q {
            out[row + k] = out[row + k - 1] + softplus(raw[row + k]);
        }
    }
}

pub fn to_quantiles(raw: &[f64], horizon: usize, n_q: usize) -> Vec<f64> {
    let mut out = vec![0.0; raw.len()];
    to_quantiles_into(raw, horizon, n_q, &mut out);
    out
}

/// Backward of [`to_quantiles_into`]: turns a gradient at the quantiles
/// into a gradient at the raw outputs (accumulating).
pub fn to_quantiles_backward(
    raw: &[f64],
    d_quant: &[f64],
    horizon: usize,
    n_q: usize,
    d_raw: &mut [f64],
) {
    for h in 0..horizon {
        let row = h * n_q;
        let mut suffix = 0.0;
        for k in (1..n_q).rev() {
            suffix += d_quant[row + k];
            d_raw[row + k] += sigmoid(raw[row + k]) * suffix;
        }
        d_raw[row] += suffix + d_quant[row];
    }
}

/// Mean pinball loss over all (horizon, level) pairs.
///
/// `pred` is H x |T| row-major, `target` has length H.
pub fn pinball_loss(pred: &[f64], target: &[f64], levels: &[f64]) -> f64 {
    let n_q = levels.len();
    debug_assert_eq!(pred.len(), target.len() * n_q);
    let mut total = 0.0;
    for (h, &y) in target.iter().enumerate() {
        for (k, &tau) in levels.iter().enumerate() {
            let r = y - pred[h * n_q + k];
            total += (tau * r).max((tau - 1.0) * r);
        }
    }
    total / pred.len() as f64
}

/// Writes `scale * d(pinball)/d(pred)` into `d_pred`. With
/// `scale = 1 / (batch * H * |T|)` this matches the batch-mean loss.
pub fn pinball_loss_grad(
    pred: &[f64],
    target: &[f64],
    levels: &[f64],
    scale: f64,
    d_pred: &mut [f64],
) {
    let n_q = levels.len();
    for (h, &y) in target.iter().enumerate() {
        for (k, &tau) in levels.iter().enumerate() {
            let r = y - pred[h * n_q + k];
            d_pred[h * n_q + k] = if r > 0.0 { -tau } else { 1.0 - tau } * scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::rng::substream;
    use rand::Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig { d_model: 8, n_layers: 2, n_heads: 2, d_ff: 16, context: 6, horizon: 4, n_quantiles: 27 }
    }

    #[test]
    fn forward_shape_and_purity() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(cfg, &mut substream(0, "p", 0));
        let mut ws = Workspace::new(cfg);
        let z: Vec<f64> = (0..cfg.context).map(|i| i as f64 / 6.0).collect();
        forward(&params, &z, &mut ws).unwrap();
        assert_eq!(ws.raw().len(), 4 * 27);
        let first = ws.raw().to_vec();
        forward(&params, &z, &mut ws).unwrap();
        assert_eq!(first, ws.raw());
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(cfg, &mut substream(0, "p", 0));
        let mut ws = Workspace::new(cfg);
        assert!(matches!(
            forward(&params, &[0.0; 5], &mut ws),
            Err(ModelError::ShapeMismatch { expected: 6, got: 5 })
        ));
        let mut z = vec![0.0; 6];
        z[3] = f64::NAN;
        assert!(matches!(forward(&params, &z, &mut ws), Err(ModelError::NonFiniteInput(3))));
    }

    #[test]
    fn quantiles_are_monotone_and_match_softplus_identities() {
        // All raw zeros: level k equals (k-1) * ln 2.
        let raw = vec![0.0; 2 * 5];
        let q = to_quantiles(&raw, 2, 5);
        for h in 0..2 {
            for k in 0..5 {
                let expect = k as f64 * std::f64::consts::LN_2;
                assert!((q[h * 5 + k] - expect).abs() < 1e-12);
            }
        }
        // Strongly negative increments collapse to the base value.
        let mut raw = vec![0.0; 5];
        raw[0] = 1.25;
        for v in raw.iter_mut().skip(1) {
            *v = -50.0;
        }
        let q = to_quantiles(&raw, 1, 5);
        for &v in &q {
            assert!((v - 1.25).abs() < 1e-12);
        }
        // Random raw outputs never cross.
        let mut rng = substream(1, "mono", 0);
        for _ in 0..200 {
            let raw: Vec<f64> = (0..4 * 27).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let q = to_quantiles(&raw, 4, 27);
            for h in 0..4 {
                for k in 1..27 {
                    assert!(q[h * 27 + k] >= q[h * 27 + k - 1]);
                }
            }
        }
    }

    #[test]
    fn pinball_matches_hand_values() {
        // Perfect forecast.
        assert_eq!(pinball_loss(&[2.0], &[2.0], &[0.5]), 0.0);
        // Median pinball is half the absolute error.
        assert_eq!(pinball_loss(&[0.0], &[3.0], &[0.5]), 1.5);
        // tau = 0.9 penalizes under-prediction by 0.9, over by 0.1.
        assert!((pinball_loss(&[0.0], &[1.0], &[0.9]) - 0.9).abs() < 1e-15);
        assert!((pinball_loss(&[2.0], &[1.0], &[0.9]) - 0.1).abs() < 1e-15);
        // Nonnegative with zero only at equality.
        let mut rng = substream(2, "pb", 0);
        for _ in 0..500 {
            let pred = vec![rng.gen_range(-5.0..5.0)];
            let y = vec![rng.gen_range(-5.0..5.0)];
            let tau = rng.gen_range(0.01..0.99);
            let loss = pinball_loss(&pred, &y, &[tau]);
            assert!(loss >= 0.0);
            if (pred[0] - y[0]).abs() > 1e-12 {
                assert!(loss > 0.0);
            }
        }
    }

    #[test]
    fn readout_sees_only_the_last_position() {
        // Identical suffix state: two inputs that differ only in how the
        // attention mixes them still produce output through h_last alone;
        // verified structurally by zeroing d_raw and checking no gradient
        // flows to positions beyond the residual paths is out of scope
        // here. Instead check the documented contract: the raw output is a
        // linear function of h_last.
        let cfg = tiny_cfg();
        let params = ModelParams::init(cfg, &mut substream(3, "p", 0));
        let mut ws = Workspace::new(cfg);
        let z: Vec<f64> = (0..cfg.context).map(|i| (i as f64 * 0.3).sin().abs()).collect();
        forward(&params, &z, &mut ws).unwrap();
        let h_last = ws.s.h_last.clone();
        let raw = ws.raw().to_vec();
        let out = cfg.outputs();
        let d = cfg.d_model;
        for o in 0..out {
            let mut acc = params.data[params.layout.readout_b + o];
            for j in 0..d {
                acc += h_last[j] * params.data[params.layout.readout_w + j * out + o];
            }
            assert!((acc - raw[o]).abs() < 1e-12);
        }
    }
}
