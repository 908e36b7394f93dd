//! Forward pass with cached activations and the matching backward pass.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};

use super::params::{Conv1dParams, Conv2dParams, GateParams, GruParams, ModelParams};
use super::ModelConfig;
use crate::error::{Result, SedError};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct ConvCache {
    in_dims: (usize, usize, usize),
    cols: Array2<f64>,
    /// Post-ReLU activations, `out x (T * F)`.
    act: Array2<f64>,
    /// Flat `(t * F + f)` source of each pooled output, per channel.
    argmax: Vec<usize>,
    out_dims: (usize, usize, usize),
}

struct Conv1dCache {
    cols: Array2<f64>,
    act: Array2<f64>,
}

struct GruCache {
    /// States in processing order; row 0 is the zero initial state.
    h: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    cand: Array2<f64>,
    rh: Array2<f64>,
    reverse: bool,
}

struct GateCache {
    input: Array2<f64>,
    tanh_f: Array2<f64>,
    sig_g: Array2<f64>,
}

/// Activations kept for [`backward`].
pub struct Cache {
    conv: Vec<ConvCache>,
    /// `(channels, frames, bands)` after the conv stack.
    conv_out: (usize, usize, usize),
    /// Frames before the adaptive time pool; equal to the output frames when it is inactive.
    pooled_from: usize,
    conv1d_in: Array2<f64>,
    conv1d: Option<Conv1dCache>,
    gru_in: Array2<f64>,
    gru: Option<(GruCache, GruCache)>,
    gate: Option<GateCache>,
    head_in: Array2<f64>,
    attention: Array2<f64>,
    attention_sum: Array1<f64>,
}

pub struct ForwardOutput {
    /// Frame posteriors `P`, `T' x classes`.
    pub frame_probs: Array2<f64>,
    /// Attention-pooled clip scores `y`.
    pub clip_scores: Array1<f64>,
    pub cache: Cache,
}

fn im2col3x3(x: &Array3<f64>) -> Array2<f64> {
    let (c_len, t_len, f_len) = x.dim();
    let mut cols = Array2::<f64>::zeros((c_len * 9, t_len * f_len));
    for c in 0..c_len {
        for ky in 0..3 {
            for kx in 0..3 {
                let mut row = cols.row_mut(c * 9 + ky * 3 + kx);
                let row = row.as_slice_mut().expect("standard layout");
                for t in 0..t_len {
                    let Some(ts) = (t + ky).checked_sub(1).filter(|&ts| ts < t_len) else {
                        continue;
                    };
                    for f in 0..f_len {
                        if let Some(fs) = (f + kx).checked_sub(1).filter(|&fs| fs < f_len) {
                            row[t * f_len + f] = x[[c, ts, fs]];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im3x3(cols: &Array2<f64>, dims: (usize, usize, usize)) -> Array3<f64> {
    let (c_len, t_len, f_len) = dims;
    let mut x = Array3::<f64>::zeros(dims);
    for c in 0..c_len {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = cols.row(c * 9 + ky * 3 + kx);
                for t in 0..t_len {
                    let Some(ts) = (t + ky).checked_sub(1).filter(|&ts| ts < t_len) else {
                        continue;
                    };
                    for f in 0..f_len {
                        if let Some(fs) = (f + kx).checked_sub(1).filter(|&fs| fs < f_len) {
                            x[[c, ts, fs]] += row[t * f_len + f];
                        }
                    }
                }
            }
        }
    }
    x
}

fn add_row_bias(m: &mut Array2<f64>, b: &Array1<f64>) {
    for (mut row, &bv) in m.axis_iter_mut(Axis(0)).zip(b) {
        row += bv;
    }
}

fn relu_inplace(m: &mut Array2<f64>) {
    m.mapv_inplace(|v| v.max(0.0));
}

fn conv_block_forward(
    x: &Array3<f64>,
    p: &Conv2dParams,
    freq_pool: usize,
    time_pool: usize,
) -> Result<(Array3<f64>, ConvCache)> {
    let (c_in, t_len, f_len) = x.dim();
    if t_len < time_pool || f_len < freq_pool {
        return Err(SedError::Shape(format!(
            "{t_len}x{f_len} input is smaller than the {time_pool}x{freq_pool} pool"
        )));
    }
    let cols = im2col3x3(x);
    let mut act = p.weight.dot(&cols);
    add_row_bias(&mut act, &p.bias);
    relu_inplace(&mut act);
    let c_out = act.nrows();
    let (to_len, fo_len) = (t_len / time_pool, f_len / freq_pool);
    let mut out = Array3::<f64>::zeros((c_out, to_len, fo_len));
    let mut argmax = Vec::with_capacity(c_out * to_len * fo_len);
    for c in 0..c_out {
        let row = act.row(c);
        for to in 0..to_len {
            for fo in 0..fo_len {
                let mut best = (f64::NEG_INFINITY, 0);
                for i in 0..time_pool {
                    for j in 0..freq_pool {
                        let idx = (to * time_pool + i) * f_len + fo * freq_pool + j;
                        if row[idx] > best.0 {
                            best = (row[idx], idx);
                        }
                    }
                }
                out[[c, to, fo]] = best.0;
                argmax.push(best.1);
            }
        }
    }
    let cache = ConvCache {
        in_dims: (c_in, t_len, f_len),
        cols,
        act,
        argmax,
        out_dims: (c_out, to_len, fo_len),
    };
    Ok((out, cache))
}

/// Returns the weight gradients and, if requested, the input gradient.
fn conv_block_backward(
    dout: &Array3<f64>,
    p: &Conv2dParams,
    cache: &ConvCache,
    need_input: bool,
) -> (Conv2dParams, Option<Array3<f64>>) {
    let (c_out, to_len, fo_len) = cache.out_dims;
    let mut dact = Array2::<f64>::zeros(cache.act.dim());
    let mut k = 0;
    for c in 0..c_out {
        for to in 0..to_len {
            for fo in 0..fo_len {
                let idx = cache.argmax[k];
                k += 1;
                if cache.act[[c, idx]] > 0.0 {
                    dact[[c, idx]] += dout[[c, to, fo]];
                }
            }
        }
    }
    let grad = Conv2dParams {
        weight: dact.dot(&cache.cols.t()),
        bias: dact.sum_axis(Axis(1)),
    };
    let dx = need_input.then(|| col2im3x3(&p.weight.t().dot(&dact), cache.in_dims));
    (grad, dx)
}

/// Segment `s` of `to` covers `[s * from / to, ceil((s + 1) * from / to))`.
fn segment(s: usize, from: usize, to: usize) -> (usize, usize) {
    (s * from / to, ((s + 1) * from).div_ceil(to))
}

fn time_mean_pool(x: &Array2<f64>, to: usize) -> Array2<f64> {
    let from = x.nrows();
    let mut out = Array2::<f64>::zeros((to, x.ncols()));
    for s in 0..to {
        let (a, b) = segment(s, from, to);
        let mean = x.slice(s![a..b, ..]).mean_axis(Axis(0)).expect("non-empty segment");
        out.row_mut(s).assign(&mean);
    }
    out
}

fn time_mean_unpool(d: &Array2<f64>, from: usize) -> Array2<f64> {
    let to = d.nrows();
    let mut out = Array2::<f64>::zeros((from, d.ncols()));
    for s in 0..to {
        let (a, b) = segment(s, from, to);
        let share = d.row(s).mapv(|v| v / (b - a) as f64);
        for t in a..b {
            let mut row = out.row_mut(t);
            row += &share;
        }
    }
    out
}

/// Rows are frames; column `d * k + j` holds input column `d` at offset `j - pad`.
fn im2col1d(x: &Array2<f64>, kernel: usize) -> Array2<f64> {
    let (t_len, d_len) = x.dim();
    let pad = kernel / 2;
    let mut cols = Array2::<f64>::zeros((t_len, d_len * kernel));
    for t in 0..t_len {
        for j in 0..kernel {
            let Some(ts) = (t + j).checked_sub(pad).filter(|&ts| ts < t_len) else {
                continue;
            };
            for d in 0..d_len {
                cols[[t, d * kernel + j]] = x[[ts, d]];
            }
        }
    }
    cols
}

fn col2im1d(cols: &Array2<f64>, d_len: usize, kernel: usize) -> Array2<f64> {
    let t_len = cols.nrows();
    let pad = kernel / 2;
    let mut x = Array2::<f64>::zeros((t_len, d_len));
    for t in 0..t_len {
        for j in 0..kernel {
            let Some(ts) = (t + j).checked_sub(pad).filter(|&ts| ts < t_len) else {
                continue;
            };
            for d in 0..d_len {
                x[[ts, d]] += cols[[t, d * kernel + j]];
            }
        }
    }
    x
}

fn conv1d_forward(x: &Array2<f64>, p: &Conv1dParams, kernel: usize) -> (Array2<f64>, Conv1dCache) {
    let cols = im2col1d(x, kernel);
    let mut act = cols.dot(&p.weight.t()) + &p.bias;
    relu_inplace(&mut act);
    (act.clone(), Conv1dCache { cols, act })
}

fn conv1d_backward(
    dout: &Array2<f64>,
    p: &Conv1dParams,
    cache: &Conv1dCache,
    d_len: usize,
    kernel: usize,
) -> (Conv1dParams, Array2<f64>) {
    let mut dz = dout.clone();
    dz.zip_mut_with(&cache.act, |g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
    let grad = Conv1dParams {
        weight: dz.t().dot(&cache.cols),
        bias: dz.sum_axis(Axis(0)),
    };
    let dx = col2im1d(&dz.dot(&p.weight), d_len, kernel);
    (grad, dx)
}

fn time_index(k: usize, t_len: usize, reverse: bool) -> usize {
    if reverse {
        t_len - 1 - k
    } else {
        k
    }
}

/// Runs one direction; the output is in time order, `T x H`.
fn gru_forward(x: &Array2<f64>, p: &GruParams, reverse: bool) -> (Array2<f64>, GruCache) {
    let t_len = x.nrows();
    let hid = p.u.ncols();
    let a = x.dot(&p.w.t()) + &p.b;
    let u_z = p.u.slice(s![0..hid, ..]);
    let u_r = p.u.slice(s![hid..2 * hid, ..]);
    let u_h = p.u.slice(s![2 * hid.., ..]);
    let mut h = Array2::<f64>::zeros((t_len + 1, hid));
    let mut z = Array2::<f64>::zeros((t_len, hid));
    let mut r = Array2::<f64>::zeros((t_len, hid));
    let mut cand = Array2::<f64>::zeros((t_len, hid));
    let mut rh = Array2::<f64>::zeros((t_len, hid));
    let mut out = Array2::<f64>::zeros((t_len, hid));
    for k in 0..t_len {
        let t = time_index(k, t_len, reverse);
        let hp = h.row(k).to_owned();
        let at = a.row(t);
        let zk = (&at.slice(s![0..hid]) + &u_z.dot(&hp)).mapv(sigmoid);
        let rk = (&at.slice(s![hid..2 * hid]) + &u_r.dot(&hp)).mapv(sigmoid);
        let rhk = &rk * &hp;
        let ck = (&at.slice(s![2 * hid..]) + &u_h.dot(&rhk)).mapv(f64::tanh);
        let hk = &hp + &(&zk * &(&ck - &hp));
        h.row_mut(k + 1).assign(&hk);
        out.row_mut(t).assign(&hk);
        z.row_mut(k).assign(&zk);
        r.row_mut(k).assign(&rk);
        cand.row_mut(k).assign(&ck);
        rh.row_mut(k).assign(&rhk);
    }
    (
        out,
        GruCache {
            h,
            z,
            r,
            cand,
            rh,
            reverse,
        },
    )
}

/// Backpropagation through time. `dout` is in time order.
fn gru_backward(dout: &Array2<f64>, x: &Array2<f64>, p: &GruParams, cache: &GruCache) -> (GruParams, Array2<f64>) {
    let t_len = x.nrows();
    let hid = p.u.ncols();
    let u_z = p.u.slice(s![0..hid, ..]);
    let u_r = p.u.slice(s![hid..2 * hid, ..]);
    let u_h = p.u.slice(s![2 * hid.., ..]);
    // rows in processing order
    let mut da = Array2::<f64>::zeros((t_len, 3 * hid));
    let mut dh_next = Array1::<f64>::zeros(hid);
    for k in (0..t_len).rev() {
        let t = time_index(k, t_len, cache.reverse);
        let dh = &dout.row(t) + &dh_next;
        let hp = cache.h.row(k);
        let zk = cache.z.row(k);
        let rk = cache.r.row(k);
        let ck = cache.cand.row(k);
        let dz = &dh * &(&ck - &hp);
        let dc = &dh * &zk;
        let mut dhp = &dh * &zk.mapv(|v| 1.0 - v);
        let dac = &dc * &ck.mapv(|v| 1.0 - v * v);
        let drh = u_h.t().dot(&dac);
        let dr = &drh * &hp;
        dhp += &(&drh * &rk);
        let daz = &dz * &zk.mapv(|v| v * (1.0 - v));
        let dar = &dr * &rk.mapv(|v| v * (1.0 - v));
        dhp += &u_z.t().dot(&daz);
        dhp += &u_r.t().dot(&dar);
        let mut row = da.row_mut(k);
        row.slice_mut(s![0..hid]).assign(&daz);
        row.slice_mut(s![hid..2 * hid]).assign(&dar);
        row.slice_mut(s![2 * hid..]).assign(&dac);
        dh_next = dhp;
    }
    let h_prev = cache.h.slice(s![0..t_len, ..]);
    let mut du = Array2::<f64>::zeros((3 * hid, hid));
    du.slice_mut(s![0..2 * hid, ..])
        .assign(&da.slice(s![.., 0..2 * hid]).t().dot(&h_prev));
    du.slice_mut(s![2 * hid.., ..])
        .assign(&da.slice(s![.., 2 * hid..]).t().dot(&cache.rh));
    let x_steps = Array2::from_shape_fn(x.dim(), |(k, d)| x[[time_index(k, t_len, cache.reverse), d]]);
    let grad = GruParams {
        w: da.t().dot(&x_steps),
        u: du,
        b: da.sum_axis(Axis(0)),
    };
    let dx_steps = da.dot(&p.w);
    let dx = Array2::from_shape_fn(x.dim(), |(t, d)| dx_steps[[time_index(t, t_len, cache.reverse), d]]);
    (grad, dx)
}

fn gate_forward(x: &Array2<f64>, p: &GateParams) -> (Array2<f64>, GateCache) {
    let tanh_f = x.dot(&p.wf.t()).mapv(f64::tanh);
    let sig_g = x.dot(&p.wg.t()).mapv(sigmoid);
    let out = &tanh_f * &sig_g;
    (
        out,
        GateCache {
            input: x.clone(),
            tanh_f,
            sig_g,
        },
    )
}

fn gate_backward(dout: &Array2<f64>, p: &GateParams, cache: &GateCache) -> (GateParams, Array2<f64>) {
    let df = dout * &cache.sig_g * &cache.tanh_f.mapv(|v| 1.0 - v * v);
    let dg = dout * &cache.tanh_f * &cache.sig_g.mapv(|v| v * (1.0 - v));
    let grad = GateParams {
        wf: df.t().dot(&cache.input),
        wg: dg.t().dot(&cache.input),
    };
    let dx = df.dot(&p.wf) + dg.dot(&p.wg);
    (grad, dx)
}

/// Runs the network on one standardized `channels x frames x bands` tensor.
pub fn forward(cfg: &ModelConfig, params: &ModelParams, x: &Array3<f64>) -> Result<ForwardOutput> {
    let (c_in, t_in, f_in) = x.dim();
    if c_in != cfg.in_channels || f_in != cfg.n_bands || t_in == 0 {
        return Err(SedError::Shape(format!(
            "input {:?} does not match {} channels x {} bands",
            x.dim(),
            cfg.in_channels,
            cfg.n_bands
        )));
    }
    let mut cur = x.clone();
    let mut conv = Vec::with_capacity(cfg.conv_blocks.len());
    for (block, p) in cfg.conv_blocks.iter().zip(&params.conv) {
        let (out, cache) = conv_block_forward(&cur, p, block.freq_pool, block.time_pool)?;
        conv.push(cache);
        cur = out;
    }
    let conv_out = cur.dim();
    let (_, t1, bands) = conv_out;
    let reshaped = Array2::from_shape_fn((t1, conv_out.0 * bands), |(t, d)| cur[[d / bands, t, d % bands]]);
    let t_out = cfg.output_frames(t_in);
    let conv1d_in = if t_out < t1 {
        time_mean_pool(&reshaped, t_out)
    } else {
        reshaped
    };

    let (gru_in, conv1d) = match &params.conv1d {
        Some(p) => {
            let (out, cache) = conv1d_forward(&conv1d_in, p, cfg.conv1d_kernel);
            (out, Some(cache))
        }
        None => (conv1d_in.clone(), None),
    };
    let (gate_in, gru) = match &params.gru {
        Some((pf, pb)) => {
            let (hf, cf) = gru_forward(&gru_in, pf, false);
            let (hb, cb) = gru_forward(&gru_in, pb, true);
            let out = ndarray::concatenate(Axis(1), &[hf.view(), hb.view()]).expect("same frame count");
            (out, Some((cf, cb)))
        }
        None => (gru_in.clone(), None),
    };
    let (head_in, gate) = match &params.gate {
        Some(p) => {
            let (out, cache) = gate_forward(&gate_in, p);
            (out, Some(cache))
        }
        None => (gate_in, None),
    };
    let frame_probs = (head_in.dot(&params.frame_w.t()) + &params.frame_b).mapv(sigmoid);
    let attention = (head_in.dot(&params.att_w.t()) + &params.att_b).mapv(sigmoid);
    let attention_sum = attention.sum_axis(Axis(0));
    let clip_scores = (&attention * &frame_probs).sum_axis(Axis(0)) / &attention_sum;
    if !clip_scores.iter().all(|v| v.is_finite()) {
        return Err(SedError::NonFinite("clip scores".into()));
    }
    Ok(ForwardOutput {
        frame_probs,
        clip_scores,
        cache: Cache {
            conv,
            conv_out,
            pooled_from: t1,
            conv1d_in,
            conv1d,
            gru_in,
            gru,
            gate,
            head_in,
            attention,
            attention_sum,
        },
    })
}

/// Gradient of a scalar loss with respect to every parameter, given dL/dy.
pub fn backward(
    cfg: &ModelConfig,
    params: &ModelParams,
    out: &ForwardOutput,
    d_clip: ArrayView1<f64>,
) -> Result<ModelParams> {
    let cache = &out.cache;
    let p = &out.frame_probs;
    let a = &cache.attention;
    let scale = &d_clip / &cache.attention_sum;
    let dp = a * &scale;
    let da = (p - &out.clip_scores) * &scale;
    let dzp = dp * &p.mapv(|v| v * (1.0 - v));
    let dza = da * &a.mapv(|v| v * (1.0 - v));

    let mut grad = ModelParams::zeros(cfg);
    grad.frame_w = dzp.t().dot(&cache.head_in);
    grad.frame_b = dzp.sum_axis(Axis(0));
    grad.att_w = dza.t().dot(&cache.head_in);
    grad.att_b = dza.sum_axis(Axis(0));
    let mut d = dzp.dot(&params.frame_w) + dza.dot(&params.att_w);

    if let (Some(pg), Some(gc)) = (&params.gate, &cache.gate) {
        let (g, dx) = gate_backward(&d, pg, gc);
        grad.gate = Some(g);
        d = dx;
    }
    if let (Some((pf, pb)), Some((cf, cb))) = (&params.gru, &cache.gru) {
        let hid = pf.u.ncols();
        let (gf, dxf) = gru_backward(&d.slice(s![.., 0..hid]).to_owned(), &cache.gru_in, pf, cf);
        let (gb, dxb) = gru_backward(&d.slice(s![.., hid..]).to_owned(), &cache.gru_in, pb, cb);
        grad.gru = Some((gf, gb));
        d = dxf + dxb;
    }
    if let (Some(pc), Some(cc)) = (&params.conv1d, &cache.conv1d) {
        let (g, dx) = conv1d_backward(&d, pc, cc, cache.conv1d_in.ncols(), cfg.conv1d_kernel);
        grad.conv1d = Some(g);
        d = dx;
    }
    if !params.conv.is_empty() {
        if d.nrows() < cache.pooled_from {
            d = time_mean_unpool(&d, cache.pooled_from);
        }
        let (channels, t1, bands) = cache.conv_out;
        let mut dcur = Array3::from_shape_fn((channels, t1, bands), |(c, t, f)| d[[t, c * bands + f]]);
        for i in (0..params.conv.len()).rev() {
            let (g, dx) = conv_block_backward(&dcur, &params.conv[i], &cache.conv[i], i > 0);
            grad.conv[i] = g;
            if let Some(dx) = dx {
                dcur = dx;
            }
        }
    }
    let grad = grad.into_standard_layout();
    if !grad.all_finite() {
        return Err(SedError::NonFinite("gradient".into()));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bce_grad, ConvBlock};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            in_channels: 2,
            n_bands: 8,
            n_classes: 3,
            conv_blocks: vec![ConvBlock {
                out_channels: 3,
                freq_pool: 2,
                time_pool: 1,
            }],
            conv1d_channels: 4,
            conv1d_kernel: 3,
            rnn_hidden: 3,
            gated_dim: 4,
            target_frames: Some(5),
        }
    }

    fn linear_only(bands: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            in_channels: 1,
            n_bands: bands,
            n_classes: classes,
            conv_blocks: vec![],
            conv1d_channels: 0,
            conv1d_kernel: 3,
            rnn_hidden: 0,
            gated_dim: 0,
            target_frames: None,
        }
    }

    fn input(c: usize, t: usize, f: usize, seed: u64) -> Array3<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((c, t, f), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_params_give_half() {
        let cfg = ModelConfig::default();
        let out = forward(&cfg, &ModelParams::zeros(&cfg), &input(3, 40, 128, 1)).unwrap();
        assert!(out.frame_probs.iter().all(|&v| v == 0.5));
        assert!(out.clip_scores.iter().all(|&v| v == 0.5));
        let g = backward(&cfg, &ModelParams::zeros(&cfg), &out, Array1::from_elem(10, 1.0).view()).unwrap();
        assert!(g.all_finite());
    }

    #[test]
    fn uniform_attention_is_mean() {
        let cfg = tiny();
        let mut p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
        p.att_w.fill(0.0);
        let out = forward(&cfg, &p, &input(2, 12, 8, 3)).unwrap();
        let mean = out.frame_probs.mean_axis(Axis(0)).unwrap();
        for (y, m) in out.clip_scores.iter().zip(&mean) {
            assert!((y - m).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_score_within_frame_range() {
        let cfg = tiny();
        for seed in 0..10 {
            let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            let out = forward(&cfg, &p, &input(2, 9, 8, seed + 100)).unwrap();
            for c in 0..3 {
                let col = out.frame_probs.column(c);
                let lo = col.fold(f64::INFINITY, |a, &b| a.min(b));
                let hi = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                assert!(out.clip_scores[c] >= lo - 1e-12 && out.clip_scores[c] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn output_frames_follow_pooling() {
        let mut cfg = tiny();
        cfg.conv_blocks[0].time_pool = 2;
        cfg.target_frames = Some(4);
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
        for t in [2usize, 7, 8, 11, 20] {
            let out = forward(&cfg, &p, &input(2, t, 8, t as u64)).unwrap();
            assert_eq!(out.frame_probs.nrows(), cfg.output_frames(t));
            assert_eq!(out.frame_probs.nrows(), (t / 2).min(4));
        }
        assert!(forward(&cfg, &p, &input(2, 1, 8, 0)).is_err());
    }

    #[test]
    fn zero_param_bias_gradient() {
        let cfg = linear_only(4, 3);
        let p = ModelParams::zeros(&cfg);
        let out = forward(&cfg, &p, &input(1, 6, 4, 5)).unwrap();
        let t = [1.0, 0.0, 1.0];
        let dy = bce_grad(out.clip_scores.as_slice().unwrap(), &t, None);
        let g = backward(&cfg, &p, &out, ArrayView1::from(&dy)).unwrap();
        for (c, tc) in t.iter().enumerate() {
            let want = (0.5 - tc) / 3.0;
            assert!((g.frame_b[c] - want).abs() < 1e-12, "{} vs {want}", g.frame_b[c]);
            // y - P is zero everywhere, so the attention gets no gradient
            assert_eq!(g.att_b[c], 0.0);
        }
    }

    fn fd_check(cfg: &ModelConfig, p: &ModelParams, x: &Array3<f64>, t: &[f64]) -> f64 {
        crate::model::grad_check(cfg, p, x, t, None).unwrap().max_rel_error
    }

    #[test]
    fn logistic_regression_gradient() {
        let cfg = linear_only(5, 2);
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(6));
        let err = fd_check(&cfg, &p, &input(1, 7, 5, 7), &[1.0, 0.0]);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn tiny_crnn_gradient() {
        let cfg = tiny();
        let mut p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(8));
        for b in p.conv.iter_mut().map(|c| &mut c.bias) {
            b.fill(0.1);
        }
        let err = fd_check(&cfg, &p, &input(2, 11, 8, 9), &[1.0, 0.0, 1.0]);
        assert!(err < 1e-4, "{err}");
    }
}
