use ndarray::{Array1, Array2};
use rand::Rng;

use super::ModelConfig;

/// 3x3 convolution, weight laid out as `out x (in * 9)` with `(in, ky, kx)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Weight laid out as `out x (in * kernel)` with `(in, k)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// One GRU direction. Rows of `w`, `u` and `b` are stacked `[z; r; h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub wf: Array2<f64>,
    pub wg: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv: Vec<Conv2dParams>,
    pub conv1d: Option<Conv1dParams>,
    pub gru: Option<(GruParams, GruParams)>,
    pub gate: Option<GateParams>,
    /// Frame classifier, `classes x gate_out`.
    pub frame_w: Array2<f64>,
    pub frame_b: Array1<f64>,
    /// Attention head, `classes x gate_out`.
    pub att_w: Array2<f64>,
    pub att_b: Array1<f64>,
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::build(cfg, &mut |rows, cols, _, _| Array2::zeros((rows, cols)))
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        Self::build(cfg, &mut |rows, cols, fi, fo| glorot(rng, rows, cols, fi, fo))
    }

    fn build(cfg: &ModelConfig, mat: &mut dyn FnMut(usize, usize, usize, usize) -> Array2<f64>) -> Self {
        let dims = cfg.dims();
        let mut in_ch = cfg.in_channels;
        let conv = cfg
            .conv_blocks
            .iter()
            .map(|b| {
                let p = Conv2dParams {
                    weight: mat(b.out_channels, in_ch * 9, in_ch * 9, b.out_channels * 9),
                    bias: Array1::zeros(b.out_channels),
                };
                in_ch = b.out_channels;
                p
            })
            .collect();
        let conv1d = (cfg.conv1d_channels > 0).then(|| {
            let k = cfg.conv1d_kernel;
            Conv1dParams {
                weight: mat(
                    cfg.conv1d_channels,
                    dims.reshaped * k,
                    dims.reshaped * k,
                    cfg.conv1d_channels * k,
                ),
                bias: Array1::zeros(cfg.conv1d_channels),
            }
        });
        let gru = (cfg.rnn_hidden > 0).then(|| {
            let h = cfg.rnn_hidden;
            let mut dir = || GruParams {
                w: mat(3 * h, dims.conv1d_out, dims.conv1d_out, h),
                u: mat(3 * h, h, h, h),
                b: Array1::zeros(3 * h),
            };
            (dir(), dir())
        });
        let gate = (cfg.gated_dim > 0).then(|| GateParams {
            wf: mat(cfg.gated_dim, dims.rnn_out, dims.rnn_out, cfg.gated_dim),
            wg: mat(cfg.gated_dim, dims.rnn_out, dims.rnn_out, cfg.gated_dim),
        });
        let c = cfg.n_classes;
        ModelParams {
            conv,
            conv1d,
            gru,
            gate,
            frame_w: mat(c, dims.gate_out, dims.gate_out, c),
            frame_b: Array1::zeros(c),
            att_w: mat(c, dims.gate_out, dims.gate_out, c),
            att_b: Array1::zeros(c),
        }
    }

    /// Forces row-major storage, which [`Self::tensors`] relies on.
    pub fn into_standard_layout(mut self) -> Self {
        fn fix2(a: &mut Array2<f64>) {
            if !a.is_standard_layout() {
                *a = a.as_standard_layout().into_owned();
            }
        }
        for c in &mut self.conv {
            fix2(&mut c.weight);
        }
        if let Some(c) = &mut self.conv1d {
            fix2(&mut c.weight);
        }
        if let Some((f, b)) = &mut self.gru {
            for g in [f, b] {
                fix2(&mut g.w);
                fix2(&mut g.u);
            }
        }
        if let Some(g) = &mut self.gate {
            fix2(&mut g.wf);
            fix2(&mut g.wg);
        }
        fix2(&mut self.frame_w);
        fix2(&mut self.att_w);
        self
    }

    /// Named tensors in a fixed order: `(name, shape, values)`.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn push2(name: String, a: &Array2<f64>) -> (String, Vec<usize>, &[f64]) {
            (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        let mut v: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            v.push(push2(format!("conv{i}.weight"), &c.weight));
            v.push((
                format!("conv{i}.bias"),
                c.bias.shape().to_vec(),
                c.bias.as_slice().unwrap(),
            ));
        }
        if let Some(c) = &self.conv1d {
            v.push(push2("conv1d.weight".into(), &c.weight));
            v.push((
                "conv1d.bias".into(),
                c.bias.shape().to_vec(),
                c.bias.as_slice().unwrap(),
            ));
        }
        if let Some((f, b)) = &self.gru {
            for (tag, g) in [("fwd", f), ("bwd", b)] {
                v.push(push2(format!("gru.{tag}.w"), &g.w));
                v.push(push2(format!("gru.{tag}.u"), &g.u));
                v.push((format!("gru.{tag}.b"), g.b.shape().to_vec(), g.b.as_slice().unwrap()));
            }
        }
        if let Some(g) = &self.gate {
            v.push(push2("gate.wf".into(), &g.wf));
            v.push(push2("gate.wg".into(), &g.wg));
        }
        v.push(push2("frame.w".into(), &self.frame_w));
        v.push((
            "frame.b".into(),
            vec![self.frame_b.len()],
            self.frame_b.as_slice().unwrap(),
        ));
        v.push(push2("att.w".into(), &self.att_w));
        v.push(("att.b".into(), vec![self.att_b.len()], self.att_b.as_slice().unwrap()));
        v
    }

    /// Mutable views in the same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.conv {
            v.push(c.weight.as_slice_mut().unwrap());
            v.push(c.bias.as_slice_mut().unwrap());
        }
        if let Some(c) = &mut self.conv1d {
            v.push(c.weight.as_slice_mut().unwrap());
            v.push(c.bias.as_slice_mut().unwrap());
        }
        if let Some((f, b)) = &mut self.gru {
            for g in [f, b] {
                v.push(g.w.as_slice_mut().unwrap());
                v.push(g.u.as_slice_mut().unwrap());
                v.push(g.b.as_slice_mut().unwrap());
            }
        }
        if let Some(g) = &mut self.gate {
            v.push(g.wf.as_slice_mut().unwrap());
            v.push(g.wg.as_slice_mut().unwrap());
        }
        v.push(self.frame_w.as_slice_mut().unwrap());
        v.push(self.frame_b.as_slice_mut().unwrap());
        v.push(self.att_w.as_slice_mut().unwrap());
        v.push(self.att_b.as_slice_mut().unwrap());
        v
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.2.iter().copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// `self += scale * other`, elementwise over matching tensors.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src = other.flatten();
        let mut offset = 0;
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v += scale * src[offset];
                offset += 1;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|v| v.is_finite()))
    }
}
