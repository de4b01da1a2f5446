//! The fixed encoder architecture and its hand-written gradients.
//!
//! Each layer is a separable convolution: a 1x3 convolution along time
//! followed by a 3x1 convolution along frequency, both stride-able, both
//! ELU-activated. The flattened feature vector is split into D subvectors,
//! each projected to one scalar by a Linear-ELU-Linear block, and the D
//! scalars are L2-normalized onto the unit sphere.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Embedding;
use crate::dsp::Spectrogram;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub input_bins: usize,
    pub input_frames: usize,
    /// Output channels per separable layer.
    pub channels: Vec<usize>,
    /// Frequency stride of each layer's 3x1 convolution.
    pub freq_strides: Vec<usize>,
    /// Time stride of each layer's 1x3 convolution.
    pub time_strides: Vec<usize>,
    /// Embedding dimension D; must divide the flattened feature size h.
    pub embed_dim: usize,
    /// Hidden width of each projection block.
    pub proj_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::desk()
    }
}

impl EncoderConfig {
    /// Desk-scale model: h = 512, D = 64, ~119k parameters.
    pub fn desk() -> Self {
        EncoderConfig {
            input_bins: 256,
            input_frames: 32,
            channels: vec![16, 32, 64, 128],
            freq_strides: vec![4, 4, 4, 2],
            time_strides: vec![2, 2, 2, 2],
            embed_dim: 64,
            proj_hidden: 32,
        }
    }

    /// Full-size shape: h = 1024, D = 128.
    pub fn full_scale() -> Self {
        EncoderConfig {
            channels: vec![32, 64, 128, 256],
            embed_dim: 128,
            ..EncoderConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty()
            || self.channels.len() != self.freq_strides.len()
            || self.channels.len() != self.time_strides.len()
        {
            return Err(Error::InvalidArgument(
                "channels/strides must be non-empty and equal length".into(),
            ));
        }
        let dims = Dims::new(self);
        if dims.h == 0 {
            return Err(Error::InvalidArgument(
                "spatial dimensions collapse to zero".into(),
            ));
        }
        if self.embed_dim == 0 || dims.h % self.embed_dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "embed dim {} must divide flattened size {}",
                self.embed_dim, dims.h
            )));
        }
        Ok(())
    }
}

/// Conv output length with kernel 3, padding 1: floor((n-1)/stride) + 1.
fn conv_out(n: usize, stride: usize) -> usize {
    if n == 0 {
        0
    } else {
        (n - 1) / stride + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerDims {
    pub in_ch: usize,
    pub out_ch: usize,
    pub f_in: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub f_out: usize,
    pub s_t: usize,
    pub s_f: usize,
    // flat parameter offsets
    pub wt: usize,
    pub bt: usize,
    pub wf: usize,
    pub bf: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dims {
    pub layers: Vec<LayerDims>,
    pub h: usize,
    pub sub: usize,
    pub proj_off: usize,
    pub proj_stride: usize,
    pub n_params: usize,
}

impl Dims {
    pub fn new(cfg: &EncoderConfig) -> Dims {
        let mut layers = Vec::with_capacity(cfg.channels.len());
        let (mut c, mut f, mut t) = (1usize, cfg.input_bins, cfg.input_frames);
        let mut off = 0usize;
        for (i, &out_ch) in cfg.channels.iter().enumerate() {
            let s_t = cfg.time_strides[i];
            let s_f = cfg.freq_strides[i];
            let t_out = conv_out(t, s_t);
            let f_out = conv_out(f, s_f);
            let wt = off;
            let bt = wt + out_ch * c * 3;
            let wf = bt + out_ch;
            let bf = wf + out_ch * out_ch * 3;
            off = bf + out_ch;
            layers.push(LayerDims {
                in_ch: c,
                out_ch,
                f_in: f,
                t_in: t,
                t_out,
                f_out,
                s_t,
                s_f,
                wt,
                bt,
                wf,
                bf,
            });
            c = out_ch;
            f = f_out;
            t = t_out;
        }
        let h = c * f * t;
        let sub = if cfg.embed_dim > 0 && h % cfg.embed_dim == 0 {
            h / cfg.embed_dim
        } else {
            0
        };
        let proj_off = off;
        let proj_stride = cfg.proj_hidden * sub + cfg.proj_hidden + cfg.proj_hidden + 1;
        let n_params = proj_off + cfg.embed_dim * proj_stride;
        Dims {
            layers,
            h,
            sub,
            proj_off,
            proj_stride,
            n_params,
        }
    }
}

/// All encoder weights as one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub cfg: EncoderConfig,
    pub theta: Vec<f64>,
}

impl EncoderParams {
    /// Fan-in-scaled uniform initialization, deterministic per seed.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let dims = Dims::new(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0f64; dims.n_params];
        for layer in &dims.layers {
            let bound_t = 1.0 / ((layer.in_ch * 3) as f64).sqrt();
            for w in &mut theta[layer.wt..layer.bt] {
                *w = rng.gen_range(-bound_t..bound_t);
            }
            let bound_f = 1.0 / ((layer.out_ch * 3) as f64).sqrt();
            for w in &mut theta[layer.wf..layer.bf] {
                *w = rng.gen_range(-bound_f..bound_f);
            }
        }
        let hidden = cfg.proj_hidden;
        for d in 0..cfg.embed_dim {
            let base = dims.proj_off + d * dims.proj_stride;
            let bound1 = 1.0 / (dims.sub as f64).sqrt();
            for w in &mut theta[base..base + hidden * dims.sub] {
                *w = rng.gen_range(-bound1..bound1);
            }
            let bound2 = 1.0 / (hidden as f64).sqrt();
            let w2 = base + hidden * dims.sub + hidden;
            for w in &mut theta[w2..w2 + hidden] {
                *w = rng.gen_range(-bound2..bound2);
            }
        }
        Ok(EncoderParams {
            cfg: cfg.clone(),
            theta,
        })
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub(crate) fn dims(&self) -> Dims {
        Dims::new(&self.cfg)
    }

    /// Persist as a small binary: magic, version, JSON config, f64 weights.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let cfg_json = serde_json::to_vec(&self.cfg)?;
        let mut bytes = Vec::with_capacity(14 + cfg_json.len() + self.theta.len() * 8);
        bytes.extend_from_slice(b"AFPN");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&cfg_json);
        bytes.extend_from_slice(&(self.theta.len() as u64).to_le_bytes());
        for w in &self.theta {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|e| Error::io(&display, e))?;
        let bad = |reason: &str| Error::BadFileFormat {
            path: display.clone(),
            reason: reason.to_string(),
        };
        if bytes.len() < 10 || &bytes[0..4] != b"AFPN" {
            return Err(bad("missing AFPN magic"));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != 1 {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let cfg_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        if bytes.len() < 10 + cfg_len + 8 {
            return Err(bad("truncated config"));
        }
        let cfg: EncoderConfig = serde_json::from_slice(&bytes[10..10 + cfg_len])?;
        cfg.validate()?;
        let off = 10 + cfg_len;
        let count = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
        if Dims::new(&cfg).n_params != count || bytes.len() != off + 8 + count * 8 {
            return Err(bad("weight count mismatch"));
        }
        let theta = (0..count)
            .map(|i| {
                let o = off + 8 + i * 8;
                f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap())
            })
            .collect();
        Ok(EncoderParams {
            cfg,
            theta,
        })
    }
}

/// Channel-major (c, f, t) tensor, t contiguous.
#[derive(Debug, Clone)]
pub(crate) struct Tensor3 {
    pub c: usize,
    pub f: usize,
    pub t: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    fn zeros(c: usize, f: usize, t: usize) -> Self {
        Tensor3 {
            c,
            f,
            t,
            data: vec![0.0; c * f * t],
        }
    }

    #[inline]
    fn idx(&self, c: usize, f: usize, t: usize) -> usize {
        (c * self.f + f) * self.t + t
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn elu_prime(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Forward activations retained for the backward pass.
pub(crate) struct Cache {
    pub inputs: Vec<Tensor3>, // activation entering each layer
    pub zt: Vec<Tensor3>,     // pre-ELU after the time conv
    pub zf: Vec<Tensor3>,     // pre-ELU after the freq conv
    pub at: Vec<Tensor3>,     // post-ELU after the time conv
    pub v: Vec<f64>,          // flattened feature vector (h)
    pub z1: Vec<f64>,         // D x hidden pre-ELU
    pub norm: f64,
    pub y: Vec<f64>,          // unit-norm embedding
}

fn conv_time(
    input: &Tensor3,
    w: &[f64],
    b: &[f64],
    out_ch: usize,
    stride: usize,
) -> Tensor3 {
    let t_out = conv_out(input.t, stride);
    let mut out = Tensor3::zeros(out_ch, input.f, t_out);
    for co in 0..out_ch {
        for ci in 0..input.c {
            let wbase = (co * input.c + ci) * 3;
            let (w0, w1, w2) = (w[wbase], w[wbase + 1], w[wbase + 2]);
            for f in 0..input.f {
                let in_row = &input.data[input.idx(ci, f, 0)..input.idx(ci, f, 0) + input.t];
                let out_base = out.idx(co, f, 0);
                for to in 0..t_out {
                    let ti = to * stride; // kernel taps ti-1, ti, ti+1
                    let mut acc = w1 * in_row[ti];
                    if ti > 0 {
                        acc += w0 * in_row[ti - 1];
                    }
                    if ti + 1 < input.t {
                        acc += w2 * in_row[ti + 1];
                    }
                    out.data[out_base + to] += acc;
                }
            }
        }
        let bias = b[co];
        let start = out.idx(co, 0, 0);
        for v in &mut out.data[start..start + input.f * t_out] {
            *v += bias;
        }
    }
    out
}

fn conv_freq(
    input: &Tensor3,
    w: &[f64],
    b: &[f64],
    out_ch: usize,
    stride: usize,
) -> Tensor3 {
    let f_out = conv_out(input.f, stride);
    let mut out = Tensor3::zeros(out_ch, f_out, input.t);
    for co in 0..out_ch {
        for ci in 0..input.c {
            let wbase = (co * input.c + ci) * 3;
            let (w0, w1, w2) = (w[wbase], w[wbase + 1], w[wbase + 2]);
            for fo in 0..f_out {
                let fi = fo * stride; // kernel taps fi-1, fi, fi+1
                let out_base = out.idx(co, fo, 0);
                let mid = input.idx(ci, fi, 0);
                for t in 0..input.t {
                    let mut acc = w1 * input.data[mid + t];
                    if fi > 0 {
                        acc += w0 * input.data[mid - input.t + t];
                    }
                    if fi + 1 < input.f {
                        acc += w2 * input.data[mid + input.t + t];
                    }
                    out.data[out_base + t] += acc;
                }
            }
        }
        let bias = b[co];
        let start = out.idx(co, 0, 0);
        for v in &mut out.data[start..start + f_out * input.t] {
            *v += bias;
        }
    }
    out
}

/// Full forward pass in f64, keeping activations.
pub(crate) fn forward_cached(params: &EncoderParams, spec: &Spectrogram) -> Result<Cache> {
    let cfg = &params.cfg;
    if spec.freq_bins != cfg.input_bins || spec.time_frames != cfg.input_frames {
        return Err(Error::InvalidArgument(format!(
            "encoder expects {}x{} input, got {}x{}",
            cfg.input_bins, cfg.input_frames, spec.freq_bins, spec.time_frames
        )));
    }
    let dims = params.dims();
    let mut inputs = Vec::with_capacity(dims.layers.len());
    let mut zts = Vec::with_capacity(dims.layers.len());
    let mut ats = Vec::with_capacity(dims.layers.len());
    let mut zfs = Vec::with_capacity(dims.layers.len());

    let mut current = Tensor3 {
        c: 1,
        f: spec.freq_bins,
        t: spec.time_frames,
        data: spec.values.clone(),
    };
    for layer in &dims.layers {
        let zt = conv_time(
            &current,
            &params.theta[layer.wt..layer.bt],
            &params.theta[layer.bt..layer.wf],
            layer.out_ch,
            layer.s_t,
        );
        let mut at = zt.clone();
        for v in &mut at.data {
            *v = elu(*v);
        }
        let zf = conv_freq(
            &at,
            &params.theta[layer.wf..layer.bf],
            &params.theta[layer.bf..layer.bf + layer.out_ch],
            layer.out_ch,
            layer.s_f,
        );
        let mut af = zf.clone();
        for v in &mut af.data {
            *v = elu(*v);
        }
        inputs.push(current);
        zts.push(zt);
        ats.push(at);
        zfs.push(zf);
        current = af;
    }

    let v = current.data;
    debug_assert_eq!(v.len(), dims.h);
    let hidden = cfg.proj_hidden;
    let mut z1 = vec![0.0; cfg.embed_dim * hidden];
    let mut u = vec![0.0; cfg.embed_dim];
    for d in 0..cfg.embed_dim {
        let base = dims.proj_off + d * dims.proj_stride;
        let sub = &v[d * dims.sub..(d + 1) * dims.sub];
        let w1 = &params.theta[base..base + hidden * dims.sub];
        let b1 = &params.theta[base + hidden * dims.sub..base + hidden * dims.sub + hidden];
        let w2_off = base + hidden * dims.sub + hidden;
        let w2 = &params.theta[w2_off..w2_off + hidden];
        let b2 = params.theta[w2_off + hidden];
        let mut acc_u = b2;
        for hh in 0..hidden {
            let mut acc = b1[hh];
            let wrow = &w1[hh * dims.sub..(hh + 1) * dims.sub];
            for (x, w) in sub.iter().zip(wrow) {
                acc += x * w;
            }
            z1[d * hidden + hh] = acc;
            acc_u += w2[hh] * elu(acc);
        }
        u[d] = acc_u;
    }

    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(Error::NonFiniteActivation);
    }
    let y: Vec<f64> = u.iter().map(|x| x / norm).collect();
    Ok(Cache {
        inputs,
        zt: zts,
        at: ats,
        zf: zfs,
        v,
        z1,
        norm,
        y,
    })
}

/// Map a spectrogram to its unit-norm embedding.
pub fn forward(params: &EncoderParams, spec: &Spectrogram) -> Result<Embedding> {
    let cache = forward_cached(params, spec)?;
    Embedding::from_f64_normalized(&cache.y)
}

/// Unit-norm embedding in f64, for training and gradient checks.
pub(crate) fn forward_f64(params: &EncoderParams, spec: &Spectrogram) -> Result<Vec<f64>> {
    Ok(forward_cached(params, spec)?.y)
}

/// Accumulate dL/dtheta for one sample given dL/dy, reusing the cache.
pub(crate) fn backward(
    params: &EncoderParams,
    cache: &Cache,
    dy: &[f64],
    grad: &mut [f64],
) {
    let cfg = &params.cfg;
    let dims = params.dims();
    let hidden = cfg.proj_hidden;

    // normalization: du = (dy - y <y, dy>) / norm
    let y_dot_dy: f64 = cache.y.iter().zip(dy).map(|(a, b)| a * b).sum();
    let du: Vec<f64> = cache
        .y
        .iter()
        .zip(dy)
        .map(|(y, g)| (g - y * y_dot_dy) / cache.norm)
        .collect();

    // projection blocks
    let mut dv = vec![0.0; dims.h];
    for d in 0..cfg.embed_dim {
        let base = dims.proj_off + d * dims.proj_stride;
        let w2_off = base + hidden * dims.sub + hidden;
        let sub_v = &cache.v[d * dims.sub..(d + 1) * dims.sub];
        let dud = du[d];
        // b2
        grad[w2_off + hidden] += dud;
        for hh in 0..hidden {
            let z = cache.z1[d * hidden + hh];
            let e = elu(z);
            grad[w2_off + hh] += dud * e;
            let dz1 = dud * params.theta[w2_off + hh] * elu_prime(z);
            grad[base + hidden * dims.sub + hh] += dz1; // b1
            let wrow = base + hh * dims.sub;
            for (s, x) in sub_v.iter().enumerate() {
                grad[wrow + s] += dz1 * x;
            }
            let w1row = &params.theta[wrow..wrow + dims.sub];
            for (s, w) in w1row.iter().enumerate() {
                dv[d * dims.sub + s] += dz1 * w;
            }
        }
    }

    // conv stack, reversed
    let last = dims.layers.len() - 1;
    let mut d_af = Tensor3 {
        c: dims.layers[last].out_ch,
        f: dims.layers[last].f_out,
        t: dims.layers[last].t_out,
        data: dv,
    };
    for (li, layer) in dims.layers.iter().enumerate().rev() {
        // through the freq-conv ELU
        let zf = &cache.zf[li];
        let mut d_zf = d_af;
        for (g, z) in d_zf.data.iter_mut().zip(&zf.data) {
            *g *= elu_prime(*z);
        }
        // freq conv backward
        let at = &cache.at[li];
        let mut d_at = Tensor3::zeros(at.c, at.f, at.t);
        for co in 0..layer.out_ch {
            let mut db = 0.0;
            let start = d_zf.idx(co, 0, 0);
            for g in &d_zf.data[start..start + d_zf.f * d_zf.t] {
                db += g;
            }
            grad[layer.bf + co] += db;
            for ci in 0..at.c {
                let wbase = layer.wf + (co * at.c + ci) * 3;
                let (w0, w1, w2) = (
                    params.theta[wbase],
                    params.theta[wbase + 1],
                    params.theta[wbase + 2],
                );
                let (mut gw0, mut gw1, mut gw2) = (0.0, 0.0, 0.0);
                for fo in 0..d_zf.f {
                    let fi = fo * layer.s_f;
                    let gbase = d_zf.idx(co, fo, 0);
                    let mid = at.idx(ci, fi, 0);
                    for t in 0..at.t {
                        let g = d_zf.data[gbase + t];
                        gw1 += g * at.data[mid + t];
                        d_at.data[mid + t] += w1 * g;
                        if fi > 0 {
                            gw0 += g * at.data[mid - at.t + t];
                            d_at.data[mid - at.t + t] += w0 * g;
                        }
                        if fi + 1 < at.f {
                            gw2 += g * at.data[mid + at.t + t];
                            d_at.data[mid + at.t + t] += w2 * g;
                        }
                    }
                }
                grad[wbase] += gw0;
                grad[wbase + 1] += gw1;
                grad[wbase + 2] += gw2;
            }
        }
        // through the time-conv ELU
        let zt = &cache.zt[li];
        let mut d_zt = d_at;
        for (g, z) in d_zt.data.iter_mut().zip(&zt.data) {
            *g *= elu_prime(*z);
        }
        // time conv backward
        let input = &cache.inputs[li];
        let mut d_in = Tensor3::zeros(input.c, input.f, input.t);
        for co in 0..layer.out_ch {
            let mut db = 0.0;
            let start = d_zt.idx(co, 0, 0);
            for g in &d_zt.data[start..start + d_zt.f * d_zt.t] {
                db += g;
            }
            grad[layer.bt + co] += db;
            for ci in 0..input.c {
                let wbase = layer.wt + (co * input.c + ci) * 3;
                let (w0, w1, w2) = (
                    params.theta[wbase],
                    params.theta[wbase + 1],
                    params.theta[wbase + 2],
                );
                let (mut gw0, mut gw1, mut gw2) = (0.0, 0.0, 0.0);
                for f in 0..input.f {
                    let gbase = d_zt.idx(co, f, 0);
                    let ibase = input.idx(ci, f, 0);
                    for to in 0..d_zt.t {
                        let g = d_zt.data[gbase + to];
                        let ti = to * layer.s_t;
                        gw1 += g * input.data[ibase + ti];
                        d_in.data[ibase + ti] += w1 * g;
                        if ti > 0 {
                            gw0 += g * input.data[ibase + ti - 1];
                            d_in.data[ibase + ti - 1] += w0 * g;
                        }
                        if ti + 1 < input.t {
                            gw2 += g * input.data[ibase + ti + 1];
                            d_in.data[ibase + ti + 1] += w2 * g;
                        }
                    }
                }
                grad[wbase] += gw0;
                grad[wbase + 1] += gw1;
                grad[wbase + 2] += gw2;
            }
        }
        d_af = d_in;
    }
}
