//! The noise-prediction network: a 1-D temporal convolutional
//! encoder-decoder over the waypoint axis with skip connections and
//! sinusoidal timestep embeddings injected at every resolution level.
//!
//! Parameters are held as f64 values constrained to be exactly
//! f32-representable (checkpoints store 32-bit floats; keeping the invariant
//! in memory makes save/load round trips bit-identical). All arithmetic runs
//! in f64. The backward pass is hand-derived and validated against central
//! finite differences.
//!
//! Activation layout is channel-major: `data[c * len + l]`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::chain::Trajectory;
use crate::rng::stream;
use crate::{Error, Result};

/// Round to the nearest f32; parameter tensors only ever hold such values.
#[inline]
pub(crate) fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub m: usize,
    pub h: usize,
    pub widths: [usize; 3],
    pub temb: usize,
    pub kernel: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { m: 3, h: 50, widths: [32, 64, 128], temb: 32, kernel: 5 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("network needs m >= 1".into()));
        }
        if self.h < 4 {
            return Err(Error::Config("network needs a horizon of at least 4".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.temb < 4 || self.temb % 2 != 0 {
            return Err(Error::Config("timestep embedding dim must be even and >= 4".into()));
        }
        if self.kernel < 3 || self.kernel % 2 == 0 {
            return Err(Error::Config("kernel must be odd and >= 3".into()));
        }
        Ok(())
    }

    /// The architecture descriptor stored in checkpoint headers.
    pub fn descriptor(&self) -> String {
        format!(
            "tconv_unet widths={},{},{} temb={} kernel={}",
            self.widths[0], self.widths[1], self.widths[2], self.temb, self.kernel
        )
    }

    /// Parse a descriptor back into a config for the given data shape.
    pub fn from_descriptor(desc: &str, m: usize, h: usize) -> Result<Self> {
        let mut widths = None;
        let mut temb = None;
        let mut kernel = None;
        let mut parts = desc.split_whitespace();
        if parts.next() != Some("tconv_unet") {
            return Err(Error::Config(format!("unknown architecture in descriptor {desc:?}")));
        }
        for part in parts {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed descriptor field {part:?}")))?;
            match key {
                "widths" => {
                    let ws: Vec<usize> = value
                        .split(',')
                        .map(|v| v.parse().map_err(|_| Error::Config(format!("bad width {v:?}"))))
                        .collect::<Result<_>>()?;
                    if ws.len() != 3 {
                        return Err(Error::Config("descriptor needs three widths".into()));
                    }
                    widths = Some([ws[0], ws[1], ws[2]]);
                }
                "temb" => temb = Some(value.parse().map_err(|_| Error::Config("bad temb".into()))?),
                "kernel" => {
                    kernel = Some(value.parse().map_err(|_| Error::Config("bad kernel".into()))?)
                }
                _ => return Err(Error::Config(format!("unknown descriptor field {key:?}"))),
            }
        }
        let cfg = NetConfig {
            m,
            h,
            widths: widths.ok_or_else(|| Error::Config("descriptor missing widths".into()))?,
            temb: temb.ok_or_else(|| Error::Config("descriptor missing temb".into()))?,
            kernel: kernel.ok_or_else(|| Error::Config("descriptor missing kernel".into()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: &str, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor { name: name.to_string(), shape, data: vec![0.0; len] }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    /// Weights `[c_out, c_in, k]`.
    pub w: Tensor,
    pub b: Tensor,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv {
    fn new(name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        Conv {
            w: Tensor::zeros(&format!("{name}.w"), vec![c_out, c_in, k]),
            b: Tensor::zeros(&format!("{name}.b"), vec![c_out]),
            c_in,
            c_out,
            k,
            stride,
        }
    }

    fn out_len(&self, l_in: usize) -> usize {
        let pad = (self.k - 1) / 2;
        (l_in + 2 * pad - self.k) / self.stride + 1
    }

    /// Valid output range `[lo0, lo1)` for tap `kk`: input index
    /// `lo * stride + kk - pad` stays inside `[0, l_in)`.
    #[inline]
    fn tap_range(&self, kk: usize, l_in: usize, l_out: usize) -> (usize, usize) {
        let pad = (self.k - 1) / 2;
        let lo0 = pad.saturating_sub(kk).div_ceil(self.stride);
        let lo1 = if l_in + pad > kk {
            l_out.min((l_in + pad - kk - 1) / self.stride + 1)
        } else {
            0
        };
        (lo0, lo1.max(lo0))
    }

    fn forward(&self, input: &[f64], l_in: usize) -> Vec<f64> {
        let l_out = self.out_len(l_in);
        let pad = (self.k - 1) / 2;
        let mut out = vec![0.0; self.c_out * l_out];
        for co in 0..self.c_out {
            let row = &mut out[co * l_out..(co + 1) * l_out];
            row.fill(self.b.data[co]);
            for ci in 0..self.c_in {
                let in_row = &input[ci * l_in..(ci + 1) * l_in];
                let w_base = (co * self.c_in + ci) * self.k;
                for kk in 0..self.k {
                    let wv = self.w.data[w_base + kk];
                    if wv == 0.0 {
                        continue;
                    }
                    let (lo0, lo1) = self.tap_range(kk, l_in, l_out);
                    if self.stride == 1 {
                        let src = &in_row[lo0 + kk - pad..lo1 + kk - pad];
                        for (slot, &x) in row[lo0..lo1].iter_mut().zip(src) {
                            *slot += wv * x;
                        }
                    } else {
                        for (i, slot) in row[lo0..lo1].iter_mut().enumerate() {
                            *slot += wv * in_row[(lo0 + i) * self.stride + kk - pad];
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients and writes the input gradient.
    fn backward(
        &self,
        input: &[f64],
        l_in: usize,
        d_out: &[f64],
        d_in: &mut [f64],
        gw: &mut [f64],
        gb: &mut [f64],
    ) {
        let l_out = self.out_len(l_in);
        let pad = (self.k - 1) / 2;
        for co in 0..self.c_out {
            let d_row = &d_out[co * l_out..(co + 1) * l_out];
            gb[co] += d_row.iter().sum::<f64>();
            for ci in 0..self.c_in {
                let in_row = &input[ci * l_in..(ci + 1) * l_in];
                let di_row = &mut d_in[ci * l_in..(ci + 1) * l_in];
                let w_base = (co * self.c_in + ci) * self.k;
                for kk in 0..self.k {
                    let wv = self.w.data[w_base + kk];
                    let (lo0, lo1) = self.tap_range(kk, l_in, l_out);
                    let mut gw_acc = 0.0;
                    if self.stride == 1 {
                        let base = lo0 + kk - pad;
                        let src = &in_row[base..lo1 + kk - pad];
                        for (&d, &x) in d_row[lo0..lo1].iter().zip(src) {
                            gw_acc += d * x;
                        }
                        if wv != 0.0 {
                            for (dst, &d) in
                                di_row[base..lo1 + kk - pad].iter_mut().zip(&d_row[lo0..lo1])
                            {
                                *dst += wv * d;
                            }
                        }
                    } else {
                        for (i, &d) in d_row[lo0..lo1].iter().enumerate() {
                            let li = (lo0 + i) * self.stride + kk - pad;
                            gw_acc += d * in_row[li];
                            di_row[li] += wv * d;
                        }
                    }
                    gw[w_base + kk] += gw_acc;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    /// Weights `[n_out, n_in]`.
    pub w: Tensor,
    pub b: Tensor,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    fn new(name: &str, n_in: usize, n_out: usize) -> Self {
        Dense {
            w: Tensor::zeros(&format!("{name}.w"), vec![n_out, n_in]),
            b: Tensor::zeros(&format!("{name}.b"), vec![n_out]),
            n_in,
            n_out,
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_out);
        for o in 0..self.n_out {
            let row = &self.w.data[o * self.n_in..(o + 1) * self.n_in];
            out.push(self.b.data[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>());
        }
        out
    }

    fn backward(&self, x: &[f64], d_out: &[f64], d_in: &mut [f64], gw: &mut [f64], gb: &mut [f64]) {
        for o in 0..self.n_out {
            let d = d_out[o];
            gb[o] += d;
            let row = &self.w.data[o * self.n_in..(o + 1) * self.n_in];
            let g_row = &mut gw[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                g_row[i] += d * x[i];
                d_in[i] += row[i] * d;
            }
        }
    }
}

#[inline]
fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

#[inline]
fn silu_prime(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

/// conv -> add timestep projection -> silu -> conv -> silu.
#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub conv1: Conv,
    pub temb: Dense,
    pub conv2: Conv,
}

impl Block {
    fn new(name: &str, c_in: usize, c_out: usize, temb: usize, k: usize) -> Self {
        Block {
            conv1: Conv::new(&format!("{name}.conv1"), c_in, c_out, k, 1),
            temb: Dense::new(&format!("{name}.temb"), temb, c_out),
            conv2: Conv::new(&format!("{name}.conv2"), c_out, c_out, k, 1),
        }
    }
}

struct BlockTrace {
    input: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    out: Vec<f64>,
}

impl Block {
    fn forward(&self, input: Vec<f64>, len: usize, emb: &[f64]) -> BlockTrace {
        let mut pre1 = self.conv1.forward(&input, len);
        let proj = self.temb.forward(emb);
        for c in 0..self.conv1.c_out {
            let row = &mut pre1[c * len..(c + 1) * len];
            for v in row.iter_mut() {
                *v += proj[c];
            }
        }
        let act1: Vec<f64> = pre1.iter().map(|&z| silu(z)).collect();
        let pre2 = self.conv2.forward(&act1, len);
        let out: Vec<f64> = pre2.iter().map(|&z| silu(z)).collect();
        BlockTrace { input, pre1, act1, pre2, out }
    }

    /// Returns the gradient w.r.t. the block input; accumulates parameter
    /// gradients into `grads` (by tensor name lookup done by the caller via
    /// indices) and the embedding gradient into `d_emb`.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        trace: &BlockTrace,
        len: usize,
        emb: &[f64],
        d_out: &[f64],
        d_emb: &mut [f64],
        g: &mut BlockGrads<'_>,
    ) -> Vec<f64> {
        let d_pre2: Vec<f64> =
            d_out.iter().zip(&trace.pre2).map(|(&d, &z)| d * silu_prime(z)).collect();
        let mut d_act1 = vec![0.0; trace.act1.len()];
        self.conv2.backward(&trace.act1, len, &d_pre2, &mut d_act1, g.conv2_w, g.conv2_b);
        let d_pre1: Vec<f64> =
            d_act1.iter().zip(&trace.pre1).map(|(&d, &z)| d * silu_prime(z)).collect();
        // The projection is broadcast over positions; its gradient is the
        // per-channel sum.
        let mut d_proj = vec![0.0; self.conv1.c_out];
        for c in 0..self.conv1.c_out {
            d_proj[c] = d_pre1[c * len..(c + 1) * len].iter().sum();
        }
        self.temb.backward(emb, &d_proj, d_emb, g.temb_w, g.temb_b);
        let mut d_in = vec![0.0; trace.input.len()];
        self.conv1.backward(&trace.input, len, &d_pre1, &mut d_in, g.conv1_w, g.conv1_b);
        d_in
    }
}

struct BlockGrads<'a> {
    conv1_w: &'a mut [f64],
    conv1_b: &'a mut [f64],
    temb_w: &'a mut [f64],
    temb_b: &'a mut [f64],
    conv2_w: &'a mut [f64],
    conv2_b: &'a mut [f64],
}

/// All learnable tensors of the denoiser.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    cfg: NetConfig,
    temb_fc1: Dense,
    temb_fc2: Dense,
    enc0: Block,
    down0: Conv,
    enc1: Block,
    down1: Conv,
    mid: Block,
    up1: Conv,
    dec1: Block,
    up0: Conv,
    dec0: Block,
    out: Conv,
}

/// Flat gradient storage aligned with [`DenoiserParams::tensors`] order.
pub struct GradBuffer {
    pub slots: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(params: &DenoiserParams) -> Self {
        GradBuffer { slots: params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect() }
    }

    pub fn add_assign(&mut self, other: &GradBuffer) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

impl DenoiserParams {
    /// Fresh parameters: He-normal weights drawn from counter-based streams
    /// keyed by tensor index, zero biases, and a zero-initialized output
    /// head so an untrained net predicts exactly zero noise.
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let [w0, w1, w2] = cfg.widths;
        let k = cfg.kernel;
        let e = cfg.temb;
        let mut net = DenoiserParams {
            cfg,
            temb_fc1: Dense::new("temb_fc1", e, e),
            temb_fc2: Dense::new("temb_fc2", e, e),
            enc0: Block::new("enc0", cfg.m, w0, e, k),
            down0: Conv::new("down0", w0, w1, k, 2),
            enc1: Block::new("enc1", w1, w1, e, k),
            down1: Conv::new("down1", w1, w2, k, 2),
            mid: Block::new("mid", w2, w2, e, k),
            up1: Conv::new("up1", w2, w1, k, 1),
            dec1: Block::new("dec1", 2 * w1, w1, e, k),
            up0: Conv::new("up0", w1, w0, k, 1),
            dec0: Block::new("dec0", 2 * w0, w0, e, k),
            out: Conv::new("out", w0, cfg.m, k, 1),
        };
        for (index, tensor) in net.tensors_mut().into_iter().enumerate() {
            if tensor.name == "out.w" || tensor.name.ends_with(".b") {
                continue; // zero head, zero biases
            }
            let fan_in: usize = tensor.shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            let mut rng = stream(seed, "init", index as u64, 0);
            for v in tensor.data.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = quantize(z * std);
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Tensors in canonical (checkpoint) order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(44);
        let blocks: [&Block; 5] = [&self.enc0, &self.enc1, &self.mid, &self.dec1, &self.dec0];
        out.push(&self.temb_fc1.w);
        out.push(&self.temb_fc1.b);
        out.push(&self.temb_fc2.w);
        out.push(&self.temb_fc2.b);
        let [enc0, enc1, mid, dec1, dec0] = blocks;
        for (block, downup) in [
            (enc0, Some(&self.down0)),
            (enc1, Some(&self.down1)),
            (mid, None),
            (dec1, Some(&self.up1)),
            (dec0, Some(&self.up0)),
        ] {
            out.push(&block.conv1.w);
            out.push(&block.conv1.b);
            out.push(&block.temb.w);
            out.push(&block.temb.b);
            out.push(&block.conv2.w);
            out.push(&block.conv2.b);
            if let Some(c) = downup {
                out.push(&c.w);
                out.push(&c.b);
            }
        }
        out.push(&self.out.w);
        out.push(&self.out.b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(44);
        out.push(&mut self.temb_fc1.w);
        out.push(&mut self.temb_fc1.b);
        out.push(&mut self.temb_fc2.w);
        out.push(&mut self.temb_fc2.b);
        for (block, downup) in [
            (&mut self.enc0, Some(&mut self.down0)),
            (&mut self.enc1, Some(&mut self.down1)),
            (&mut self.mid, None),
            (&mut self.dec1, Some(&mut self.up1)),
            (&mut self.dec0, Some(&mut self.up0)),
        ] {
            out.push(&mut block.conv1.w);
            out.push(&mut block.conv1.b);
            out.push(&mut block.temb.w);
            out.push(&mut block.temb.b);
            out.push(&mut block.conv2.w);
            out.push(&mut block.conv2.b);
            if let Some(c) = downup {
                out.push(&mut c.w);
                out.push(&mut c.b);
            }
        }
        out.push(&mut self.out.w);
        out.push(&mut self.out.b);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn sinusoid(&self, t: usize) -> Vec<f64> {
        let half = self.cfg.temb / 2;
        let mut e = vec![0.0; self.cfg.temb];
        for i in 0..half {
            let freq = (10_000.0f64).powf(-(i as f64) / (half as f64 - 1.0));
            let arg = t as f64 * freq;
            e[i] = arg.sin();
            e[half + i] = arg.cos();
        }
        e
    }

    /// Predict the noise for trajectory `x` at diffusion step `t`.
    /// Fails with the offending layer name if any activation goes
    /// non-finite.
    pub fn predict(&self, x: &Trajectory, t: usize) -> Result<DMatrix<f64>> {
        assert_eq!(x.horizon(), self.cfg.h, "horizon mismatch");
        assert_eq!(x.dim(), self.cfg.m, "joint dimension mismatch");
        let input = traj_to_channels(x);
        let trace = self.forward(&input, t)?;
        let mut out = DMatrix::zeros(self.cfg.h, self.cfg.m);
        for c in 0..self.cfg.m {
            for l in 0..self.cfg.h {
                out[(l, c)] = trace.out[c * self.cfg.h + l];
            }
        }
        Ok(out)
    }

    fn forward(&self, input: &[f64], t: usize) -> Result<Trace> {
        let h = self.cfg.h;
        let h2 = self.down0.out_len(h);
        let h4 = self.down1.out_len(h2);

        let e0 = self.sinusoid(t);
        let z1 = self.temb_fc1.forward(&e0);
        let a1: Vec<f64> = z1.iter().map(|&z| silu(z)).collect();
        let emb = self.temb_fc2.forward(&a1);
        check_finite(&emb, "temb_fc2")?;

        let enc0 = self.enc0.forward(input.to_vec(), h, &emb);
        check_finite(&enc0.out, "enc0")?;
        let d0_pre = self.down0.forward(&enc0.out, h);
        let d0: Vec<f64> = d0_pre.iter().map(|&z| silu(z)).collect();

        let enc1 = self.enc1.forward(d0.clone(), h2, &emb);
        check_finite(&enc1.out, "enc1")?;
        let d1_pre = self.down1.forward(&enc1.out, h2);
        let d1: Vec<f64> = d1_pre.iter().map(|&z| silu(z)).collect();

        let mid = self.mid.forward(d1.clone(), h4, &emb);
        check_finite(&mid.out, "mid")?;

        let up1_in = upsample2(&mid.out, self.cfg.widths[2], h4);
        let up1_pre = self.up1.forward(&up1_in, 2 * h4);
        let up1_act: Vec<f64> = up1_pre.iter().map(|&z| silu(z)).collect();
        let up1_crop = crop(&up1_act, self.cfg.widths[1], 2 * h4, h2);
        let cat1 = concat(&up1_crop, &enc1.out, h2);
        let dec1 = self.dec1.forward(cat1, h2, &emb);
        check_finite(&dec1.out, "dec1")?;

        let up0_in = upsample2(&dec1.out, self.cfg.widths[1], h2);
        let up0_pre = self.up0.forward(&up0_in, 2 * h2);
        let up0_act: Vec<f64> = up0_pre.iter().map(|&z| silu(z)).collect();
        let up0_crop = crop(&up0_act, self.cfg.widths[0], 2 * h2, h);
        let cat0 = concat(&up0_crop, &enc0.out, h);
        let dec0 = self.dec0.forward(cat0, h, &emb);
        check_finite(&dec0.out, "dec0")?;

        let out = self.out.forward(&dec0.out, h);
        check_finite(&out, "out")?;

        Ok(Trace {
            e0,
            z1,
            a1,
            emb,
            enc0,
            d0_pre,
            enc1,
            d1_pre,
            mid,
            up1_in,
            up1_pre,
            dec1,
            up0_in,
            up0_pre,
            dec0,
            out,
            lens: [h, h2, h4],
        })
    }

    /// Backward pass for one sample; accumulates parameter gradients.
    /// `d_out` is the loss gradient w.r.t. the network output, `[m][h]`.
    fn backward(&self, trace: &Trace, d_out: &[f64], grads: &mut GradBuffer) {
        let [h, h2, h4] = trace.lens;
        let [w0, w1, w2] = self.cfg.widths;
        let mut d_emb = vec![0.0; self.cfg.temb];

        // Index map must mirror tensors() order.
        // 0..4: temb_fc1.w/b, temb_fc2.w/b
        // 4..12: enc0 block (6) + down0 (2)
        // 12..20: enc1 block + down1
        // 20..26: mid block
        // 26..34: dec1 block + up1
        // 34..42: dec0 block + up0
        // 42..44: out.w/b
        let s = &mut grads.slots;

        let mut d_dec0_out = vec![0.0; w0 * h];
        {
            let (gw, gb) = two(s, 42, 43);
            self.out.backward(&trace.dec0.out, h, d_out, &mut d_dec0_out, gw, gb);
        }

        let d_cat0 = {
            let (a, b, c, d, e, f) = six(s, 34);
            self.dec0.backward(
                &trace.dec0,
                h,
                &trace.emb,
                &d_dec0_out,
                &mut d_emb,
                &mut BlockGrads { conv1_w: a, conv1_b: b, temb_w: c, temb_b: d, conv2_w: e, conv2_b: f },
            )
        };
        let (d_up0_crop, mut d_enc0_out) = split(&d_cat0, w0, h);
        let d_up0_act = uncrop(&d_up0_crop, w0, 2 * h2, h);
        let d_up0_pre: Vec<f64> =
            d_up0_act.iter().zip(&trace.up0_pre).map(|(&d, &z)| d * silu_prime(z)).collect();
        let mut d_up0_in = vec![0.0; w1 * 2 * h2];
        {
            let (gw, gb) = two(s, 40, 41);
            self.up0.backward(&trace.up0_in, 2 * h2, &d_up0_pre, &mut d_up0_in, gw, gb);
        }
        let d_dec1_out = downsample2_grad(&d_up0_in, w1, h2);

        let d_cat1 = {
            let (a, b, c, d, e, f) = six(s, 26);
            self.dec1.backward(
                &trace.dec1,
                h2,
                &trace.emb,
                &d_dec1_out,
                &mut d_emb,
                &mut BlockGrads { conv1_w: a, conv1_b: b, temb_w: c, temb_b: d, conv2_w: e, conv2_b: f },
            )
        };
        let (d_up1_crop, mut d_enc1_out) = split(&d_cat1, w1, h2);
        let d_up1_act = uncrop(&d_up1_crop, w1, 2 * h4, h2);
        let d_up1_pre: Vec<f64> =
            d_up1_act.iter().zip(&trace.up1_pre).map(|(&d, &z)| d * silu_prime(z)).collect();
        let mut d_up1_in = vec![0.0; w2 * 2 * h4];
        {
            let (gw, gb) = two(s, 32, 33);
            self.up1.backward(&trace.up1_in, 2 * h4, &d_up1_pre, &mut d_up1_in, gw, gb);
        }
        let d_mid_out = downsample2_grad(&d_up1_in, w2, h4);

        let d_d1 = {
            let (a, b, c, d, e, f) = six(s, 20);
            self.mid.backward(
                &trace.mid,
                h4,
                &trace.emb,
                &d_mid_out,
                &mut d_emb,
                &mut BlockGrads { conv1_w: a, conv1_b: b, temb_w: c, temb_b: d, conv2_w: e, conv2_b: f },
            )
        };
        let d_d1_pre: Vec<f64> =
            d_d1.iter().zip(&trace.d1_pre).map(|(&d, &z)| d * silu_prime(z)).collect();
        {
            let (gw, gb) = two(s, 18, 19);
            let mut extra = vec![0.0; w1 * h2];
            self.down1.backward(&trace.enc1.out, h2, &d_d1_pre, &mut extra, gw, gb);
            for (a, b) in d_enc1_out.iter_mut().zip(&extra) {
                *a += b;
            }
        }

        let d_d0 = {
            let (a, b, c, d, e, f) = six(s, 12);
            self.enc1.backward(
                &trace.enc1,
                h2,
                &trace.emb,
                &d_enc1_out,
                &mut d_emb,
                &mut BlockGrads { conv1_w: a, conv1_b: b, temb_w: c, temb_b: d, conv2_w: e, conv2_b: f },
            )
        };
        let d_d0_pre: Vec<f64> =
            d_d0.iter().zip(&trace.d0_pre).map(|(&d, &z)| d * silu_prime(z)).collect();
        {
            let (gw, gb) = two(s, 10, 11);
            let mut extra = vec![0.0; w0 * h];
            self.down0.backward(&trace.enc0.out, h, &d_d0_pre, &mut extra, gw, gb);
            for (a, b) in d_enc0_out.iter_mut().zip(&extra) {
                *a += b;
            }
        }

        {
            let (a, b, c, d, e, f) = six(s, 4);
            self.enc0.backward(
                &trace.enc0,
                h,
                &trace.emb,
                &d_enc0_out,
                &mut d_emb,
                &mut BlockGrads { conv1_w: a, conv1_b: b, temb_w: c, temb_b: d, conv2_w: e, conv2_b: f },
            );
        }

        // Shared embedding MLP.
        let mut d_a1 = vec![0.0; self.cfg.temb];
        {
            let (gw, gb) = two(s, 2, 3);
            self.temb_fc2.backward(&trace.a1, &d_emb, &mut d_a1, gw, gb);
        }
        let d_z1: Vec<f64> =
            d_a1.iter().zip(&trace.z1).map(|(&d, &z)| d * silu_prime(z)).collect();
        {
            let (gw, gb) = two(s, 0, 1);
            let mut sink = vec![0.0; self.cfg.temb];
            self.temb_fc1.backward(&trace.e0, &d_z1, &mut sink, gw, gb);
        }
    }

    /// Masked L2 loss and parameter gradients for a batch. Each sample is
    /// `(x_t, t, eps_target)` in channel-major layout; when `mask_endpoints`
    /// holds, waypoints 0 and h-1 carry no target and are excluded.
    ///
    /// Samples are processed in fixed chunks reduced in index order, so the
    /// result is bit-identical for any worker count.
    pub fn loss_and_grads(
        &self,
        batch: &[(Vec<f64>, usize, Vec<f64>)],
        mask_endpoints: bool,
    ) -> Result<(f64, GradBuffer)> {
        use rayon::prelude::*;
        const CHUNK: usize = 16;
        let h = self.cfg.h;
        let m = self.cfg.m;
        let rows = if mask_endpoints { h - 2 } else { h };
        let denom = (batch.len() * rows * m) as f64;

        let partials: Vec<Result<(f64, GradBuffer)>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = GradBuffer::zeros_like(self);
                let mut loss = 0.0;
                for (x, t, target) in chunk {
                    let trace = self.forward(x, *t)?;
                    let mut d_out = vec![0.0; m * h];
                    for c in 0..m {
                        for l in 0..h {
                            if mask_endpoints && (l == 0 || l == h - 1) {
                                continue;
                            }
                            let diff = trace.out[c * h + l] - target[c * h + l];
                            loss += diff * diff / denom;
                            d_out[c * h + l] = 2.0 * diff / denom;
                        }
                    }
                    self.backward(&trace, &d_out, &mut grads);
                }
                Ok((loss, grads))
            })
            .collect();

        let mut total = GradBuffer::zeros_like(self);
        let mut loss = 0.0;
        for part in partials {
            let (l, g) = part?;
            loss += l;
            total.add_assign(&g);
        }
        Ok((loss, total))
    }
}

fn check_finite(data: &[f64], layer: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer })
    }
}

struct Trace {
    e0: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    emb: Vec<f64>,
    enc0: BlockTrace,
    d0_pre: Vec<f64>,
    enc1: BlockTrace,
    d1_pre: Vec<f64>,
    mid: BlockTrace,
    up1_in: Vec<f64>,
    up1_pre: Vec<f64>,
    dec1: BlockTrace,
    up0_in: Vec<f64>,
    up0_pre: Vec<f64>,
    dec0: BlockTrace,
    out: Vec<f64>,
    lens: [usize; 3],
}

pub(crate) fn traj_to_channels(x: &Trajectory) -> Vec<f64> {
    let h = x.horizon();
    let m = x.dim();
    let mut out = vec![0.0; m * h];
    for c in 0..m {
        for l in 0..h {
            out[c * h + l] = x.states()[(l, c)];
        }
    }
    out
}

fn upsample2(x: &[f64], c: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * 2 * l];
    for ch in 0..c {
        for i in 0..l {
            let v = x[ch * l + i];
            out[ch * 2 * l + 2 * i] = v;
            out[ch * 2 * l + 2 * i + 1] = v;
        }
    }
    out
}

fn downsample2_grad(d: &[f64], c: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * l];
    for ch in 0..c {
        for i in 0..l {
            out[ch * l + i] = d[ch * 2 * l + 2 * i] + d[ch * 2 * l + 2 * i + 1];
        }
    }
    out
}

fn crop(x: &[f64], c: usize, l_in: usize, l_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * l_out];
    for ch in 0..c {
        out[ch * l_out..(ch + 1) * l_out].copy_from_slice(&x[ch * l_in..ch * l_in + l_out]);
    }
    out
}

fn uncrop(d: &[f64], c: usize, l_out: usize, l_in: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * l_out];
    for ch in 0..c {
        out[ch * l_out..ch * l_out + l_in].copy_from_slice(&d[ch * l_in..(ch + 1) * l_in]);
    }
    out
}

fn concat(a: &[f64], b: &[f64], _len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

fn split(d: &[f64], c_first: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
    let cut = c_first * len;
    (d[..cut].to_vec(), d[cut..].to_vec())
}

fn two<'a>(s: &'a mut [Vec<f64>], i: usize, j: usize) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(j, i + 1);
    let (a, b) = s[i..=j].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

#[allow(clippy::type_complexity)]
fn six<'a>(
    s: &'a mut [Vec<f64>],
    i: usize,
) -> (&'a mut [f64], &'a mut [f64], &'a mut [f64], &'a mut [f64], &'a mut [f64], &'a mut [f64]) {
    let (a, rest) = s[i..i + 6].split_at_mut(1);
    let (b, rest) = rest.split_at_mut(1);
    let (c, rest) = rest.split_at_mut(1);
    let (d, rest) = rest.split_at_mut(1);
    let (e, f) = rest.split_at_mut(1);
    (&mut a[0], &mut b[0], &mut c[0], &mut d[0], &mut e[0], &mut f[0])
}
