//! Forward and reverse passes of the suppression network.
//!
//! Layout conventions: complex feature maps are `[2C, T, F]` real planes
//! (real parts first); the LSTM runs over `[T, W]` rows; the mask and the
//! spectrogram are frame-major `[T, F]` complex grids.

use super::config::SuppressorConfig;
use super::model::{dec, enc, lstm, MaskOverride, SuppressorModel, FILM_BB, FILM_BG, FILM_WB, FILM_WG, PROJ_B, PROJ_W};
use crate::audio::{ComplexSpectrogram, StftPlan};
use crate::error::{Error, Result};
use crate::nn::{
    complex_conv2d, complex_conv2d_backward, film_rows, film_rows_backward, layer_norm_backward, layer_norm_forward,
    linear_backward, linear_forward, lstm_backward, lstm_forward, prelu_backward, prelu_forward, ConvScratch,
    Grads, LayerNormCache, LstmCache, LstmDims, LstmState,
};
use crate::scalar::{matvec, Scalar};
use num_complex::Complex;

struct StageNames {
    re: String,
    im: String,
    ln_g: String,
    ln_b: String,
    prelu: String,
}

impl StageNames {
    fn new(f: impl Fn(&str) -> String) -> Self {
        StageNames { re: f("re"), im: f("im"), ln_g: f("ln_g"), ln_b: f("ln_b"), prelu: f("prelu") }
    }
}

struct LstmNames {
    wx: String,
    wh: String,
    b: String,
}

#[derive(Default)]
struct Stage<T: Scalar> {
    /// conv input (decoder stages only; encoder stages read the previous output)
    input: Vec<T>,
    conv_out: Vec<T>,
    ln: LayerNormCache<T>,
    ln_out: Vec<T>,
    act: Vec<T>,
    /// gradient w.r.t. `act` (or `conv_out` for the final stage)
    grad: Vec<T>,
    f_out: usize,
}

/// Recurrent carry of every LSTM layer, kept between streaming windows.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCarry<T: Scalar> {
    pub layers: Vec<LstmState<T>>,
}

impl<T: Scalar> LstmCarry<T> {
    pub fn zeros(config: &SuppressorConfig) -> Self {
        LstmCarry { layers: (0..config.lstm_layers).map(|_| LstmState::zeros(config.lstm_width())).collect() }
    }

    pub fn reset(&mut self) {
        for s in &mut self.layers {
            s.h.iter_mut().for_each(|v| *v = T::zero());
            s.c.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Every buffer the network touches. Reusing one workspace across calls of
/// equal size performs no heap allocation after the first call.
pub struct Workspace<T: Scalar> {
    config: SuppressorConfig,
    enc_names: Vec<StageNames>,
    dec_names: Vec<StageNames>,
    lstm_names: Vec<LstmNames>,
    plan: StftPlan<T>,
    conv: ConvScratch<T>,
    /// analysed input spectrogram `X`
    pub spec: ComplexSpectrogram<T>,
    /// masked spectrogram `Y = X ⊙ M`
    pub masked: ComplexSpectrogram<T>,
    /// mask `M`, frame-major
    pub mask: Vec<Complex<T>>,
    /// time-domain output of the last [`run`](SuppressorModel::run)
    pub output: Vec<T>,
    input: Vec<T>,
    enc: Vec<Stage<T>>,
    dec: Vec<Stage<T>>,
    flat: Vec<T>,
    lstm_out: Vec<Vec<T>>,
    lstm_cache: Vec<LstmCache<T>>,
    lstm_state: Vec<LstmState<T>>,
    lstm_snap: Vec<LstmState<T>>,
    pub(crate) gamma: Vec<T>,
    pub(crate) beta: Vec<T>,
    film_out: Vec<T>,
    proj_out: Vec<T>,
    bottleneck: Vec<T>,
    // backward buffers
    grad_spec: Vec<Complex<T>>,
    grad_raw: Vec<T>,
    grad_bottleneck: Vec<T>,
    grad_proj: Vec<T>,
    grad_film: Vec<T>,
    grad_lstm: Vec<Vec<T>>,
    grad_flat: Vec<T>,
    grad_input: Vec<T>,
    tmp: Vec<T>,
    frames: usize,
}

impl<T: Scalar> Workspace<T> {
    pub fn new(config: &SuppressorConfig) -> Result<Self> {
        config.validate()?;
        let l = config.channels.len();
        let nl = config.lstm_layers;
        let hw = config.lstm_width();
        Ok(Workspace {
            config: config.clone(),
            enc_names: (0..l).map(|i| StageNames::new(|s| enc(i, s))).collect(),
            dec_names: (0..l).map(|i| StageNames::new(|s| dec(i, s))).collect(),
            lstm_names: (0..nl).map(|i| LstmNames { wx: lstm(i, "wx"), wh: lstm(i, "wh"), b: lstm(i, "b") }).collect(),
            plan: StftPlan::new(config.window_size, config.hop_size)?,
            conv: ConvScratch::default(),
            spec: ComplexSpectrogram::empty(config.window_size, config.hop_size, 16_000),
            masked: ComplexSpectrogram::empty(config.window_size, config.hop_size, 16_000),
            mask: Vec::new(),
            output: Vec::new(),
            input: Vec::new(),
            enc: (0..l).map(|_| Stage::default()).collect(),
            dec: (0..l).map(|_| Stage::default()).collect(),
            flat: Vec::new(),
            lstm_out: vec![Vec::new(); nl],
            lstm_cache: (0..nl).map(|_| LstmCache::default()).collect(),
            lstm_state: (0..nl).map(|_| LstmState::zeros(hw)).collect(),
            lstm_snap: (0..nl).map(|_| LstmState::zeros(hw)).collect(),
            gamma: Vec::new(),
            beta: Vec::new(),
            film_out: Vec::new(),
            proj_out: Vec::new(),
            bottleneck: Vec::new(),
            grad_spec: Vec::new(),
            grad_raw: Vec::new(),
            grad_bottleneck: Vec::new(),
            grad_proj: Vec::new(),
            grad_film: Vec::new(),
            grad_lstm: vec![Vec::new(); nl],
            grad_flat: Vec::new(),
            grad_input: Vec::new(),
            tmp: Vec::new(),
            frames: 0,
        })
    }

    pub fn config(&self) -> &SuppressorConfig {
        &self.config
    }

    /// Bottleneck activations `[2C, T, F]` of the last forward pass.
    pub fn bottleneck_features(&self) -> (&[T], usize, usize) {
        let last = self.enc.last().expect("at least one encoder stage");
        (&last.act, self.frames, last.f_out)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
}

fn flatten<T: Scalar>(map: &[T], planes: usize, t: usize, f: usize, rows: &mut Vec<T>) {
    rows.clear();
    rows.resize(map.len(), T::zero());
    let w = planes * f;
    for p in 0..planes {
        for ti in 0..t {
            rows[ti * w + p * f..ti * w + (p + 1) * f].copy_from_slice(&map[(p * t + ti) * f..(p * t + ti + 1) * f]);
        }
    }
}

fn unflatten_add<T: Scalar>(rows: &[T], planes: usize, t: usize, f: usize, map: &mut [T]) {
    let w = planes * f;
    for p in 0..planes {
        for ti in 0..t {
            for (m, r) in map[(p * t + ti) * f..(p * t + ti + 1) * f].iter_mut().zip(&rows[ti * w + p * f..ti * w + (p + 1) * f]) {
                *m += *r;
            }
        }
    }
}

/// `[a_re, b_re, a_im, b_im]` from two complex maps of equal `t × f`.
fn concat_complex<T: Scalar>(a: &[T], ca: usize, b: &[T], cb: usize, plane: usize, out: &mut Vec<T>) {
    out.clear();
    out.extend_from_slice(&a[..ca * plane]);
    out.extend_from_slice(&b[..cb * plane]);
    out.extend_from_slice(&a[ca * plane..]);
    out.extend_from_slice(&b[cb * plane..]);
}

fn split_complex_add<T: Scalar>(g: &[T], ca: usize, cb: usize, plane: usize, ga: &mut [T], gb: &mut [T]) {
    let (ra, rb) = (ca * plane, cb * plane);
    let add = |dst: &mut [T], src: &[T]| dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
    add(&mut ga[..ra], &g[..ra]);
    add(&mut gb[..rb], &g[ra..ra + rb]);
    add(&mut ga[ra..], &g[ra + rb..2 * ra + rb]);
    add(&mut gb[rb..], &g[2 * ra + rb..]);
}

/// `bound·tanh(r)/r` and `(d/dr of that)/r` at `r = |R|`.
fn mask_gain<T: Scalar>(r: T, bound: T) -> (T, T) {
    if r < T::lit(1e-2) {
        let r2 = r * r;
        let s = bound * (T::one() - r2 / T::lit(3.0) + T::lit(2.0 / 15.0) * r2 * r2);
        let ds = bound * (T::lit(-2.0 / 3.0) + T::lit(8.0 / 15.0) * r2);
        (s, ds)
    } else {
        let th = r.tanh();
        let sech2 = T::one() - th * th;
        (bound * th / r, bound * (r * sech2 - th) / (r * r * r))
    }
}

fn check_finite<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite activation in {what}")));
    }
    Ok(())
}

fn geom_pair<'a, T: Scalar>(model: &'a SuppressorModel<T>, names: &StageNames) -> (&'a [T], &'a [T]) {
    (model.params.data(&names.re), model.params.data(&names.im))
}

impl<T: Scalar> SuppressorModel<T> {
    /// Compressed input map and encoder stages for `ws.spec`. Returns the
    /// bottleneck frequency size.
    fn encode_stages(&self, ws: &mut Workspace<T>) -> Result<usize> {
        let cfg = &self.config;
        let t = ws.spec.n_frames;
        let f0 = ws.spec.n_bins;
        let spec = &ws.spec;
        // compressed input map [2, T, F]
        let p = T::lit(cfg.input_compression - 1.0);
        ws.input.clear();
        ws.input.resize(2 * t * f0, T::zero());
        let (re, im) = ws.input.split_at_mut(t * f0);
        for ((x, r), i) in spec.frames.iter().zip(re.iter_mut()).zip(im.iter_mut()) {
            let mag = x.norm();
            if mag > T::zero() {
                let s = mag.powf(p);
                *r = x.re * s;
                *i = x.im * s;
            }
        }
        let l = cfg.channels.len();
        let mut f_in = f0;
        for i in 0..l {
            let g = cfg.enc_geom(i);
            let names = &ws.enc_names[i];
            let (a, b) = geom_pair(self, names);
            let (before, rest) = ws.enc.split_at_mut(i);
            let st = &mut rest[0];
            let x = if i == 0 { &ws.input } else { &before[i - 1].act };
            let f_out = complex_conv2d(&g, x, t, f_in, a, b, &mut ws.conv, &mut st.conv_out)?;
            layer_norm_forward(&st.conv_out, 2 * g.c_out, self.params.data(&names.ln_g), self.params.data(&names.ln_b), &mut st.ln, &mut st.ln_out);
            prelu_forward(&st.ln_out, g.c_out, self.params.data(&names.prelu), &mut st.act);
            st.f_out = f_out;
            f_in = f_out;
        }
        Ok(f_in)
    }

    /// Runs STFT and the encoder only; the activations are then available
    /// through [`Workspace::bottleneck_features`].
    pub fn encode(&self, ws: &mut Workspace<T>, samples: &[T], sample_rate: u32) -> Result<()> {
        if ws.config != self.config {
            return Err(Error::Config("workspace built for a different configuration".into()));
        }
        ws.plan.stft_into(samples, sample_rate, &mut ws.spec)?;
        ws.frames = ws.spec.n_frames;
        if ws.frames == 0 {
            return Err(Error::TooShort("no frames to encode".into()));
        }
        self.encode_stages(ws)?;
        Ok(())
    }

    /// Computes the mask for `ws.spec` and stores it in `ws.mask`.
    ///
    /// With `carry`, each LSTM layer starts from the carried state and the
    /// carry is advanced to the state after `carry_steps` frames.
    pub fn forward_mask(&self, ws: &mut Workspace<T>, e_fused: &[T], carry: Option<(&mut LstmCarry<T>, usize)>) -> Result<()> {
        let cfg = &self.config;
        if ws.config != *cfg {
            return Err(Error::Config("workspace built for a different configuration".into()));
        }
        if e_fused.len() != cfg.embed_dim {
            return Err(Error::Shape(format!("conditioning vector has {} values, expected {}", e_fused.len(), cfg.embed_dim)));
        }
        check_finite(e_fused, "conditioning vector")?;
        let spec = &ws.spec;
        if spec.n_bins != cfg.n_bins() || spec.window_size != cfg.window_size || spec.hop_size != cfg.hop_size {
            return Err(Error::Shape(format!("spectrogram has {} bins, model expects {}", spec.n_bins, cfg.n_bins())));
        }
        let t = spec.n_frames;
        let f0 = spec.n_bins;
        ws.frames = t;
        ws.mask.clear();
        match self.mask_override {
            Some(MaskOverride::Ones) => {
                ws.mask.resize(t * f0, Complex::new(T::one(), T::zero()));
                return Ok(());
            }
            Some(MaskOverride::Zeros) => {
                ws.mask.resize(t * f0, Complex::new(T::zero(), T::zero()));
                return Ok(());
            }
            None => {}
        }
        if t == 0 {
            return Ok(());
        }
        let fb = self.encode_stages(ws)?;
        let l = cfg.channels.len();
        let cb = cfg.channels[l - 1];
        check_finite(&ws.enc[l - 1].act, "encoder")?;
        flatten(&ws.enc[l - 1].act, 2 * cb, t, fb, &mut ws.flat);
        let hw = cfg.lstm_width();
        let mut carry = carry;
        for layer in 0..cfg.lstm_layers {
            let dims = LstmDims { input: cfg.lstm_input(layer), hidden: hw };
            let names = &ws.lstm_names[layer];
            let state = &mut ws.lstm_state[layer];
            match carry.as_ref() {
                Some((c, _)) => {
                    state.h.copy_from_slice(&c.layers[layer].h);
                    state.c.copy_from_slice(&c.layers[layer].c);
                }
                None => {
                    state.h.iter_mut().for_each(|v| *v = T::zero());
                    state.c.iter_mut().for_each(|v| *v = T::zero());
                }
            }
            let (prev, rest) = ws.lstm_out.split_at_mut(layer);
            let x = if layer == 0 { &ws.flat } else { &prev[layer - 1] };
            let snap = carry.as_ref().map(|(_, k)| (*k, &mut ws.lstm_snap[layer]));
            lstm_forward(
                dims,
                x,
                t,
                self.params.data(&names.wx),
                self.params.data(&names.wh),
                self.params.data(&names.b),
                state,
                &mut ws.lstm_cache[layer],
                &mut rest[0],
                snap,
            )?;
        }
        if let Some((c, k)) = carry.as_mut() {
            for layer in 0..cfg.lstm_layers {
                let src = if *k >= t { &ws.lstm_state[layer] } else { &ws.lstm_snap[layer] };
                c.layers[layer].h.copy_from_slice(&src.h);
                c.layers[layer].c.copy_from_slice(&src.c);
            }
        }
        let e = cfg.embed_dim;
        ws.gamma.clear();
        ws.gamma.resize(hw, T::zero());
        ws.beta.clear();
        ws.beta.resize(hw, T::zero());
        matvec(self.params.data(FILM_WG), hw, e, e_fused, &mut ws.gamma);
        matvec(self.params.data(FILM_WB), hw, e, e_fused, &mut ws.beta);
        for (g, b) in ws.gamma.iter_mut().zip(self.params.data(FILM_BG)) {
            *g += *b;
        }
        for (g, b) in ws.beta.iter_mut().zip(self.params.data(FILM_BB)) {
            *g += *b;
        }
        film_rows(&ws.lstm_out[cfg.lstm_layers - 1], hw, &ws.gamma, &ws.beta, &mut ws.film_out);
        let bw = cfg.bottleneck_width();
        linear_forward(&ws.film_out, t, hw, self.params.data(PROJ_W), Some(self.params.data(PROJ_B)), bw, &mut ws.proj_out);
        ws.bottleneck.clear();
        ws.bottleneck.resize(bw * t, T::zero());
        unflatten_add(&ws.proj_out, 2 * cb, t, fb, &mut ws.bottleneck);
        check_finite(&ws.bottleneck, "bottleneck")?;
        let mut f_in = fb;
        for i in 0..l {
            let g = cfg.dec_geom(i);
            let level = l - 1 - i;
            let names = &ws.dec_names[i];
            let (a, b) = geom_pair(self, names);
            let plane = t * f_in;
            let half = g.c_in / 2;
            let (before, rest) = ws.dec.split_at_mut(i);
            let st = &mut rest[0];
            let prev = if i == 0 { &ws.bottleneck } else { &before[i - 1].act };
            concat_complex(prev, half, &ws.enc[level].act, half, plane, &mut st.input);
            let f_out = complex_conv2d(&g, &st.input, t, f_in, a, b, &mut ws.conv, &mut st.conv_out)?;
            if i + 1 < l {
                layer_norm_forward(&st.conv_out, 2 * g.c_out, self.params.data(&names.ln_g), self.params.data(&names.ln_b), &mut st.ln, &mut st.ln_out);
                prelu_forward(&st.ln_out, g.c_out, self.params.data(&names.prelu), &mut st.act);
            }
            st.f_out = f_out;
            f_in = f_out;
        }
        let raw = &ws.dec[l - 1].conv_out;
        check_finite(raw, "decoder")?;
        let bound = T::lit(cfg.mask_bound);
        let (rr, ri) = raw.split_at(t * f0);
        ws.mask.extend(rr.iter().zip(ri).map(|(&a, &b)| {
            let r = (a * a + b * b).sqrt();
            let (s, _) = mask_gain(r, bound);
            Complex::new(a * s, b * s)
        }));
        Ok(())
    }

    /// Full waveform path: STFT, mask, masked iSTFT into `ws.output`.
    pub fn run(&self, ws: &mut Workspace<T>, samples: &[T], sample_rate: u32, e_fused: &[T], carry: Option<(&mut LstmCarry<T>, usize)>) -> Result<()> {
        ws.plan.stft_into(samples, sample_rate, &mut ws.spec)?;
        self.forward_mask(ws, e_fused, carry)?;
        apply_mask_into(&ws.spec, &ws.mask, &mut ws.masked)?;
        ws.plan.istft_into(&ws.masked, &mut ws.output)
    }

    /// Reverse pass from `grad_output` (dL/d`ws.output`). Accumulates into
    /// `grads` and returns dL/d(conditioning vector) into `grad_e`.
    pub fn backward(&self, ws: &mut Workspace<T>, e_fused: &[T], grad_output: &[T], grads: &mut Grads<T>, grad_e: &mut Vec<T>) -> Result<()> {
        let cfg = &self.config;
        grad_e.clear();
        grad_e.resize(cfg.embed_dim, T::zero());
        if self.mask_override.is_some() || ws.frames == 0 {
            return Ok(());
        }
        let t = ws.frames;
        let f0 = cfg.n_bins();
        ws.plan.istft_backward(&ws.masked, grad_output, &mut ws.grad_spec)?;
        // dL/dM = conj(X)·dL/dY, then through the bounded-magnitude map
        let bound = T::lit(cfg.mask_bound);
        let l = cfg.channels.len();
        {
            let raw = &ws.dec[l - 1].conv_out;
            ws.grad_raw.clear();
            ws.grad_raw.resize(2 * t * f0, T::zero());
            let (gr, gi) = ws.grad_raw.split_at_mut(t * f0);
            for k in 0..t * f0 {
                let gm = ws.spec.frames[k].conj() * ws.grad_spec[k];
                let (a, b) = (raw[k], raw[t * f0 + k]);
                let r = (a * a + b * b).sqrt();
                let (s, ds) = mask_gain(r, bound);
                let dot = a * gm.re + b * gm.im;
                gr[k] = s * gm.re + ds * dot * a;
                gi[k] = s * gm.im + ds * dot * b;
            }
        }
        let fb = ws.enc[l - 1].f_out;
        let cb = cfg.channels[l - 1];
        for st in ws.enc.iter_mut() {
            st.grad.clear();
            st.grad.resize(st.act.len(), T::zero());
        }
        for st in ws.dec.iter_mut() {
            st.grad.clear();
            st.grad.resize(st.act.len(), T::zero());
        }
        ws.grad_bottleneck.clear();
        ws.grad_bottleneck.resize(ws.bottleneck.len(), T::zero());
        for i in (0..l).rev() {
            let g = cfg.dec_geom(i);
            let level = l - 1 - i;
            let names = &ws.dec_names[i];
            let (a, b) = geom_pair(self, names);
            let f_in = if i == 0 { fb } else { ws.dec[i - 1].f_out };
            let (before, rest) = ws.dec.split_at_mut(i);
            let st = &mut rest[0];
            // gradient at the conv output
            let grad_conv: &[T] = if i + 1 < l {
                let mut g_ln = std::mem::take(&mut ws.tmp);
                g_ln.clear();
                g_ln.resize(st.ln_out.len(), T::zero());
                let mut g_slope = grads.take(&names.prelu);
                prelu_backward(&st.ln_out, g.c_out, self.params.data(&names.prelu), &st.grad, &mut g_ln, &mut g_slope);
                grads.put(&names.prelu, g_slope);
                let mut g_conv = std::mem::take(&mut st.grad);
                g_conv.clear();
                g_conv.resize(st.conv_out.len(), T::zero());
                let (mut gg, mut gb) = (grads.take(&names.ln_g), grads.take(&names.ln_b));
                let mut scratch = Vec::new();
                layer_norm_backward(&st.conv_out, 2 * g.c_out, self.params.data(&names.ln_g), &st.ln, &g_ln, &mut g_conv, &mut gg, &mut gb, &mut scratch);
                grads.put(&names.ln_g, gg);
                grads.put(&names.ln_b, gb);
                ws.tmp = g_ln;
                st.grad = g_conv;
                &st.grad
            } else {
                &ws.grad_raw
            };
            let mut g_in = std::mem::take(&mut ws.grad_input);
            g_in.clear();
            g_in.resize(st.input.len(), T::zero());
            let (mut ga, mut gb) = (grads.take(&names.re), grads.take(&names.im));
            complex_conv2d_backward(&g, &st.input, t, f_in, a, b, grad_conv, &mut ws.conv, Some(&mut g_in), &mut ga, &mut gb)?;
            grads.put(&names.re, ga);
            grads.put(&names.im, gb);
            let half = g.c_in / 2;
            let plane = t * f_in;
            let prev_grad = if i == 0 { &mut ws.grad_bottleneck } else { &mut before[i - 1].grad };
            split_complex_add(&g_in, half, half, plane, prev_grad, &mut ws.enc[level].grad);
            ws.grad_input = g_in;
        }
        let bw = cfg.bottleneck_width();
        let hw = cfg.lstm_width();
        flatten(&ws.grad_bottleneck, 2 * cb, t, fb, &mut ws.grad_proj);
        ws.grad_film.clear();
        ws.grad_film.resize(t * hw, T::zero());
        {
            let (mut gw, mut gb) = (grads.take(PROJ_W), grads.take(PROJ_B));
            linear_backward(&ws.film_out, t, hw, self.params.data(PROJ_W), bw, &ws.grad_proj, &mut gw, Some(&mut gb), Some(&mut ws.grad_film));
            grads.put(PROJ_W, gw);
            grads.put(PROJ_B, gb);
        }
        let nl = cfg.lstm_layers;
        for gl in ws.grad_lstm.iter_mut() {
            gl.clear();
            gl.resize(t * hw, T::zero());
        }
        let mut g_gamma = vec![T::zero(); hw];
        let mut g_beta = vec![T::zero(); hw];
        film_rows_backward(&ws.lstm_out[nl - 1], hw, &ws.gamma, &ws.grad_film, &mut ws.grad_lstm[nl - 1], &mut g_gamma, &mut g_beta);
        let e = cfg.embed_dim;
        for (wname, bname, gv) in [(FILM_WG, FILM_BG, &g_gamma), (FILM_WB, FILM_BB, &g_beta)] {
            let (mut gw, mut gb) = (grads.take(wname), grads.take(bname));
            let w = self.params.data(wname);
            for r in 0..hw {
                gb[r] += gv[r];
                for c in 0..e {
                    gw[r * e + c] += gv[r] * e_fused[c];
                    grad_e[c] += gv[r] * w[r * e + c];
                }
            }
            grads.put(wname, gw);
            grads.put(bname, gb);
        }
        ws.grad_flat.clear();
        ws.grad_flat.resize(ws.flat.len(), T::zero());
        for layer in (0..nl).rev() {
            let dims = LstmDims { input: cfg.lstm_input(layer), hidden: hw };
            let names = &ws.lstm_names[layer];
            let (mut gx, mut gh, mut gbias) = (grads.take(&names.wx), grads.take(&names.wh), grads.take(&names.b));
            let (below, here) = ws.grad_lstm.split_at_mut(layer);
            let (x, grad_x) = if layer == 0 { (&ws.flat, &mut ws.grad_flat) } else { (&ws.lstm_out[layer - 1], &mut below[layer - 1]) };
            lstm_backward(
                dims,
                x,
                t,
                self.params.data(&names.wx),
                self.params.data(&names.wh),
                &ws.lstm_cache[layer],
                &here[0],
                Some(grad_x),
                &mut gx,
                &mut gh,
                &mut gbias,
            );
            grads.put(&names.wx, gx);
            grads.put(&names.wh, gh);
            grads.put(&names.b, gbias);
        }
        unflatten_add(&ws.grad_flat, 2 * cb, t, fb, &mut ws.enc[l - 1].grad);
        for i in (0..l).rev() {
            let g = cfg.enc_geom(i);
            let names = &ws.enc_names[i];
            let (a, b) = geom_pair(self, names);
            let f_in = if i == 0 { f0 } else { ws.enc[i - 1].f_out };
            let (before, rest) = ws.enc.split_at_mut(i);
            let st = &mut rest[0];
            let mut g_ln = vec![T::zero(); st.ln_out.len()];
            let mut g_slope = grads.take(&names.prelu);
            prelu_backward(&st.ln_out, g.c_out, self.params.data(&names.prelu), &st.grad, &mut g_ln, &mut g_slope);
            grads.put(&names.prelu, g_slope);
            let mut g_conv = vec![T::zero(); st.conv_out.len()];
            let (mut gg, mut gb) = (grads.take(&names.ln_g), grads.take(&names.ln_b));
            layer_norm_backward(&st.conv_out, 2 * g.c_out, self.params.data(&names.ln_g), &st.ln, &g_ln, &mut g_conv, &mut gg, &mut gb, &mut ws.tmp);
            grads.put(&names.ln_g, gg);
            grads.put(&names.ln_b, gb);
            let (mut ga, mut gbw) = (grads.take(&names.re), grads.take(&names.im));
            let x = if i == 0 { &ws.input } else { &before[i - 1].act };
            let grad_x = if i == 0 { None } else { Some(before[i - 1].grad.as_mut_slice()) };
            complex_conv2d_backward(&g, x, t, f_in, a, b, &g_conv, &mut ws.conv, grad_x, &mut ga, &mut gbw)?;
            grads.put(&names.re, ga);
            grads.put(&names.im, gbw);
        }
        Ok(())
    }

    /// Mask for `spec` under conditioning `e_fused`.
    pub fn predict_mask(&self, spec: &ComplexSpectrogram<T>, e_fused: &[T]) -> Result<Vec<Complex<T>>> {
        let mut ws = Workspace::new(&self.config)?;
        ws.spec.clone_from(spec);
        self.forward_mask(&mut ws, e_fused, None)?;
        Ok(ws.mask)
    }
}

/// `Y = X ⊙ M` into a reused spectrogram.
pub fn apply_mask_into<T: Scalar>(spec: &ComplexSpectrogram<T>, mask: &[Complex<T>], out: &mut ComplexSpectrogram<T>) -> Result<()> {
    if mask.len() != spec.frames.len() {
        return Err(Error::Shape(format!("mask has {} cells, spectrogram {}", mask.len(), spec.frames.len())));
    }
    out.n_frames = spec.n_frames;
    out.n_bins = spec.n_bins;
    out.window_size = spec.window_size;
    out.hop_size = spec.hop_size;
    out.sample_rate = spec.sample_rate;
    out.signal_len = spec.signal_len;
    out.frames.clear();
    out.frames.extend(spec.frames.iter().zip(mask).map(|(x, m)| *x * *m));
    Ok(())
}
