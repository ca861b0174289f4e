//! Live hop-driven suppression: boundary resampling, a sliding model-rate
//! window, dry/wet blending on time-aligned signals and a capped output
//! buffer.
//!
//! Device sample `j` of the output is the blend of input sample `j` with the
//! wet-path sample at the same time, so the output stream is a delayed copy
//! of the input timeline.

mod io;

pub use io::{pump, SampleSink, SampleSource, VecSink, WaveSource};

use crate::audio::{resample, StreamResampler, Waveform, MODEL_RATE};
use crate::embeddings::{EmbeddingStore, SharedStore};
use crate::error::{Error, Result};
use crate::fusion::{fuse_embeddings, FusionWeights};
use crate::scalar::with_inline_gemm;
use crate::suppressor::{LstmCarry, SuppressorModel, Workspace};
use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};
use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Instant;

/// Most simultaneously active targets.
pub const MAX_TARGETS: usize = 3;
pub const WINDOW_SECS: f64 = 0.25;
pub const HOP_SECS: f64 = 0.025;
pub const BUFFER_CAP_SECS: f64 = 0.05;
/// Pending control messages before senders see an error.
pub const CONTROL_QUEUE: usize = 64;
/// Hop timings kept for percentile reporting.
pub const TIMING_RING: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub device_rate: u32,
    pub window_secs: f64,
    pub hop_secs: f64,
    pub buffer_cap_secs: f64,
    pub alpha: f64,
    pub active_targets: Vec<String>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig { device_rate: 48_000, window_secs: WINDOW_SECS, hop_secs: HOP_SECS, buffer_cap_secs: BUFFER_CAP_SECS, alpha: 1.0, active_targets: Vec::new() }
    }
}

fn secs_to(rate: u32, secs: f64) -> usize {
    (secs * rate as f64).round() as usize
}

impl StreamConfig {
    pub fn with_rate(device_rate: u32) -> Self {
        StreamConfig { device_rate, ..Self::default() }
    }

    /// Window length at the model rate.
    pub fn window_samples(&self) -> usize {
        secs_to(MODEL_RATE, self.window_secs)
    }

    /// Hop length at the model rate.
    pub fn hop_samples(&self) -> usize {
        secs_to(MODEL_RATE, self.hop_secs)
    }

    /// Nominal hop length at the device rate.
    pub fn hop_device_samples(&self) -> usize {
        secs_to(self.device_rate, self.hop_secs)
    }

    pub fn buffer_cap_samples(&self) -> usize {
        secs_to(self.device_rate, self.buffer_cap_secs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.device_rate == 0 {
            return Err(Error::InvalidRate(0));
        }
        let (w, h) = (self.window_samples(), self.hop_samples());
        if h == 0 || w < h {
            return Err(Error::Config(format!("window {w} and hop {h} samples: need 0 < hop <= window")));
        }
        if self.buffer_cap_samples() == 0 {
            return Err(Error::Config("output buffer cap must be positive".into()));
        }
        check_alpha(self.alpha)?;
        if self.active_targets.len() > MAX_TARGETS {
            return Err(Error::TargetCap { got: self.active_targets.len(), max: MAX_TARGETS });
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Range(format!("strength {alpha} outside [0, 1]")))
    }
}

enum Control {
    Targets(Option<Vec<f32>>),
    Strength(f32),
}

struct ControlState {
    targets: Vec<String>,
    alpha: f64,
}

/// Thread-safe handle for changing targets and strength. Changes are
/// validated immediately and take effect at the next hop boundary.
#[derive(Clone)]
pub struct StreamControl {
    tx: Sender<Control>,
    store: Arc<SharedStore>,
    fusion: Arc<FusionWeights<f32>>,
    state: Arc<Mutex<ControlState>>,
}

impl StreamControl {
    fn send(&self, msg: Control) -> Result<()> {
        self.tx.try_send(msg).map_err(|e| match e {
            TrySendError::Full(_) => Error::State("control queue full".into()),
            TrySendError::Disconnected(_) => Error::SessionClosed,
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ControlState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Replaces the active target set; an empty set selects passthrough.
    /// Duplicate ids count once. On error nothing changes.
    pub fn set_targets<S: AsRef<str>>(&self, ids: &[S]) -> Result<()> {
        let mut uniq: Vec<String> = Vec::with_capacity(ids.len());
        for id in ids {
            if !uniq.iter().any(|u| u == id.as_ref()) {
                uniq.push(id.as_ref().to_string());
            }
        }
        if uniq.len() > MAX_TARGETS {
            return Err(Error::TargetCap { got: uniq.len(), max: MAX_TARGETS });
        }
        let fused = if uniq.is_empty() {
            None
        } else {
            let store = self.store.snapshot();
            let embs = uniq.iter().map(|id| store.embedding(id).map(|e| e.as_slice())).collect::<Result<Vec<_>>>()?;
            Some(fuse_embeddings(&embs, &self.fusion)?)
        };
        let mut st = self.lock();
        self.send(Control::Targets(fused))?;
        st.targets = uniq;
        Ok(())
    }

    pub fn set_strength(&self, alpha: f64) -> Result<()> {
        check_alpha(alpha)?;
        let mut st = self.lock();
        self.send(Control::Strength(alpha as f32))?;
        st.alpha = alpha;
        Ok(())
    }

    /// Most recently accepted target set.
    pub fn targets(&self) -> Vec<String> {
        self.lock().targets.clone()
    }

    pub fn strength(&self) -> f64 {
        self.lock().alpha
    }

    pub fn store(&self) -> &Arc<SharedStore> {
        &self.store
    }
}

/// Latency of the first output sample of the latest hop, in device
/// samples. `total = lookahead + hop + occupancy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyReport {
    /// resampler delays beyond the hop itself
    pub lookahead: i64,
    pub hop: u64,
    /// buffered output ahead of the sample when it was appended
    pub occupancy: u64,
    pub total: i64,
    pub device_rate: u32,
}

impl LatencyReport {
    pub fn to_ms(&self, samples: i64) -> f64 {
        samples as f64 * 1000.0 / self.device_rate as f64
    }

    pub fn total_ms(&self) -> f64 {
        self.to_ms(self.total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamStats {
    pub hops: u64,
    pub consumed: u64,
    pub produced: u64,
    pub drops: u64,
    pub underruns: u64,
    /// hops whose compute exceeded the hop duration
    pub overruns: u64,
    pub buffered: usize,
    pub high_water: usize,
    pub buffer_cap: usize,
    pub mean_hop_secs: f64,
    pub p95_hop_secs: f64,
    /// total hop compute divided by the audio duration it covered
    pub real_time_factor: f64,
    pub latency: Option<LatencyReport>,
}

/// One live suppression session. Audio calls take `&mut self`; controls
/// may also be issued from other threads through [`StreamSession::control`].
pub struct StreamSession {
    config: StreamConfig,
    model: Arc<SuppressorModel<f32>>,
    control: StreamControl,
    rx: Receiver<Control>,
    in_res: StreamResampler,
    out_res: StreamResampler,
    window: Vec<f32>,
    pending: Vec<f32>,
    ws: Workspace<f32>,
    carry: LstmCarry<f32>,
    carry_steps: usize,
    fused: Option<Vec<f32>>,
    alpha: f32,
    dry: VecDeque<f32>,
    wet_dev: Vec<f32>,
    out: VecDeque<f32>,
    cap: usize,
    consumed: u64,
    produced: u64,
    hops: u64,
    drops: u64,
    underruns: u64,
    overruns: u64,
    high_water: usize,
    timings: Vec<f32>,
    compute_secs: f64,
    latency: Option<LatencyReport>,
    closed: bool,
}

impl StreamSession {
    pub fn new(model: Arc<SuppressorModel<f32>>, store: Arc<SharedStore>, config: StreamConfig) -> Result<Self> {
        config.validate()?;
        let (w, h) = (config.window_samples(), config.hop_samples());
        if w < model.config.window_size {
            return Err(Error::Config(format!("window of {w} samples is shorter than one analysis frame")));
        }
        let fusion = Arc::new(model.fusion()?);
        let (tx, rx) = bounded(CONTROL_QUEUE);
        let control = StreamControl { tx, store, fusion, state: Arc::new(Mutex::new(ControlState { targets: Vec::new(), alpha: 1.0 })) };
        let rate = config.device_rate;
        let hop_dev = config.hop_device_samples();
        let cap = config.buffer_cap_samples();
        let mut in_res = StreamResampler::new(rate, MODEL_RATE)?;
        in_res.reserve(4 * hop_dev + 64);
        let mut out_res = StreamResampler::new(MODEL_RATE, rate)?;
        out_res.reserve(h);
        let carry_steps = ((h as f64) / model.config.hop_size as f64).round() as usize;
        let s = StreamSession {
            ws: Workspace::new(&model.config)?,
            carry: LstmCarry::zeros(&model.config),
            model,
            control,
            rx,
            in_res,
            out_res,
            window: vec![0.0; w],
            pending: Vec::with_capacity(2 * h + 64),
            carry_steps,
            fused: None,
            alpha: 1.0,
            dry: VecDeque::with_capacity(rate as usize + 8 * hop_dev),
            wet_dev: Vec::with_capacity(2 * hop_dev + 64),
            out: VecDeque::with_capacity(cap + 1),
            cap,
            consumed: 0,
            produced: 0,
            hops: 0,
            drops: 0,
            underruns: 0,
            overruns: 0,
            high_water: 0,
            timings: vec![0.0; TIMING_RING],
            compute_secs: 0.0,
            latency: None,
            closed: false,
            config,
        };
        s.control.set_strength(s.config.alpha)?;
        let initial = s.config.active_targets.clone();
        s.control.set_targets(&initial)?;
        Ok(s)
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn control(&self) -> StreamControl {
        self.control.clone()
    }

    pub fn set_targets<S: AsRef<str>>(&self, ids: &[S]) -> Result<()> {
        self.control.set_targets(ids)
    }

    pub fn set_strength(&self, alpha: f64) -> Result<()> {
        self.control.set_strength(alpha)
    }

    pub fn targets(&self) -> Vec<String> {
        self.control.targets()
    }

    pub fn strength(&self) -> f64 {
        self.control.strength()
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Samples ready to be pulled.
    pub fn buffered(&self) -> usize {
        self.out.len()
    }

    /// Appends device-rate input and runs every hop it completes.
    pub fn push_input(&mut self, samples: &[f32]) -> Result<()> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        let hop = self.config.hop_samples();
        let mut rest = samples;
        loop {
            while self.pending.len() >= hop {
                self.run_hop()?;
            }
            if rest.is_empty() {
                return Ok(());
            }
            // stop exactly at the sample that completes the next hop
            let last = (self.hops + 1) * hop as u64 - 1;
            let need = self.in_res.inputs_needed(last).saturating_sub(self.consumed).max(1);
            let take = (need.min(rest.len() as u64)) as usize;
            let (chunk, tail) = rest.split_at(take);
            self.dry.extend(chunk.iter().copied());
            self.in_res.process(chunk, &mut self.pending);
            self.consumed += take as u64;
            rest = tail;
        }
    }

    fn drain_controls(&mut self) {
        while let Ok(msg) = self.rx.try_recv() {
            match msg {
                Control::Targets(f) => {
                    if self.fused.is_none() && f.is_some() {
                        self.carry.reset();
                    }
                    self.fused = f;
                }
                Control::Strength(a) => self.alpha = a,
            }
        }
    }

    fn run_hop(&mut self) -> Result<()> {
        let start = Instant::now();
        self.drain_controls();
        let hop = self.config.hop_samples();
        let w = self.window.len();
        self.window.copy_within(hop.., 0);
        self.window[w - hop..].copy_from_slice(&self.pending[..hop]);
        self.pending.drain(..hop);
        self.wet_dev.clear();
        match &self.fused {
            Some(f) => {
                let (model, ws, carry, window, k) = (&self.model, &mut self.ws, &mut self.carry, &self.window, self.carry_steps);
                with_inline_gemm(|| model.run(ws, window, MODEL_RATE, f, Some((carry, k))))?;
                let out = &self.ws.output;
                self.out_res.process(&out[out.len() - hop..], &mut self.wet_dev);
            }
            None => self.out_res.process(&self.window[w - hop..], &mut self.wet_dev),
        }
        let occupancy = self.out.len();
        let first = self.produced;
        let passthrough = self.fused.is_none();
        let (a, b) = (self.alpha, 1.0 - self.alpha);
        for &wet in &self.wet_dev {
            let dry = self.dry.pop_front().unwrap_or(0.0);
            let y = if passthrough { dry } else { b * dry + a * wet };
            if self.out.len() >= self.cap {
                self.out.pop_front();
                self.drops += 1;
            }
            self.out.push_back(y);
        }
        let n = self.wet_dev.len() as u64;
        if n > 0 {
            let hop_dev = self.config.hop_device_samples() as u64;
            let algorithmic = self.consumed as i64 - first as i64;
            self.latency = Some(LatencyReport {
                lookahead: algorithmic - hop_dev as i64,
                hop: hop_dev,
                occupancy: occupancy as u64,
                total: algorithmic + occupancy as i64,
                device_rate: self.config.device_rate,
            });
        }
        self.produced += n;
        self.high_water = self.high_water.max(self.out.len());
        let secs = start.elapsed().as_secs_f64();
        self.timings[(self.hops % TIMING_RING as u64) as usize] = secs as f32;
        self.compute_secs += secs;
        if secs > self.config.hop_secs {
            self.overruns += 1;
        }
        self.hops += 1;
        Ok(())
    }

    /// Moves up to `dst.len()` buffered samples into `dst`; returns the
    /// count. A short read counts as an underrun.
    pub fn pull_into(&mut self, dst: &mut [f32]) -> usize {
        let n = dst.len().min(self.out.len());
        for (d, s) in dst.iter_mut().zip(self.out.drain(..n)) {
            *d = s;
        }
        if n < dst.len() {
            self.underruns += 1;
        }
        n
    }

    pub fn pull_output(&mut self, n: usize) -> Vec<f32> {
        let mut v = vec![0.0; n];
        let got = self.pull_into(&mut v);
        v.truncate(got);
        v
    }

    /// Everything currently buffered; never counts as an underrun.
    pub fn pull_available(&mut self) -> Vec<f32> {
        self.out.drain(..).collect()
    }

    pub fn latency(&self) -> Option<LatencyReport> {
        self.latency
    }

    pub fn stats(&self) -> StreamStats {
        let held = (self.hops as usize).min(TIMING_RING);
        let mut t: Vec<f64> = self.timings[..held].iter().map(|&x| x as f64).collect();
        t.sort_by(f64::total_cmp);
        let mean = if held == 0 { 0.0 } else { t.iter().sum::<f64>() / held as f64 };
        let p95 = if held == 0 { 0.0 } else { t[((held as f64 * 0.95).ceil() as usize).clamp(1, held) - 1] };
        let audio = self.hops as f64 * self.config.hop_secs;
        StreamStats {
            hops: self.hops,
            consumed: self.consumed,
            produced: self.produced,
            drops: self.drops,
            underruns: self.underruns,
            overruns: self.overruns,
            buffered: self.out.len(),
            high_water: self.high_water,
            buffer_cap: self.cap,
            mean_hop_secs: mean,
            p95_hop_secs: p95,
            real_time_factor: if audio > 0.0 { self.compute_secs / audio } else { 0.0 },
            latency: self.latency,
        }
    }
}

/// Runs a whole waveform through the hop pipeline at its own rate. The
/// result has the input's length and is time-aligned with it.
pub fn process_file<S: AsRef<str>>(model: Arc<SuppressorModel<f32>>, store: &EmbeddingStore, wave: &Waveform, targets: &[S], alpha: f64) -> Result<Waveform> {
    let cfg = StreamConfig { alpha, active_targets: targets.iter().map(|s| s.as_ref().to_string()).collect(), ..StreamConfig::with_rate(wave.sample_rate) };
    let mut s = StreamSession::new(model, Arc::new(SharedStore::new(store.clone())), cfg)?;
    let chunk = s.config.hop_device_samples();
    let mut out = Vec::with_capacity(wave.len() + 2 * chunk);
    for c in wave.samples.chunks(chunk) {
        s.push_input(c)?;
        out.extend(s.pull_available());
    }
    let zeros = vec![0.0f32; chunk];
    while out.len() < wave.len() {
        s.push_input(&zeros)?;
        out.extend(s.pull_available());
    }
    out.truncate(wave.len());
    Waveform::new(out, wave.sample_rate)
}

/// Whole-clip counterpart of [`process_file`]: one pass of the network over
/// the entire input, without windowing. At 16 kHz with `alpha` 1 this is
/// exactly what the benchmark scores.
pub fn process_offline<S: AsRef<str>>(model: &SuppressorModel<f32>, store: &EmbeddingStore, wave: &Waveform, targets: &[S], alpha: f64) -> Result<Waveform> {
    check_alpha(alpha)?;
    let mut uniq: Vec<&str> = Vec::new();
    for t in targets {
        if !uniq.contains(&t.as_ref()) {
            uniq.push(t.as_ref());
        }
    }
    if uniq.len() > MAX_TARGETS {
        return Err(Error::TargetCap { got: uniq.len(), max: MAX_TARGETS });
    }
    let embs = uniq.iter().map(|id| store.embedding(id).map(|e| e.as_slice())).collect::<Result<Vec<_>>>()?;
    if embs.is_empty() {
        return Ok(wave.clone());
    }
    let fused = fuse_embeddings(&embs, &model.fusion()?)?;
    let wet = if wave.sample_rate == MODEL_RATE {
        model.suppress(wave, &fused)?
    } else {
        let mut w = resample(&model.suppress(&resample(wave, MODEL_RATE)?, &fused)?, wave.sample_rate)?;
        w.samples.resize(wave.len(), 0.0);
        w
    };
    let (a, b) = (alpha as f32, 1.0 - alpha as f32);
    let out = wave.samples.iter().zip(&wet.samples).map(|(&d, &w)| b * d + a * w).collect();
    Waveform::new(out, wave.sample_rate)
}
