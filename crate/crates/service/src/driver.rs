//! Feeds a sample source through the service at the hop cadence, with
//! analysis on its own thread so it never delays the audio path.

use crate::service::Service;
use attn_core::audio::Waveform;
use attn_core::streaming::{SampleSource, StreamConfig};
use crossbeam_channel::{bounded, TrySendError};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

/// analysis chunks held before the driver starts discarding them
pub const ANALYSIS_QUEUE: usize = 64;

/// Endless silence at a fixed rate.
pub struct SilenceSource {
    pub rate: u32,
}

impl SampleSource for SilenceSource {
    fn sample_rate(&self) -> u32 {
        self.rate
    }

    fn read(&mut self, buf: &mut [f32]) -> attn_core::Result<usize> {
        buf.fill(0.0);
        Ok(buf.len())
    }
}

/// Repeats a waveform forever.
pub struct LoopSource {
    wave: Waveform,
    pos: usize,
}

impl LoopSource {
    pub fn new(wave: Waveform) -> Self {
        LoopSource { wave, pos: 0 }
    }
}

impl SampleSource for LoopSource {
    fn sample_rate(&self) -> u32 {
        self.wave.sample_rate
    }

    fn read(&mut self, buf: &mut [f32]) -> attn_core::Result<usize> {
        if self.wave.is_empty() {
            return Ok(0);
        }
        for v in buf.iter_mut() {
            *v = self.wave.samples[self.pos];
            self.pos = (self.pos + 1) % self.wave.len();
        }
        Ok(buf.len())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DriverStats {
    pub chunks: u64,
    pub analysis_dropped: u64,
}

/// Runs until `stop` is set or the source ends. Input is only consumed
/// while a session runs at the source's rate. With `realtime` the loop
/// sleeps to one chunk per hop period.
pub fn run_driver(service: Arc<Service>, mut source: Box<dyn SampleSource + Send>, realtime: bool, stop: Arc<AtomicBool>) -> attn_core::Result<DriverStats> {
    let rate = source.sample_rate();
    let cfg = StreamConfig::with_rate(rate);
    let period = Duration::from_secs_f64(cfg.hop_secs);
    let (tx, rx) = bounded::<Vec<f32>>(ANALYSIS_QUEUE);
    let svc = service.clone();
    let analysis = thread::spawn(move || {
        for chunk in rx {
            svc.analyze(&chunk);
        }
    });
    let mut stats = DriverStats::default();
    let mut buf = vec![0.0f32; cfg.hop_device_samples()];
    let mut next = Instant::now();
    let result = loop {
        if stop.load(Ordering::Relaxed) {
            break Ok(());
        }
        if realtime {
            let now = Instant::now();
            if next > now {
                thread::sleep(next - now);
            }
            next += period;
        }
        if !service.is_running() || service.device_rate() != rate {
            if !realtime {
                thread::sleep(period);
            }
            continue;
        }
        let n = match source.read(&mut buf) {
            Ok(0) => break Ok(()),
            Ok(n) => n,
            Err(e) => break Err(e),
        };
        match service.process_audio(&buf[..n]) {
            Ok(_) | Err(attn_core::Error::State(_)) => {}
            Err(e) => break Err(e),
        }
        stats.chunks += 1;
        match tx.try_send(buf[..n].to_vec()) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) => stats.analysis_dropped += 1,
            Err(TrySendError::Disconnected(_)) => {}
        }
    };
    drop(tx);
    let _ = analysis.join();
    result.map(|_| stats)
}
