//! Pluggable sample sources and sinks for driving a session.

use super::StreamSession;
use crate::audio::Waveform;
use crate::error::{Error, Result};

pub trait SampleSource {
    fn sample_rate(&self) -> u32;
    /// Fills `buf` from the front; returns the count written, 0 at the end.
    fn read(&mut self, buf: &mut [f32]) -> Result<usize>;
}

pub trait SampleSink {
    fn write(&mut self, samples: &[f32]) -> Result<()>;
}

/// Reads a waveform front to back.
pub struct WaveSource {
    wave: Waveform,
    pos: usize,
}

impl WaveSource {
    pub fn new(wave: Waveform) -> Self {
        WaveSource { wave, pos: 0 }
    }
}

impl SampleSource for WaveSource {
    fn sample_rate(&self) -> u32 {
        self.wave.sample_rate
    }

    fn read(&mut self, buf: &mut [f32]) -> Result<usize> {
        let n = buf.len().min(self.wave.len() - self.pos);
        buf[..n].copy_from_slice(&self.wave.samples[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

#[derive(Debug, Default, Clone)]
pub struct VecSink {
    pub samples: Vec<f32>,
}

impl SampleSink for VecSink {
    fn write(&mut self, samples: &[f32]) -> Result<()> {
        self.samples.extend_from_slice(samples);
        Ok(())
    }
}

/// Feeds `source` to the session in `chunk`-sized reads and forwards every
/// produced sample to `sink` until the source is exhausted. Returns the
/// number of input samples consumed.
pub fn pump(session: &mut StreamSession, source: &mut dyn SampleSource, sink: &mut dyn SampleSink, chunk: usize) -> Result<u64> {
    if source.sample_rate() != session.config().device_rate {
        return Err(Error::InvalidRate(source.sample_rate()));
    }
    let mut buf = vec![0.0f32; chunk.max(1)];
    let mut out = vec![0.0f32; session.config().buffer_cap_samples()];
    let mut total = 0u64;
    loop {
        let n = source.read(&mut buf)?;
        if n == 0 {
            return Ok(total);
        }
        total += n as u64;
        session.push_input(&buf[..n])?;
        while session.buffered() > 0 {
            let want = session.buffered().min(out.len());
            let got = session.pull_into(&mut out[..want]);
            sink.write(&out[..got])?;
        }
    }
}
