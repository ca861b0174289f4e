use crate::audio::{HOP_SIZE, WINDOW_SIZE};
use crate::error::{Error, Result};
use crate::fusion::{EMBED_DIM, FUSION_HIDDEN};
use std::fmt::Write as _;

/// Architecture of the suppression network.
#[derive(Debug, Clone, PartialEq)]
pub struct SuppressorConfig {
    /// complex channels of each encoder stage; the decoder mirrors them
    pub channels: Vec<usize>,
    /// kernel extent along frequency
    pub kernel_f: usize,
    /// kernel extent along time (causal)
    pub kernel_t: usize,
    pub stride_f: usize,
    pub lstm_layers: usize,
    /// complex hidden width; each LSTM layer runs at real width `2 * lstm_hidden`
    pub lstm_hidden: usize,
    pub embed_dim: usize,
    pub fusion_hidden: usize,
    pub window_size: usize,
    pub hop_size: usize,
    /// largest mask magnitude
    pub mask_bound: f64,
    /// power-law exponent applied to input magnitudes before the encoder
    pub input_compression: f64,
}

impl Default for SuppressorConfig {
    fn default() -> Self {
        SuppressorConfig {
            channels: vec![16, 32, 64, 128],
            kernel_f: 5,
            kernel_t: 2,
            stride_f: 2,
            lstm_layers: 2,
            lstm_hidden: 128,
            embed_dim: EMBED_DIM,
            fusion_hidden: FUSION_HIDDEN,
            window_size: WINDOW_SIZE,
            hop_size: HOP_SIZE,
            mask_bound: 2.0,
            input_compression: 0.3,
        }
    }
}

impl SuppressorConfig {
    /// Configuration used by the desk-scale training run.
    pub fn toy() -> Self {
        SuppressorConfig { channels: vec![4, 8, 16, 16], lstm_hidden: 32, ..Self::default() }
    }

    /// Smallest configuration for gradient checks.
    pub fn tiny() -> Self {
        SuppressorConfig {
            channels: vec![2, 3],
            kernel_f: 3,
            lstm_layers: 1,
            lstm_hidden: 3,
            embed_dim: 4,
            fusion_hidden: 5,
            window_size: 16,
            hop_size: 4,
            ..Self::default()
        }
    }

    pub fn pad_f(&self) -> usize {
        self.kernel_f / 2
    }

    pub fn n_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Frequency extent after each encoder stage, starting with the input.
    pub fn freq_chain(&self) -> Vec<usize> {
        let mut f = vec![self.n_bins()];
        for _ in &self.channels {
            let last = *f.last().unwrap();
            f.push((last + 2 * self.pad_f() - self.kernel_f) / self.stride_f + 1);
        }
        f
    }

    /// Real width of one flattened bottleneck frame.
    pub fn bottleneck_width(&self) -> usize {
        2 * self.channels.last().copied().unwrap_or(0) * self.freq_chain().last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("encoder channels must be non-empty and positive".into());
        }
        if self.kernel_f == 0 || self.kernel_f % 2 == 0 {
            return bad(format!("kernel_f {} must be odd", self.kernel_f));
        }
        if self.kernel_t == 0 || self.stride_f == 0 {
            return bad("kernel_t and stride_f must be positive".into());
        }
        if self.lstm_layers == 0 || self.lstm_hidden == 0 || self.embed_dim == 0 || self.fusion_hidden == 0 {
            return bad("lstm and embedding widths must be positive".into());
        }
        if !(self.mask_bound.is_finite() && self.mask_bound > 0.0) {
            return bad(format!("mask_bound {} must be positive", self.mask_bound));
        }
        if !(self.input_compression.is_finite() && self.input_compression > 0.0 && self.input_compression <= 1.0) {
            return bad(format!("input_compression {} must be in (0, 1]", self.input_compression));
        }
        crate::audio::StftPlan::<f32>::new(self.window_size, self.hop_size)?;
        // the transposed stages must land back exactly on each encoder extent
        let chain = self.freq_chain();
        for w in chain.windows(2) {
            if w[1] == 0 || (w[1] - 1) * self.stride_f + self.kernel_f - 2 * self.pad_f() != w[0] {
                return bad(format!("frequency extent {} does not round-trip through stride {}", w[0], self.stride_f));
            }
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_header(&self) -> String {
        let mut s = String::new();
        let ch: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(s, "channels={}", ch.join(","));
        let _ = writeln!(s, "kernel_f={}", self.kernel_f);
        let _ = writeln!(s, "kernel_t={}", self.kernel_t);
        let _ = writeln!(s, "stride_f={}", self.stride_f);
        let _ = writeln!(s, "lstm_layers={}", self.lstm_layers);
        let _ = writeln!(s, "lstm_hidden={}", self.lstm_hidden);
        let _ = writeln!(s, "embed_dim={}", self.embed_dim);
        let _ = writeln!(s, "fusion_hidden={}", self.fusion_hidden);
        let _ = writeln!(s, "window_size={}", self.window_size);
        let _ = writeln!(s, "hop_size={}", self.hop_size);
        let _ = writeln!(s, "mask_bound={:?}", self.mask_bound);
        let _ = writeln!(s, "input_compression={:?}", self.input_compression);
        s
    }

    /// Parses the output of [`to_header`](Self::to_header). Unknown keys are
    /// ignored so headers can carry extra metadata.
    pub fn from_header(text: &str) -> Result<Self> {
        let mut c = SuppressorConfig::default();
        fn num<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
            v.trim().parse().map_err(|_| Error::Config(format!("bad value for {k}: {v:?}")))
        }
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("header line without '=': {line:?}")));
            };
            let k = k.trim();
            match k {
                "channels" => c.channels = v.split(',').map(|p| num(k, p)).collect::<Result<_>>()?,
                "kernel_f" => c.kernel_f = num(k, v)?,
                "kernel_t" => c.kernel_t = num(k, v)?,
                "stride_f" => c.stride_f = num(k, v)?,
                "lstm_layers" => c.lstm_layers = num(k, v)?,
                "lstm_hidden" => c.lstm_hidden = num(k, v)?,
                "embed_dim" => c.embed_dim = num(k, v)?,
                "fusion_hidden" => c.fusion_hidden = num(k, v)?,
                "window_size" => c.window_size = num(k, v)?,
                "hop_size" => c.hop_size = num(k, v)?,
                "mask_bound" => c.mask_bound = num(k, v)?,
                "input_compression" => c.input_compression = num(k, v)?,
                _ => {}
            }
        }
        c.validate()?;
        Ok(c)
    }
}
