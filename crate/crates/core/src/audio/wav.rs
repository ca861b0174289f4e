use super::Waveform;
use crate::error::{Error, Result};
use hound::{SampleFormat, WavSpec};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => {
            if io.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(0, format!("truncated file {}", path.display()))
            } else {
                Error::io(path, io)
            }
        }
        hound::Error::FormatError(msg) => Error::format(0, msg),
        hound::Error::Unsupported => Error::Unsupported("unsupported WAV encoding".into()),
        hound::Error::TooWide => Error::Unsupported("sample width too large".into()),
        other => Error::format(0, other.to_string()),
    }
}

/// Reads a PCM16 or float32 WAV file, downmixing to mono by channel mean.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::format(22, "zero channels"));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::Unsupported(format!("{fmt:?} with {bits} bits per sample")));
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        let scale = 1.0 / channels as f32;
        interleaved.chunks_exact(channels).map(|frame| frame.iter().sum::<f32>() * scale).collect()
    };
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &wave.samples {
        let res = match encoding {
            WavEncoding::Pcm16 => writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16),
            WavEncoding::Float32 => writer.write_sample(s),
        };
        res.map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn pcm16_silence_reads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_wav(&p, &Waveform::silence(16000, 16000), WavEncoding::Pcm16).unwrap();
        let w = read_wav(&p).unwrap();
        assert_eq!(w.sample_rate, 16000);
        assert_eq!(w.samples, vec![0.0; 16000]);
    }

    #[test]
    fn stereo_antiphase_downmixes_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for i in 0..100i16 {
            w.write_sample(i * 10).unwrap();
            w.write_sample(-i * 10).unwrap();
        }
        w.finalize().unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.len(), 100);
        assert!(r.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn pcm16_value_maps_to_half() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.wav");
        let spec = WavSpec { channels: 1, sample_rate: 16000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(16384i16).unwrap();
        w.finalize().unwrap();
        let r = read_wav(&p).unwrap();
        let oracle = 16384.0 / 32768.0;
        assert!((r.samples[0] - oracle).abs() <= 1.0 / 32768.0);
    }

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let wave = Waveform::new((0..4000).map(|_| rng.gen_range(-1.0f32..1.0)).collect(), 16000).unwrap();
        let pf = dir.path().join("f.wav");
        write_wav(&pf, &wave, WavEncoding::Float32).unwrap();
        assert_eq!(read_wav(&pf).unwrap(), wave);

        let pi = dir.path().join("i.wav");
        write_wav(&pi, &wave, WavEncoding::Pcm16).unwrap();
        let back = read_wav(&pi).unwrap();
        let max_err = back.samples.iter().zip(&wave.samples).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(max_err <= 1.0 / 32768.0, "{max_err}");

        let pe = dir.path().join("e.wav");
        write_wav(&pe, &Waveform::silence(0, 16000), WavEncoding::Float32).unwrap();
        assert_eq!(read_wav(&pe).unwrap().len(), 0);
    }

    #[test]
    fn malformed_and_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        std::fs::write(&p, b"RIFX0000garbage").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Format { .. })));

        let p8 = dir.path().join("u8.wav");
        let spec = WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 8, sample_format: SampleFormat::Int };
        let mut w = hound::WavWriter::create(&p8, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p8), Err(Error::Unsupported(_))));

        assert!(matches!(
            write_wav("/nonexistent-dir/x.wav", &Waveform::silence(1, 8000), WavEncoding::Pcm16),
            Err(Error::Io { .. })
        ));
    }
}
