//! Runtime counters collected by driving a live session.

use crate::error::{Error, Result};
use crate::streaming::{LatencyReport, StreamSession};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// Counters from one profiling run. CPU load and battery drain are
/// platform-specific and are never measured here.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRecord {
    pub duration_secs: f64,
    pub hops: u64,
    pub mean_hop_ms: f64,
    pub p95_hop_ms: f64,
    pub real_time_factor: f64,
    pub latency: Option<LatencyReport>,
    pub high_water: usize,
    pub buffer_cap: usize,
    pub drops: u64,
    pub underruns: u64,
    pub cpu_percent: Option<f64>,
    pub battery_mw: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "unavailable".to_string(), |x| format!("{x}"))
}

impl ProfileRecord {
    pub fn to_record(&self) -> String {
        let (la, hop, occ, total, rate) = match &self.latency {
            Some(l) => (l.lookahead, l.hop as i64, l.occupancy as i64, l.total, l.device_rate),
            None => (0, 0, 0, 0, 0),
        };
        let ms = |s: i64| if rate == 0 { 0.0 } else { s as f64 * 1000.0 / rate as f64 };
        format!(
            "kind=profile duration_s={} hops={} mean_hop_ms={:.4} p95_hop_ms={:.4} rtf={:.5} lookahead_samples={la} hop_samples={hop} occupancy_samples={occ} latency_samples={total} lookahead_ms={:.3} hop_ms={:.3} occupancy_ms={:.3} latency_ms={:.3} high_water={} buffer_cap={} drops={} underruns={} cpu={} battery={}",
            self.duration_secs,
            self.hops,
            self.mean_hop_ms,
            self.p95_hop_ms,
            self.real_time_factor,
            ms(la),
            ms(hop),
            ms(occ),
            ms(total),
            self.high_water,
            self.buffer_cap,
            self.drops,
            self.underruns,
            opt(self.cpu_percent),
            opt(self.battery_mw),
        )
    }
}

impl fmt::Display for ProfileRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "hops              {}", self.hops)?;
        writeln!(f, "hop time          mean {:.3} ms, p95 {:.3} ms", self.mean_hop_ms, self.p95_hop_ms)?;
        writeln!(f, "real-time factor  {:.4}", self.real_time_factor)?;
        if let Some(l) = &self.latency {
            writeln!(
                f,
                "latency           {} samples ({:.2} ms) = lookahead {} + hop {} + buffered {}",
                l.total,
                l.total_ms(),
                l.lookahead,
                l.hop,
                l.occupancy
            )?;
        }
        writeln!(f, "buffer            high-water {} of {} samples, {} dropped", self.high_water, self.buffer_cap, self.drops)?;
        writeln!(f, "cpu               {}", opt(self.cpu_percent))?;
        write!(f, "battery           {}", opt(self.battery_mw))
    }
}

/// Feeds `duration_secs` of seeded noise through `session` one hop at a time
/// with a consumer that drains one hop after every push.
pub fn profile_stream(session: &mut StreamSession, duration_secs: f64, seed: u64) -> Result<ProfileRecord> {
    if !(duration_secs.is_finite() && duration_secs > 0.0) {
        return Err(Error::Range(format!("profile duration {duration_secs}")));
    }
    let cfg = session.config().clone();
    let chunk = cfg.hop_device_samples();
    let total = (duration_secs * cfg.device_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = vec![0.0f32; chunk];
    let mut output = vec![0.0f32; chunk];
    let mut fed = 0;
    while fed < total {
        let n = chunk.min(total - fed);
        for v in &mut input[..n] {
            *v = rng.gen_range(-0.1..0.1);
        }
        session.push_input(&input[..n])?;
        let want = session.buffered().min(n);
        session.pull_into(&mut output[..want]);
        fed += n;
    }
    let st = session.stats();
    Ok(ProfileRecord {
        duration_secs,
        hops: st.hops,
        mean_hop_ms: st.mean_hop_secs * 1000.0,
        p95_hop_ms: st.p95_hop_secs * 1000.0,
        real_time_factor: st.real_time_factor,
        latency: st.latency,
        high_water: st.high_water,
        buffer_cap: st.buffer_cap,
        drops: st.drops,
        underruns: st.underruns,
        cpu_percent: None,
        battery_mw: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{EmbeddingStore, SharedStore};
    use crate::streaming::StreamConfig;
    use crate::suppressor::{init_model, SuppressorConfig};
    use std::sync::Arc;

    #[test]
    fn passthrough_profile_is_cheap_and_consistent() {
        let model = Arc::new(init_model::<f32>(&SuppressorConfig::toy(), 1).unwrap());
        let mut s = StreamSession::new(model, Arc::new(SharedStore::new(EmbeddingStore::new())), StreamConfig::default()).unwrap();
        let p = profile_stream(&mut s, 2.0, 3).unwrap();
        // resampler lookahead holds back the tail of the final hop
        assert!((79..=80).contains(&p.hops), "{}", p.hops);
        assert!(p.real_time_factor < 0.1, "{}", p.real_time_factor);
        assert!(p.high_water <= p.buffer_cap);
        assert_eq!(p.drops, 0);
        let l = p.latency.unwrap();
        assert_eq!(l.total, l.lookahead + l.hop as i64 + l.occupancy as i64);
        let rec = p.to_record();
        assert!(rec.contains("cpu=unavailable battery=unavailable"), "{rec}");
        assert!(profile_stream(&mut s, 0.0, 3).is_err());
    }
}
