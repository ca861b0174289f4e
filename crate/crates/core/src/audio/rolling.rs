use super::Waveform;

/// Fixed-capacity ring of the most recent samples.
#[derive(Debug, Clone)]
pub struct RollingBuffer {
    data: Vec<f32>,
    capacity: usize,
    /// next write position
    head: usize,
    written: u64,
    sample_rate: u32,
}

impl RollingBuffer {
    pub fn new(capacity: usize, sample_rate: u32) -> Self {
        RollingBuffer { data: vec![0.0; capacity], capacity, head: 0, written: 0, sample_rate }
    }

    pub fn with_duration(seconds: f64, sample_rate: u32) -> Self {
        Self::new((seconds * sample_rate as f64).round() as usize, sample_rate)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        (self.written.min(self.capacity as u64)) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.written == 0
    }

    pub fn total_written(&self) -> u64 {
        self.written
    }

    pub fn write(&mut self, samples: &[f32]) {
        if self.capacity == 0 {
            self.written += samples.len() as u64;
            return;
        }
        let src = if samples.len() > self.capacity { &samples[samples.len() - self.capacity..] } else { samples };
        let skipped = samples.len() - src.len();
        self.head = (self.head + skipped) % self.capacity;
        let first = (self.capacity - self.head).min(src.len());
        self.data[self.head..self.head + first].copy_from_slice(&src[..first]);
        self.data[..src.len() - first].copy_from_slice(&src[first..]);
        self.head = (self.head + src.len()) % self.capacity;
        self.written += samples.len() as u64;
    }

    /// The most recent `min(written, capacity)` samples, oldest first.
    pub fn snapshot(&self) -> Waveform {
        self.last(self.len())
    }

    /// The most recent `n` samples (clamped to what is held), oldest first.
    pub fn last(&self, n: usize) -> Waveform {
        let n = n.min(self.len());
        let mut out = Vec::with_capacity(n);
        let start = (self.head + self.capacity - n) % self.capacity.max(1);
        for i in 0..n {
            out.push(self.data[(start + i) % self.capacity]);
        }
        Waveform { samples: out, sample_rate: self.sample_rate }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn partial_fill() {
        let mut b = RollingBuffer::new(5, 10);
        b.write(&[1.0, 2.0]);
        assert_eq!(b.snapshot().samples, vec![1.0, 2.0]);
        b.write(&[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(b.snapshot().samples, vec![2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(b.last(2).samples, vec![5.0, 6.0]);
    }

    proptest! {
        #[test]
        fn snapshot_is_exact_tail(cap in 1usize..64, chunks in proptest::collection::vec(1usize..50, 1..20)) {
            let mut b = RollingBuffer::new(cap, 100);
            let mut all = Vec::new();
            let mut v = 0.0f32;
            for c in chunks {
                let chunk: Vec<f32> = (0..c).map(|_| { v += 1.0; v }).collect();
                b.write(&chunk);
                all.extend(chunk);
            }
            let n = all.len().min(cap);
            prop_assert_eq!(b.snapshot().samples, all[all.len() - n..].to_vec());
        }
    }
}
