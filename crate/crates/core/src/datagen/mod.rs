//! Paired mixture/residual examples from a class-organised corpus.

mod shards;
mod toy;

pub use shards::{read_shards, write_shard_examples, write_shards, ShardExample};
pub use toy::{synth_clip, synth_corpus, toy_catalog, TOY_CLASSES};

use crate::audio::{read_wav, resample, Waveform, MODEL_RATE};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Example duration in samples at the model rate (4 s).
pub const SEGMENT_LEN: usize = 64_000;
pub const SIR_RANGE_DB: (f64, f64) = (0.0, 10.0);
/// Peak after joint rescaling of a clipping mixture.
pub const RESCALE_PEAK: f32 = 0.9;
const MAX_REDRAWS: usize = 16;

fn check_class_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == ',') {
        return Err(Error::Invalid(format!("class id {id:?} must be non-empty without whitespace or commas")));
    }
    Ok(())
}

/// Class id → source files, from a `class_id<TAB>path` manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassCatalog {
    pub classes: BTreeMap<String, Vec<PathBuf>>,
}

impl ClassCatalog {
    pub fn add(&mut self, class_id: &str, path: impl Into<PathBuf>) -> Result<()> {
        check_class_id(class_id)?;
        self.classes.entry(class_id.to_string()).or_default().push(path.into());
        Ok(())
    }

    /// Relative paths resolve against the manifest's directory.
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cat = ClassCatalog::default();
        let mut offset = 0u64;
        for line in text.lines() {
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                let (id, file) = line.split_once('\t').ok_or_else(|| Error::format(offset, "expected class_id<TAB>path"))?;
                let p = PathBuf::from(file.trim());
                cat.add(id.trim(), if p.is_absolute() { p } else { base.join(p) })?;
            }
            offset += line.len() as u64 + 1;
        }
        Ok(cat)
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let mut out = String::new();
        for (id, files) in &self.classes {
            for f in files {
                let shown = f.strip_prefix(base).unwrap_or(f);
                out.push_str(&format!("{id}\t{}\n", shown.display()));
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn counts(&self) -> Vec<(String, usize)> {
        self.classes.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    /// Decodes every file and resamples it to the model rate.
    pub fn load(&self) -> Result<LoadedCatalog> {
        let mut map = BTreeMap::new();
        for (id, files) in &self.classes {
            let mut clips = Vec::with_capacity(files.len());
            for f in files {
                clips.push(resample(&read_wav(f)?, MODEL_RATE)?);
            }
            map.insert(id.clone(), clips);
        }
        LoadedCatalog::from_clips(map)
    }
}

/// Decoded corpus at the model rate, classes in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCatalog {
    pub ids: Vec<String>,
    pub clips: Vec<Vec<Arc<Waveform>>>,
}

impl LoadedCatalog {
    pub fn from_clips(map: BTreeMap<String, Vec<Waveform>>) -> Result<Self> {
        let mut ids = Vec::new();
        let mut clips = Vec::new();
        for (id, waves) in map {
            check_class_id(&id)?;
            if waves.is_empty() {
                return Err(Error::Invalid(format!("class {id} has no clips")));
            }
            let waves = waves.into_iter().map(|w| if w.sample_rate == MODEL_RATE { Ok(w) } else { resample(&w, MODEL_RATE) }).collect::<Result<Vec<_>>>()?;
            ids.push(id);
            clips.push(waves.into_iter().map(Arc::new).collect());
        }
        Ok(LoadedCatalog { ids, clips })
    }

    pub fn counts(&self) -> Vec<usize> {
        self.clips.iter().map(Vec::len).collect()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.ids.iter().position(|c| c == id).ok_or_else(|| Error::NotFound(format!("class {id}")))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Per-example generator seeded by counter from a root seed.
pub fn example_rng(root_seed: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(root_seed);
    r.set_stream(index);
    r
}

/// Draws `k` distinct indices, each draw proportional to `weights` among the
/// indices not yet taken.
pub fn weighted_without_replacement(weights: &[f64], k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if weights.len() < k {
        return Err(Error::InsufficientClasses { need: k, have: weights.len() });
    }
    let mut taken = vec![false; weights.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights.iter().zip(&taken).filter(|(_, t)| !**t).map(|(w, _)| *w).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = None;
        for (i, w) in weights.iter().enumerate() {
            if taken[i] {
                continue;
            }
            pick = Some(i);
            if u < *w {
                break;
            }
            u -= *w;
        }
        let i = pick.ok_or(Error::InsufficientClasses { need: k, have: out.len() })?;
        taken[i] = true;
        out.push(i);
    }
    Ok(out)
}

/// Chooses `k ∈ {2, 3}` uniformly and draws that many distinct classes,
/// weighted by the inverse of each class's clip count.
pub fn sample_classes(counts: &[usize], rng: &mut impl Rng) -> Result<Vec<usize>> {
    if counts.len() < 3 {
        return Err(Error::InsufficientClasses { need: 3, have: counts.len() });
    }
    let k = rng.gen_range(2..=3);
    let weights: Vec<f64> = counts.iter().map(|&c| 1.0 / c.max(1) as f64).collect();
    weighted_without_replacement(&weights, k, rng)
}

/// Random 4 s crop of a decoded file; shorter sources are zero-padded at the end.
pub fn extract_segment(path: impl AsRef<Path>, rng: &mut impl Rng) -> Result<Waveform> {
    let w = resample(&read_wav(path)?, MODEL_RATE)?;
    extract_segment_from(&w, rng)
}

/// [`extract_segment`] on an already decoded waveform.
pub fn extract_segment_from(wave: &Waveform, rng: &mut impl Rng) -> Result<Waveform> {
    let owned;
    let w = if wave.sample_rate == MODEL_RATE {
        wave
    } else {
        owned = resample(wave, MODEL_RATE)?;
        &owned
    };
    let mut out = vec![0.0f32; SEGMENT_LEN];
    if w.len() > SEGMENT_LEN {
        let start = rng.gen_range(0..=w.len() - SEGMENT_LEN);
        out.copy_from_slice(&w.samples[start..start + SEGMENT_LEN]);
    } else {
        out[..w.len()].copy_from_slice(&w.samples);
    }
    Waveform::new(out, MODEL_RATE)
}

/// Scales `target` so that its power sits `sir_db` above `retained_sum`.
pub fn scale_to_sir(target: &Waveform, retained_sum: &Waveform, sir_db: f64) -> Result<Waveform> {
    let pt = target.power();
    let pr = retained_sum.power();
    if pt == 0.0 {
        return Err(Error::DegenerateSource("target segment has zero power".into()));
    }
    if pr == 0.0 {
        return Err(Error::DegenerateSource("retained sources have zero power".into()));
    }
    let g = (pr / pt * 10f64.powf(sir_db / 10.0)).sqrt();
    Ok(Waveform { samples: target.samples.iter().map(|&s| (s as f64 * g) as f32).collect(), sample_rate: target.sample_rate })
}

/// One supervised pair. `mixture = residual + Σ targets` sample-wise, with
/// the sum taken in target order.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub mixture: Waveform,
    pub residual: Waveform,
    pub target_ids: Vec<String>,
    pub retained_ids: Vec<String>,
    pub sir_db: Vec<f64>,
    /// scaled target sources, aligned with `target_ids`
    pub targets: Vec<Waveform>,
    /// joint gain applied to everything (1 when no clipping was possible)
    pub rescale: f32,
}

fn sum_into(acc: &mut [f32], w: &Waveform) {
    for (a, s) in acc.iter_mut().zip(&w.samples) {
        *a += *s;
    }
}

fn draw_segment(cat: &LoadedCatalog, class: usize, rng: &mut impl Rng) -> Result<Waveform> {
    for _ in 0..MAX_REDRAWS {
        let clip = cat.clips[class].choose(rng).ok_or_else(|| Error::Invalid(format!("class {} has no clips", cat.ids[class])))?;
        let seg = extract_segment_from(clip, rng)?;
        if seg.power() > 0.0 {
            return Ok(seg);
        }
    }
    Err(Error::DegenerateSource(format!("no audible segment found for class {}", cat.ids[class])))
}

/// Builds an example from the given classes, the first `n_targets` of which
/// are suppression targets.
pub fn build_example(cat: &LoadedCatalog, classes: &[usize], n_targets: usize, rng: &mut impl Rng) -> Result<MixtureExample> {
    if n_targets == 0 || n_targets >= classes.len() {
        return Err(Error::Invalid(format!("{n_targets} targets out of {} classes", classes.len())));
    }
    let segs = classes.iter().map(|&c| draw_segment(cat, c, rng)).collect::<Result<Vec<_>>>()?;
    let mut residual = vec![0.0f32; SEGMENT_LEN];
    for s in &segs[n_targets..] {
        sum_into(&mut residual, s);
    }
    let residual = Waveform::new(residual, MODEL_RATE)?;
    let mut targets = Vec::with_capacity(n_targets);
    let mut sir_db = Vec::with_capacity(n_targets);
    for s in &segs[..n_targets] {
        let sir = rng.gen_range(SIR_RANGE_DB.0..=SIR_RANGE_DB.1);
        targets.push(scale_to_sir(s, &residual, sir)?);
        sir_db.push(sir);
    }
    let mut mixture = residual.samples.clone();
    for t in &targets {
        sum_into(&mut mixture, t);
    }
    let mut ex = MixtureExample {
        mixture: Waveform::new(mixture, MODEL_RATE)?,
        residual,
        target_ids: classes[..n_targets].iter().map(|&c| cat.ids[c].clone()).collect(),
        retained_ids: classes[n_targets..].iter().map(|&c| cat.ids[c].clone()).collect(),
        sir_db,
        targets,
        rescale: 1.0,
    };
    let peak = ex.mixture.peak();
    if peak > 1.0 {
        let g = RESCALE_PEAK / peak;
        ex.rescale = g;
        ex.residual = ex.residual.scaled(g);
        ex.targets = ex.targets.iter().map(|t| t.scaled(g)).collect();
        // re-summed from the scaled parts so the identity stays exact
        let mut mixture = ex.residual.samples.clone();
        for t in &ex.targets {
            sum_into(&mut mixture, t);
        }
        ex.mixture = Waveform::new(mixture, MODEL_RATE)?;
    }
    Ok(ex)
}

/// Training example: inverse-count class sampling, `1..=k-1` random targets.
pub fn make_example(cat: &LoadedCatalog, rng: &mut impl Rng) -> Result<MixtureExample> {
    let mut classes = sample_classes(&cat.counts(), rng)?;
    let n_targets = rng.gen_range(1..classes.len());
    classes.shuffle(rng);
    build_example(cat, &classes, n_targets, rng)
}

/// Evaluation example with exactly `n_targets` targets and one or two
/// retained classes.
pub fn make_eval_example(cat: &LoadedCatalog, n_targets: usize, rng: &mut impl Rng) -> Result<MixtureExample> {
    let need = n_targets + 1;
    if cat.len() < need {
        return Err(Error::InsufficientClasses { need, have: cat.len() });
    }
    let retained = if cat.len() >= n_targets + 2 { rng.gen_range(1..=2) } else { 1 };
    let weights: Vec<f64> = cat.counts().iter().map(|&c| 1.0 / c.max(1) as f64).collect();
    let classes = weighted_without_replacement(&weights, n_targets + retained, rng)?;
    build_example(cat, &classes, n_targets, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn catalog() -> LoadedCatalog {
        toy_catalog(&TOY_CLASSES, 2, 3.0, 11).unwrap()
    }

    #[test]
    fn segments_have_fixed_length_and_end_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let long = Waveform::new(vec![0.1; 160_000], 16000).unwrap();
        assert_eq!(extract_segment_from(&long, &mut rng).unwrap().len(), SEGMENT_LEN);
        let short = Waveform::new(vec![0.1; 32_000], 16000).unwrap();
        let s = extract_segment_from(&short, &mut rng).unwrap();
        assert_eq!(s.len(), SEGMENT_LEN);
        assert!(s.samples[..32_000].iter().all(|&v| v == 0.1));
        assert!(s.samples[32_000..].iter().all(|&v| v == 0.0));
        let hi = Waveform::new(vec![0.1; 480_000], 48000).unwrap();
        assert_eq!(extract_segment_from(&hi, &mut rng).unwrap().sample_rate, 16000);
    }

    #[test]
    fn sir_gain_closed_forms() {
        let a = Waveform::new(vec![0.5, -0.5, 0.5, -0.5], 16000).unwrap();
        let b = Waveform::new(vec![-0.5, 0.5, 0.5, -0.5], 16000).unwrap();
        let g0 = scale_to_sir(&a, &b, 0.0).unwrap();
        assert_eq!(g0.samples, a.samples);
        let g10 = scale_to_sir(&a, &b, 10.0).unwrap();
        assert!((g10.samples[0] / 0.5 - 10f32.sqrt()).abs() < 1e-5);
        let z = Waveform::silence(4, 16000);
        assert!(matches!(scale_to_sir(&z, &b, 3.0), Err(Error::DegenerateSource(_))));
    }

    #[test]
    fn two_class_examples_have_one_target() {
        let cat = catalog();
        for i in 0..40 {
            let mut rng = example_rng(3, i);
            let ex = make_example(&cat, &mut rng).unwrap();
            let k = ex.target_ids.len() + ex.retained_ids.len();
            assert!(k == 2 || k == 3);
            if k == 2 {
                assert_eq!(ex.target_ids.len(), 1);
            }
            assert!(ex.target_ids.iter().all(|t| !ex.retained_ids.contains(t)));
        }
    }

    #[test]
    fn examples_are_deterministic_per_seed() {
        let cat = catalog();
        let a = make_example(&cat, &mut example_rng(9, 4)).unwrap();
        let b = make_example(&cat, &mut example_rng(9, 4)).unwrap();
        assert_eq!(a, b);
        let c = make_example(&cat, &mut example_rng(9, 5)).unwrap();
        assert_ne!(a.mixture, c.mixture);
    }

    #[test]
    fn eval_examples_have_requested_target_count() {
        let cat = catalog();
        for n in 1..=3 {
            let ex = make_eval_example(&cat, n, &mut example_rng(1, n as u64)).unwrap();
            assert_eq!(ex.target_ids.len(), n);
            assert!(!ex.retained_ids.is_empty());
        }
    }

    #[test]
    fn too_few_classes_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_classes(&[1, 1], &mut rng), Err(Error::InsufficientClasses { .. })));
    }

    #[test]
    fn manifest_round_trip_with_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.tsv");
        std::fs::write(&m, "# corpus\ndog\ta.wav\ncat\tsub/b.wav\n\ndog\tc.wav\n").unwrap();
        let cat = ClassCatalog::from_manifest(&m).unwrap();
        assert_eq!(cat.counts(), vec![("cat".into(), 1), ("dog".into(), 2)]);
        assert_eq!(cat.classes["cat"][0], dir.path().join("sub/b.wav"));
        std::fs::write(&m, "no tab here\n").unwrap();
        assert!(matches!(ClassCatalog::from_manifest(&m), Err(Error::Format { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn mixture_identity_and_sir_hold(seed in 0u64..10_000) {
            let cat = catalog();
            let ex = make_example(&cat, &mut example_rng(seed, 0)).unwrap();
            for i in 0..SEGMENT_LEN {
                let mut s = ex.residual.samples[i];
                for t in &ex.targets {
                    s += t.samples[i];
                }
                prop_assert_eq!(ex.mixture.samples[i], s);
            }
            for (t, sir) in ex.targets.iter().zip(&ex.sir_db) {
                let measured = 10.0 * (t.power() / ex.residual.power()).log10();
                prop_assert!((measured - sir).abs() < 0.01);
                prop_assert!((0.0..=10.0).contains(sir));
            }
            prop_assert!(ex.mixture.peak() <= RESCALE_PEAK + 1e-6 || ex.rescale == 1.0);
        }
    }
}
