//! Example shards on disk: `NNNN.mix.wav`, `NNNN.res.wav` and a `meta.txt`
//! of `key=value` records.

use super::MixtureExample;
use crate::audio::{read_wav, write_wav, WavEncoding, Waveform};
use crate::error::{Error, Result};
use std::path::Path;

pub const META_FILE: &str = "meta.txt";

/// An example read back from a shard directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardExample {
    pub index: usize,
    pub mixture: Waveform,
    pub residual: Waveform,
    pub target_ids: Vec<String>,
    pub retained_ids: Vec<String>,
    pub sir_db: Vec<f64>,
}

fn join_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn write_shards(dir: impl AsRef<Path>, examples: &[MixtureExample]) -> Result<()> {
    let shards: Vec<ShardExample> = examples.iter().enumerate().map(|(i, ex)| ShardExample { index: i, ..ex.into() }).collect();
    write_shard_examples(dir, &shards)
}

/// Writes examples under their own indices.
pub fn write_shard_examples(dir: impl AsRef<Path>, examples: &[ShardExample]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = String::new();
    for ex in examples {
        let i = ex.index;
        write_wav(dir.join(format!("{i:04}.mix.wav")), &ex.mixture, WavEncoding::Float32)?;
        write_wav(dir.join(format!("{i:04}.res.wav")), &ex.residual, WavEncoding::Float32)?;
        meta.push_str(&format!(
            "index={i} targets={} retained={} sir_db={}\n",
            join_list(&ex.target_ids),
            join_list(&ex.retained_ids),
            join_list(&ex.sir_db)
        ));
    }
    let p = dir.join(META_FILE);
    std::fs::write(&p, meta).map_err(|e| Error::io(&p, e))
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect()
}

pub fn read_shards(dir: impl AsRef<Path>) -> Result<Vec<ShardExample>> {
    let dir = dir.as_ref();
    let p = dir.join(META_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        if !line.trim().is_empty() {
            let mut index = None;
            let (mut targets, mut retained, mut sir) = (Vec::new(), Vec::new(), Vec::new());
            for field in line.split_whitespace() {
                let (k, v) = field.split_once('=').ok_or_else(|| Error::format(offset, format!("field {field:?} is not key=value")))?;
                match k {
                    "index" => index = Some(v.parse::<usize>().map_err(|_| Error::format(offset, "bad index"))?),
                    "targets" => targets = split_list(v),
                    "retained" => retained = split_list(v),
                    "sir_db" => sir = split_list(v).iter().map(|x| x.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| Error::format(offset, "bad sir_db"))?,
                    _ => {}
                }
            }
            let index = index.ok_or_else(|| Error::format(offset, "missing index"))?;
            if targets.is_empty() {
                return Err(Error::format(offset, "example without targets"));
            }
            out.push(ShardExample {
                index,
                mixture: read_wav(dir.join(format!("{index:04}.mix.wav")))?,
                residual: read_wav(dir.join(format!("{index:04}.res.wav")))?,
                target_ids: targets,
                retained_ids: retained,
                sir_db: sir,
            });
        }
        offset += line.len() as u64 + 1;
    }
    out.sort_by_key(|e| e.index);
    Ok(out)
}

impl From<&MixtureExample> for ShardExample {
    fn from(ex: &MixtureExample) -> Self {
        ShardExample {
            index: 0,
            mixture: ex.mixture.clone(),
            residual: ex.residual.clone(),
            target_ids: ex.target_ids.clone(),
            retained_ids: ex.retained_ids.clone(),
            sir_db: ex.sir_db.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{example_rng, make_eval_example, toy_catalog};

    #[test]
    fn shards_round_trip() {
        let cat = toy_catalog(&["tone", "hum", "hiss"], 1, 4.0, 2).unwrap();
        let exs: Vec<_> = (0..3).map(|i| make_eval_example(&cat, 1 + (i % 2), &mut example_rng(4, i as u64)).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        write_shards(dir.path(), &exs).unwrap();
        let back = read_shards(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (i, (b, e)) in back.iter().zip(&exs).enumerate() {
            assert_eq!(b.index, i);
            assert_eq!(b.mixture, e.mixture);
            assert_eq!(b.residual, e.residual);
            assert_eq!(b.target_ids, e.target_ids);
            assert_eq!(b.sir_db, e.sir_db);
        }
    }
}
