//! Binary checkpoint container.
//!
//! Layout (little-endian): `"ATTN"`, version `u32`, header length `u32`,
//! UTF-8 `key=value` header, then records until end of file:
//! name length `u32`, name bytes, dtype tag `u8` (0 = float32), rank `u32`,
//! `rank` dims as `u32`, raw float32 payload.

use super::Tensor;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ATTN";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn write_checkpoint(ck: &Checkpoint, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(ck.header.len() as u32).to_le_bytes())?;
    w.write_all(ck.header.as_bytes())?;
    for (name, t) in &ck.tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[DTYPE_F32])?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for d in &t.shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad checkpoint magic"));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let hlen = c.u32("header length")? as usize;
    let hpos = c.pos;
    let header = std::str::from_utf8(c.take(hlen, "header")?)
        .map_err(|_| Error::format(hpos as u64, "header is not UTF-8"))?
        .to_owned();
    let mut tensors = Vec::new();
    while c.pos < bytes.len() {
        let start = c.pos as u64;
        let nlen = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(nlen, "name")?).map_err(|_| Error::format(start, "tensor name is not UTF-8"))?.to_owned();
        let tag_pos = c.pos as u64;
        let dtype = c.take(1, "dtype")?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::format(tag_pos, format!("unknown dtype tag {dtype}")));
        }
        let rank = c.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::format(tag_pos + 1, format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = c.take(n.checked_mul(4).ok_or_else(|| Error::format(start, "tensor too large"))?, "payload")?;
        let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        tensors.push((name, Tensor { shape, data }));
    }
    Ok(Checkpoint { header, tensors })
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let mut bytes = Vec::new();
    write_checkpoint(ck, &mut bytes).map_err(|e| Error::io(path, e))?;
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_bit_exact(
            header in "[a-z_=0-9\n]{0,40}",
            tensors in proptest::collection::vec(
                ("[a-z.0-9]{1,12}", proptest::collection::vec(1usize..4, 0..3))
                    .prop_flat_map(|(n, shape)| {
                        let len: usize = shape.iter().product();
                        (Just(n), Just(shape), proptest::collection::vec(any::<u32>(), len))
                    }),
                0..5)
        ) {
            let ck = Checkpoint {
                header,
                tensors: tensors.into_iter().map(|(n, shape, bits)| {
                    (n, Tensor { shape, data: bits.into_iter().map(f32::from_bits).collect() })
                }).collect(),
            };
            let mut bytes = Vec::new();
            write_checkpoint(&ck, &mut bytes).unwrap();
            let back = read_checkpoint(&bytes).unwrap();
            prop_assert_eq!(back.header, ck.header);
            prop_assert_eq!(back.tensors.len(), ck.tensors.len());
            for ((na, ta), (nb, tb)) in back.tensors.iter().zip(&ck.tensors) {
                prop_assert_eq!(na, nb);
                prop_assert_eq!(&ta.shape, &tb.shape);
                let ba: Vec<u32> = ta.data.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u32> = tb.data.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ba, bb);
            }
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let ck = Checkpoint { header: "a=1".into(), tensors: vec![("w".into(), Tensor::new(vec![2], vec![1.0, 2.0]).unwrap())] };
        let mut bytes = Vec::new();
        write_checkpoint(&ck, &mut bytes).unwrap();
        match read_checkpoint(&bytes[..bytes.len() - 3]) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_checkpoint(b"NOPE"), Err(Error::Format { offset: 0, .. })));
    }
}
