//! Binary checkpoint format.
//!
//! ```text
//! magic     8 bytes  "ADMACNET"
//! version   u32 LE
//! count     u32 LE   number of tensors
//! repeated count times:
//!   name_len u32 LE, name bytes (UTF-8)
//!   ndim     u32 LE, dims u64 LE × ndim
//!   payload  f64 LE × prod(dims)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ADMACNET";
pub const VERSION: u32 = 1;

pub fn write_store<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.named_tensors() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_store<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let n = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let shape = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_bits(read_u64(&mut r)?));
        }
        store.add(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_store(store, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let f = std::fs::File::open(path).map_err(|source| Error::Load { path: path.to_path_buf(), source })?;
    read_store(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_bit_exactly(
            tensors in prop::collection::vec(
                (1usize..4, 1usize..5).prop_flat_map(|(r, c)| {
                    prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, r * c)
                        .prop_map(move |d| (vec![r, c], d))
                }),
                1..5,
            )
        ) {
            let mut store = ParamStore::new();
            for (i, (shape, data)) in tensors.into_iter().enumerate() {
                store.add(format!("t{i}"), Tensor::new(shape, data).unwrap()).unwrap();
            }
            let mut buf = Vec::new();
            write_store(&store, &mut buf).unwrap();
            let back = read_store(buf.as_slice()).unwrap();
            prop_assert!(store.same_values(&back));
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"NOTACKPT\x01\0\0\0\0\0\0\0".to_vec();
        assert!(matches!(read_store(buf.as_slice()), Err(Error::Format(_))));
    }
}
