//! Binary parameter container.
//!
//! Layout (all integers little-endian): magic `PRDMCKPT`, `u32` version,
//! `u32` tensor count, then per tensor a `u32`-length UTF-8 name, a `u32`
//! rank, `u64` dimensions and the `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::tensor::{ParamSet, Tensor};

const MAGIC: &[u8; 8] = b"PRDMCKPT";
const VERSION: u32 = 1;

/// True when `bytes` starts with the checkpoint magic.
pub fn is_checkpoint(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

pub fn write_params<W: Write>(params: &ParamSet, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (_, name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Model(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamSet> {
    if &read_array::<8, _>(&mut r)? != MAGIC {
        return Err(Error::Model("not a parameter checkpoint".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Model(format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?);
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Model(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Model("parameter name is not UTF-8".into()))?;
        let rank = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let shape = (0..rank)
            .map(|_| read_array::<8, _>(&mut r).map(|b| u64::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| read_array::<8, _>(&mut r).map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        params.insert(name, Tensor::new(shape, values)?);
    }
    Ok(params)
}

pub fn save_params(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_params(params, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::file(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    read_params(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = ParamSet::new();
        p.insert("emb", Tensor::uniform(vec![7, 5], 0.08, &mut rng));
        p.insert(
            "bias",
            Tensor::new(vec![3], vec![f64::MIN_POSITIVE, -0.0, 1e300]).unwrap(),
        );
        p.insert("scalar", Tensor::scalar(std::f64::consts::PI));
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        let back = read_params(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for ((_, n1, t1), (_, n2, t2)) in p.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let bits = |t: &Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t1), bits(t2));
        }
        let mut again = Vec::new();
        write_params(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_params(&b"nope"[..]).is_err());
        let mut buf = Vec::new();
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(vec![4]));
        write_params(&p, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_params(buf.as_slice()).is_err());
    }
}
