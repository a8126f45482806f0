//! Binary parameter files.
//!
//! Layout (little endian): the 8-byte magic `FSSPPRM\0`, a `u32` format
//! version, a `u32` parameter count, then per parameter a `u32` name length,
//! the UTF-8 name, a partition byte (0 shared, 1 local), a rank byte, one
//! `u64` per dimension and the row-major `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::tensor::{ParamRegistry, Partition, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FSSPPRM\0";
pub const FORMAT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Data(format!("checkpoint stream: {e}"))
}

pub fn write_params<W: Write>(registry: &ParamRegistry, partition: Option<Partition>, mut w: W) -> Result<()> {
    let selected: Vec<_> = registry
        .iter()
        .filter(|p| partition.is_none_or(|want| p.partition == want))
        .collect();
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(selected.len() as u32).to_le_bytes()).map_err(io_err)?;
    for p in selected {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        let tag = match p.partition {
            Partition::Shared => 0u8,
            Partition::Local => 1u8,
        };
        w.write_all(&[tag, p.tensor.shape().len() as u8]).map_err(io_err)?;
        for &d in p.tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
        }
        for v in p.tensor.values() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamRegistry> {
    fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        r.read_exact(&mut buf).map_err(io_err)?;
        Ok(buf)
    }
    if &take::<8, _>(&mut r)? != MAGIC {
        return Err(Error::Data("not a parameter file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported parameter file version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut r)?);
    let mut registry = ParamRegistry::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|_| Error::Data("parameter name is not UTF-8".into()))?;
        let [tag, rank] = take::<2, _>(&mut r)?;
        let partition = match tag {
            0 => Partition::Shared,
            1 => Partition::Local,
            t => return Err(Error::Data(format!("bad partition tag {t} for {name:?}"))),
        };
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(take(&mut r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| Ok(f64::from_le_bytes(take(&mut r)?)))
            .collect::<Result<Vec<_>>>()?;
        registry.insert(name, partition, Tensor::new(shape, values)?)?;
    }
    Ok(registry)
}

pub fn save_params(registry: &ParamRegistry, partition: Option<Partition>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_params(registry, partition, &mut buf)?;
    fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamRegistry> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    read_params(bytes.as_slice())
}

/// Copies every tensor of `source` into `target` by name; names must exist
/// in `target` with the same shape and partition.
pub fn restore_into(target: &mut ParamRegistry, source: &ParamRegistry) -> Result<()> {
    for p in source.iter() {
        let dst = target.require(&p.name)?;
        if dst.partition != p.partition {
            return Err(Error::Data(format!("parameter {:?} changed partition", p.name)));
        }
    }
    target.assign(&source.snapshot(None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut reg = ParamRegistry::new();
        reg.insert(
            "a",
            Partition::Shared,
            Tensor::new(vec![2, 2], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
        )
        .unwrap();
        reg.insert(
            "b",
            Partition::Local,
            Tensor::new(vec![1, 2, 3], (0..6).map(|i| i as f64 / 7.0).collect()).unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_params(&reg, None, &mut buf).unwrap();
        let back = read_params(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (x, y) in reg.iter().zip(back.iter()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.partition, y.partition);
            assert_eq!(x.tensor.shape(), y.tensor.shape());
            let bits = |t: &Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x.tensor), bits(&y.tensor));
        }
        let mut again = Vec::new();
        write_params(&back, None, &mut again).unwrap();
        assert_eq!(buf, again);

        let mut shared = Vec::new();
        write_params(&reg, Some(Partition::Shared), &mut shared).unwrap();
        assert_eq!(read_params(shared.as_slice()).unwrap().names(None), vec!["a"]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_params(&b"NOTMAGIC\x01\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_params(&ParamRegistry::new(), None, &mut buf).unwrap();
        buf[8] = 9;
        assert!(read_params(buf.as_slice()).is_err());
    }
}
