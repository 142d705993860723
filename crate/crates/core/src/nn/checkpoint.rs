use std::io::{ErrorKind, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{NnError, Tensor};

pub const PRM_MAGIC: &[u8; 4] = b"PRHD";
pub const PRM_VERSION: u16 = 1;

/// Writes named tensors in the `.prm` layout.
pub fn write_prm<W: Write>(mut w: W, d: u16, params: &[(String, Tensor<f64>)]) -> Result<(), NnError> {
    w.write_all(PRM_MAGIC)?;
    w.write_u16::<LittleEndian>(PRM_VERSION)?;
    w.write_u16::<LittleEndian>(d)?;
    for (name, t) in params {
        let len = u16::try_from(name.len()).map_err(|_| NnError::Checkpoint(format!("name too long: {name}")))?;
        w.write_u16::<LittleEndian>(len)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(t.shape().len() as u8)?;
        for &dim in t.shape() {
            w.write_u32::<LittleEndian>(dim as u32)?;
        }
        for &x in t.data() {
            w.write_f64::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a `.prm` stream; returns `d` and the tensors in file order.
pub fn read_prm<R: Read>(mut r: R) -> Result<(u16, Vec<(String, Tensor<f64>)>), NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PRM_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != PRM_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let d = r.read_u16::<LittleEndian>()?;
    let mut params = Vec::new();
    loop {
        let len = match r.read_u16::<LittleEndian>() {
            Ok(n) => n,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let mut name = vec![0u8; usize::from(len)];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| NnError::Checkpoint("name is not UTF-8".into()))?;
        let rank = r.read_u8()?;
        let shape = (0..rank)
            .map(|_| r.read_u32::<LittleEndian>().map(|x| x as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut data = vec![0f64; n];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(NnError::Checkpoint(format!("non-finite value in {name}")));
        }
        params.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok((d, params))
}
