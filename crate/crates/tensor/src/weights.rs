//! Versioned binary weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "VXNW"
//! version  u16      1
//! width    u8       bytes per element (4 = f32, 8 = f64)
//! reserved u8       0
//! count    u32      number of named tensors
//! count x { name_len u16, name utf-8, rank u8, dims u32 x rank }
//! count x { data: product(dims) little-endian floats }
//! ```

use crate::{Result, Scalar, Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"VXNW";
pub const VERSION: u16 = 1;

pub fn encode<T: Scalar>(tensors: &[(&str, &Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::BYTES as u8);
    out.push(0);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for (_, t) in tensors {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| TensorError::WeightFormat(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(TensorError::WeightFormat("bad magic".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(TensorError::WeightFormat(format!("unsupported version {version}")));
    }
    let width = r.u8("element width")? as usize;
    if width != T::BYTES {
        return Err(TensorError::WeightFormat(format!(
            "file stores {width}-byte floats, expected {}",
            T::BYTES
        )));
    }
    r.u8("reserved")?;
    let count = r.u32("tensor count")? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| TensorError::WeightFormat("name is not utf-8".into()))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        manifest.push((name, dims));
    }
    let mut out = Vec::with_capacity(count);
    for (name, dims) in manifest {
        let n: usize = dims.iter().product();
        let raw = r.take(n * width, &name)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        out.push((name, Tensor::from_vec(&dims, data)?));
    }
    if r.pos != bytes.len() {
        return Err(TensorError::WeightFormat("trailing bytes".into()));
    }
    Ok(out)
}
