//! Binary checkpoint format.
//!
//! ```text
//! key=value\n            optional header lines
//! CGAN1\n                magic
//! name ndim d0 .. dk\n   per tensor, names in lexicographic order
//! <f32 LE × numel>       raw row-major payload, no padding
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ParamKind, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &str = "CGAN1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub header: Vec<(String, String)>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_store(header: Vec<(String, String)>, store: &ParamStore) -> Self {
        let tensors = store
            .iter()
            .map(|(name, p)| (name.clone(), p.value.clone()))
            .collect();
        Self { header, tensors }
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for (k, v) in &self.header {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') || k == MAGIC {
                return Err(Error::Checkpoint(format!("invalid header entry `{k}={v}`")));
            }
            out.extend_from_slice(format!("{k}={v}\n").as_bytes());
        }
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        for (name, t) in &self.tensors {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::Checkpoint(format!("invalid tensor name `{name}`")));
            }
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            out.extend_from_slice(format!("{name} {} {}\n", t.ndim(), dims.join(" ")).as_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut header = Vec::new();
        loop {
            let line = next_line(bytes, &mut pos)?;
            if line == MAGIC {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad header line `{line}`")))?;
            header.push((k.to_string(), v.to_string()));
        }
        let mut tensors = BTreeMap::new();
        let mut last: Option<String> = None;
        while pos < bytes.len() {
            let line = next_line(bytes, &mut pos)?;
            let mut fields = line.split(' ');
            let name = fields.next().unwrap_or_default().to_string();
            let ndim: usize = parse_field(fields.next(), line)?;
            let shape: Vec<usize> = (0..ndim)
                .map(|_| parse_field(fields.next(), line))
                .collect::<Result<_>>()?;
            if fields.next().is_some() || ndim == 0 {
                return Err(Error::Checkpoint(format!("bad tensor line `{line}`")));
            }
            if last.as_ref().is_some_and(|l| *l >= name) {
                return Err(Error::Checkpoint(format!("tensor `{name}` out of order")));
            }
            let numel: usize = shape.iter().product();
            let end = pos + 4 * numel;
            if end > bytes.len() {
                return Err(Error::Checkpoint(format!("truncated payload for `{name}`")));
            }
            let data = bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            pos = end;
            tensors.insert(name.clone(), Tensor::new(shape, data)?);
            last = Some(name);
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Copies every tensor into `store`, which must hold exactly the same
    /// names and shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let expected: Vec<&String> = store.iter().map(|(n, _)| n).collect();
        let found: Vec<&String> = self.tensors.keys().collect();
        if expected != found {
            let missing: Vec<_> = expected.iter().filter(|n| !self.tensors.contains_key(**n)).collect();
            return Err(Error::Checkpoint(format!(
                "tensor set does not match the model (missing {missing:?})"
            )));
        }
        for (name, t) in &self.tensors {
            let slot = store.value_mut(name)?;
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(())
    }

    /// A store holding the checkpoint tensors, all marked trainable.
    pub fn to_store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            store.insert(name.clone(), t.clone(), ParamKind::Trainable);
        }
        store
    }
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::Checkpoint("non-ASCII header".into()))
}

fn parse_field(field: Option<&str>, line: &str) -> Result<usize> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("bad tensor line `{line}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut tensors = BTreeMap::new();
        tensors.insert("a.bias".to_string(), Tensor::new([2], vec![1.5, -2.0]).unwrap());
        tensors.insert("a.weight".to_string(), Tensor::new([1, 2], vec![0.25, 3.0]).unwrap());
        Checkpoint {
            header: vec![("kind".into(), "dcgan".into())],
            tensors,
        }
    }

    #[test]
    fn exact_byte_layout() {
        let bytes = sample().encode().unwrap();
        let mut want = b"kind=dcgan\nCGAN1\na.bias 1 2\n".to_vec();
        want.extend(1.5f32.to_le_bytes());
        want.extend((-2.0f32).to_le_bytes());
        want.extend(b"a.weight 2 1 2\n");
        want.extend(0.25f32.to_le_bytes());
        want.extend(3.0f32.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn decode_inverts_encode() {
        let ck = sample();
        let bytes = ck.encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let bytes = sample().encode().unwrap();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::decode(b"no magic here").is_err());
        assert!(Checkpoint::decode(b"CGAN1\nx two 1\n").is_err());
    }
}
