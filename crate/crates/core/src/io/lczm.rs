//! `LCZM` tensor container.
//!
//! ```text
//! magic    4 bytes  "LCZM"
//! version  u32 LE
//! count    u32 LE
//! count × {
//!     name_len u16 LE, name (UTF-8)
//!     rank     u8
//!     dims     rank × u32 LE
//!     payload  prod(dims) × f32 LE, row-major
//! }
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::IoError;

pub const LCZM_MAGIC: &[u8; 4] = b"LCZM";
pub const LCZM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, values: Vec<f32>) -> Self {
        let t = Self {
            name: name.into(),
            dims,
            values,
        };
        debug_assert_eq!(t.element_count(), Some(t.values.len()));
        t
    }

    /// Narrows a 64-bit matrix to the persisted 32-bit layout.
    pub fn from_matrix(name: impl Into<String>, m: &Array2<f64>) -> Self {
        let (r, c) = m.dim();
        Self::new(
            name,
            vec![r as u32, c as u32],
            m.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn from_slice(name: impl Into<String>, values: &[f64]) -> Self {
        Self::new(
            name,
            vec![values.len() as u32],
            values.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn to_matrix(&self) -> Result<Array2<f64>, IoError> {
        let (r, c) = match self.dims.as_slice() {
            [r, c] => (*r as usize, *c as usize),
            [n] => (1, *n as usize),
            [] => (1, 1),
            _ => {
                return Err(IoError::Format(format!(
                    "tensor `{}` has rank {}, expected <= 2",
                    self.name,
                    self.dims.len()
                )))
            }
        };
        Array2::from_shape_vec((r, c), self.to_f64())
            .map_err(|e| IoError::Format(format!("tensor `{}`: {e}", self.name)))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    fn element_count(&self) -> Option<usize> {
        self.dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
    }
}

/// Ordered tensor list with by-name lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorSet {
    pub tensors: Vec<NamedTensor>,
}

impl TensorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: NamedTensor) {
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor, IoError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| IoError::MissingTensor(name.to_string()))
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a NamedTensor> {
        self.tensors
            .iter()
            .filter(move |t| t.name.starts_with(prefix))
    }
}

pub fn encode_tensors<W: Write>(set: &TensorSet, mut w: W) -> Result<(), IoError> {
    w.write_all(LCZM_MAGIC)?;
    w.write_all(&LCZM_VERSION.to_le_bytes())?;
    let count =
        u32::try_from(set.tensors.len()).map_err(|_| IoError::Format("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for t in &set.tensors {
        let name = t.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| IoError::Format(format!("tensor name too long: {}", t.name)))?;
        let rank = u8::try_from(t.dims.len())
            .map_err(|_| IoError::Format(format!("tensor `{}` rank too large", t.name)))?;
        if t.element_count() != Some(t.values.len()) {
            return Err(IoError::Format(format!(
                "tensor `{}`: dims {:?} do not match {} values",
                t.name,
                t.dims,
                t.values.len()
            )));
        }
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[rank])?;
        for d in &t.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &t.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.buf.len() < n {
            return Err(IoError::Io(std::io::Error::new(
                ErrorKind::UnexpectedEof,
                format!(
                    "truncated LCZM data: needed {n} bytes, {} left",
                    self.buf.len()
                ),
            )));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], IoError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }
}

/// Decodes an in-memory `LCZM` image. Safe on arbitrary input: allocation is
/// bounded by the number of bytes actually present.
pub fn decode_tensors(bytes: &[u8]) -> Result<TensorSet, IoError> {
    let mut cur = Cursor { buf: bytes };
    let magic = cur.array::<4>()?;
    if &magic != LCZM_MAGIC {
        return Err(IoError::Format(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(cur.array()?);
    if version != LCZM_VERSION {
        return Err(IoError::Format(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(cur.array()?) as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(cur.array()?) as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| IoError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(IoError::Format(format!("duplicate tensor `{name}`")));
        }
        let rank = cur.array::<1>()?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(cur.array()?));
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| IoError::Format(format!("tensor `{name}` dims overflow")))?;
        let payload = cur.take(n)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(NamedTensor { name, dims, values });
    }
    if !cur.buf.is_empty() {
        return Err(IoError::Format(format!(
            "{} trailing bytes after last tensor",
            cur.buf.len()
        )));
    }
    Ok(TensorSet { tensors })
}

/// Encodes `set` into a file, creating missing parent directories.
pub fn save_model(set: &TensorSet, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    encode_tensors(set, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TensorSet, IoError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_tensors(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(set: &TensorSet) -> Vec<u8> {
        let mut buf = Vec::new();
        encode_tensors(set, &mut buf).unwrap();
        buf
    }

    #[test]
    fn two_by_two_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lczm");
        let mut set = TensorSet::new();
        set.push(NamedTensor::new("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        save_model(&set, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.get("w").unwrap().to_matrix().unwrap()[[1, 0]], 3.0);
    }

    #[test]
    fn empty_list_is_a_valid_file() {
        let bytes = encode(&TensorSet::new());
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[..4], b"LCZM");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &0u32.to_le_bytes());
        assert!(decode_tensors(&bytes).unwrap().tensors.is_empty());
    }

    #[test]
    fn exact_byte_layout() {
        let mut set = TensorSet::new();
        set.push(NamedTensor::new("ab", vec![1], vec![1.5]));
        let bytes = encode(&set);
        let mut expected = b"LCZM".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u16.to_le_bytes());
        expected.extend(b"ab");
        expected.push(1);
        expected.extend(1u32.to_le_bytes());
        expected.extend(1.5f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&TensorSet::new());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_tensors(&bytes), Err(IoError::Format(_))));
        let mut bytes = encode(&TensorSet::new());
        bytes[4] = 9;
        assert!(matches!(decode_tensors(&bytes), Err(IoError::Format(_))));
    }

    #[test]
    fn truncated_payload_is_an_io_error() {
        let mut set = TensorSet::new();
        set.push(NamedTensor::new("w", vec![3], vec![1.0, 2.0, 3.0]));
        let bytes = encode(&set);
        for cut in 0..bytes.len() {
            match decode_tensors(&bytes[..cut]) {
                Err(IoError::Io(e)) => assert_eq!(e.kind(), ErrorKind::UnexpectedEof),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn huge_declared_dims_do_not_allocate() {
        let mut bytes = b"LCZM".to_vec();
        bytes.extend(1u32.to_le_bytes());
        bytes.extend(u32::MAX.to_le_bytes());
        bytes.extend(1u16.to_le_bytes());
        bytes.push(b'x');
        bytes.push(3);
        for _ in 0..3 {
            bytes.extend(u32::MAX.to_le_bytes());
        }
        assert!(decode_tensors(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            tensors in prop::collection::vec(
                ("[a-z/_]{0,12}", prop::collection::vec(0u32..4, 0..3))
                    .prop_flat_map(|(name, dims)| {
                        let n: usize = dims.iter().map(|&d| d as usize).product();
                        (Just(name), Just(dims), prop::collection::vec(any::<u32>(), n))
                    }),
                0..5,
            )
        ) {
            let mut set = TensorSet::new();
            let mut names = HashSet::new();
            for (i, (name, dims, bits)) in tensors.into_iter().enumerate() {
                let name = format!("{name}{i}");
                names.insert(name.clone());
                set.push(NamedTensor::new(name, dims, bits.into_iter().map(f32::from_bits).collect()));
            }
            let back = decode_tensors(&encode(&set)).unwrap();
            prop_assert_eq!(back.tensors.len(), set.tensors.len());
            for (a, b) in back.tensors.iter().zip(&set.tensors) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.dims, &b.dims);
                let abits: Vec<u32> = a.values.iter().map(|v| v.to_bits()).collect();
                let bbits: Vec<u32> = b.values.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(abits, bbits);
            }
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode_tensors(&bytes);
            let mut prefixed = b"LCZM\x01\x00\x00\x00".to_vec();
            prefixed.extend(bytes);
            let _ = decode_tensors(&prefixed);
        }
    }
}
