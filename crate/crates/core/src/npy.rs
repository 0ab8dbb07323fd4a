//! Reading and writing the numpy `.npy` format (version 1.0).
//!
//! Only the subset this crate exchanges is supported: little-endian `f4`/`f8`
//! payloads in C order. Anything else is rejected at load time rather than
//! converted.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_descr(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F32),
            "<f8" => Ok(Dtype::F64),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }
}

/// Parsed `.npy` header. Byte order is always little-endian and storage
/// order is always C; both are checked during parsing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArrayFileHeader {
    pub dtype: Dtype,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
}

impl ArrayFileHeader {
    pub fn element_count(&self) -> Result<usize> {
        self.shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::ShapeOverflow(self.shape.clone()))
    }

    fn payload_len(&self) -> Result<usize> {
        self.element_count()?
            .checked_mul(self.dtype.size())
            .ok_or_else(|| Error::ShapeOverflow(self.shape.clone()))
    }

    fn to_dict(&self) -> String {
        let shape = match self.shape.len() {
            1 => format!("({},)", self.shape[0]),
            _ => format!(
                "({})",
                self.shape
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        };
        format!(
            "{{'descr': '{}', 'fortran_order': {}, 'shape': {}, }}",
            self.dtype.descr(),
            if self.fortran_order { "True" } else { "False" },
            shape
        )
    }
}

/// An array as stored on disk, keeping its file dtype.
#[derive(Clone, Debug, PartialEq)]
pub enum NpyArray {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
}

impl NpyArray {
    pub fn dtype(&self) -> Dtype {
        match self {
            NpyArray::F32(_) => Dtype::F32,
            NpyArray::F64(_) => Dtype::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            NpyArray::F32(a) => a.shape(),
            NpyArray::F64(a) => a.shape(),
        }
    }

    pub fn to_f64(&self) -> ArrayD<f64> {
        match self {
            NpyArray::F32(a) => a.mapv(f64::from),
            NpyArray::F64(a) => a.clone(),
        }
    }

    pub fn into_f64(self) -> ArrayD<f64> {
        match self {
            NpyArray::F32(a) => a.mapv(f64::from),
            NpyArray::F64(a) => a,
        }
    }

    /// Bitwise equality, so NaN payloads and signed zeros compare exactly.
    pub fn bit_eq(&self, other: &NpyArray) -> bool {
        match (self, other) {
            (NpyArray::F32(a), NpyArray::F32(b)) => {
                a.shape() == b.shape() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (NpyArray::F64(a), NpyArray::F64(b)) => {
                a.shape() == b.shape() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

impl From<ArrayD<f64>> for NpyArray {
    fn from(a: ArrayD<f64>) -> Self {
        NpyArray::F64(a)
    }
}

impl From<ArrayD<f32>> for NpyArray {
    fn from(a: ArrayD<f32>) -> Self {
        NpyArray::F32(a)
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

pub fn read_header<R: Read>(r: &mut R) -> Result<ArrayFileHeader> {
    let mut preamble = [0u8; 10];
    r.read_exact(&mut preamble)
        .map_err(|_| malformed("file shorter than the npy preamble"))?;
    if &preamble[..6] != MAGIC {
        return Err(malformed("missing \\x93NUMPY magic"));
    }
    if preamble[6..8] != [1, 0] {
        return Err(malformed(format!(
            "unsupported format version {}.{}",
            preamble[6], preamble[7]
        )));
    }
    let header_len = u16::from_le_bytes([preamble[8], preamble[9]]) as usize;
    let mut raw = vec![0u8; header_len];
    r.read_exact(&mut raw)
        .map_err(|_| malformed("header truncated"))?;
    let text = std::str::from_utf8(&raw).map_err(|_| malformed("header is not ASCII"))?;
    parse_dict(text)
}

fn parse_dict(text: &str) -> Result<ArrayFileHeader> {
    let mut p = DictParser {
        s: text.trim_end_matches(['\n', ' ']).as_bytes(),
        pos: 0,
    };
    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;

    p.expect(b'{')?;
    loop {
        p.skip_ws();
        if p.eat(b'}') {
            break;
        }
        let key = p.string()?;
        p.skip_ws();
        p.expect(b':')?;
        p.skip_ws();
        match key.as_str() {
            "descr" => descr = Some(p.string()?),
            "fortran_order" => fortran = Some(p.boolean()?),
            "shape" => shape = Some(p.tuple()?),
            other => return Err(malformed(format!("unexpected key '{other}'"))),
        }
        p.skip_ws();
        if !p.eat(b',') {
            p.skip_ws();
            p.expect(b'}')?;
            break;
        }
    }
    p.skip_ws();
    if p.pos != p.s.len() {
        return Err(malformed("trailing bytes after header dict"));
    }

    let descr = descr.ok_or_else(|| malformed("missing 'descr'"))?;
    let fortran_order = fortran.ok_or_else(|| malformed("missing 'fortran_order'"))?;
    let shape = shape.ok_or_else(|| malformed("missing 'shape'"))?;
    let dtype = Dtype::from_descr(&descr)?;
    if fortran_order {
        return Err(malformed("fortran_order arrays are not supported"));
    }
    let header = ArrayFileHeader {
        dtype,
        fortran_order,
        shape,
    };
    header.payload_len()?;
    Ok(header)
}

struct DictParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl DictParser<'_> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n')) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(malformed(format!(
                "expected '{}' at byte {}",
                c as char, self.pos
            )))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(malformed(format!("expected string at byte {}", self.pos))),
        };
        self.pos += 1;
        let start = self.pos;
        while self.peek().is_some_and(|c| c != quote) {
            self.pos += 1;
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.expect(quote)?;
        Ok(out)
    }

    fn boolean(&mut self) -> Result<bool> {
        let rest = &self.s[self.pos..];
        if rest.starts_with(b"True") {
            self.pos += 4;
            Ok(true)
        } else if rest.starts_with(b"False") {
            self.pos += 5;
            Ok(false)
        } else {
            Err(malformed("expected True or False"))
        }
    }

    fn tuple(&mut self) -> Result<Vec<usize>> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(b')') {
                return Ok(dims);
            }
            let start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(malformed("expected a non-negative integer in shape"));
            }
            let digits = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
            let d = digits
                .parse::<usize>()
                .map_err(|_| Error::ShapeOverflow(dims.clone()))?;
            dims.push(d);
            self.skip_ws();
            if !self.eat(b',') {
                self.skip_ws();
                self.expect(b')')?;
                return Ok(dims);
            }
        }
    }
}

pub fn read_npy<R: Read>(r: &mut R) -> Result<NpyArray> {
    let header = read_header(r)?;
    let len = header.payload_len()?;
    let mut payload = Vec::new();
    r.take(len as u64 + 1)
        .read_to_end(&mut payload)
        .map_err(|e| malformed(format!("reading payload: {e}")))?;
    if payload.len() != len {
        return Err(malformed(format!(
            "payload is {} bytes but the header declares {} for shape {:?}",
            payload.len(),
            len,
            header.shape
        )));
    }
    let dim = IxDyn(&header.shape);
    let array = match header.dtype {
        Dtype::F32 => {
            let v = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            NpyArray::F32(ArrayD::from_shape_vec(dim, v).expect("length checked"))
        }
        Dtype::F64 => {
            let v = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            NpyArray::F64(ArrayD::from_shape_vec(dim, v).expect("length checked"))
        }
    };
    Ok(array)
}

pub fn write_npy<W: Write>(w: &mut W, array: &NpyArray) -> std::io::Result<()> {
    let header = ArrayFileHeader {
        dtype: array.dtype(),
        fortran_order: false,
        shape: array.shape().to_vec(),
    };
    let mut dict = header.to_dict();
    // preamble (10 bytes) + dict + '\n' must be a multiple of ALIGN
    let unpadded = 10 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    w.write_all(MAGIC)?;
    w.write_all(&[1, 0])?;
    w.write_all(&(dict.len() as u16).to_le_bytes())?;
    w.write_all(dict.as_bytes())?;
    // iter() walks in logical (C) order regardless of memory layout
    match array {
        NpyArray::F32(a) => {
            for v in a.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        NpyArray::F64(a) => {
            for v in a.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn load_array(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_npy(&mut BufReader::new(file))
}

pub fn load_header(path: impl AsRef<Path>) -> Result<ArrayFileHeader> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_header(&mut BufReader::new(file))
}

pub fn save_array(path: impl AsRef<Path>, array: &NpyArray) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_npy(&mut w, array)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn encode(a: &NpyArray) -> Vec<u8> {
        let mut buf = Vec::new();
        write_npy(&mut buf, a).unwrap();
        buf
    }

    #[test]
    fn header_layout_matches_numpy() {
        let a = NpyArray::F64(ArrayD::zeros(IxDyn(&[2, 3])));
        let buf = encode(&a);
        assert_eq!(&buf[..8], b"\x93NUMPY\x01\x00");
        let hlen = u16::from_le_bytes([buf[8], buf[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        let dict = std::str::from_utf8(&buf[10..10 + hlen]).unwrap();
        assert!(dict.starts_with("{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3), }"));
        assert!(dict.ends_with('\n'));
        assert_eq!(buf.len(), 10 + hlen + 6 * 8);
    }

    #[test]
    fn one_dim_shape_has_trailing_comma() {
        let a = NpyArray::F32(ArrayD::zeros(IxDyn(&[5])));
        let buf = encode(&a);
        let text = String::from_utf8_lossy(&buf[10..]);
        assert!(text.contains("'shape': (5,)"));
        let back = read_npy(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), &[5]);
    }

    #[test]
    fn f32_round_trip_is_bit_exact() {
        let a = Array::from_shape_fn(IxDyn(&[3, 4, 2, 2]), |ix| {
            (ix[0] as f32 * 1.1 + ix[1] as f32).sqrt() / 3.0
        });
        let a = NpyArray::F32(a);
        let back = read_npy(&mut encode(&a).as_slice()).unwrap();
        assert!(a.bit_eq(&back));
    }

    #[test]
    fn parses_double_quotes_and_spacing() {
        let h = parse_dict("{\"descr\":\"<f4\",\"fortran_order\":False,\"shape\":( 2 , 3 )}  \n").unwrap();
        assert_eq!(h.dtype, Dtype::F32);
        assert_eq!(h.shape, vec![2, 3]);
    }

    #[test]
    fn big_endian_is_unsupported() {
        let err = parse_dict("{'descr': '>f8', 'fortran_order': False, 'shape': (2,), }").unwrap_err();
        assert!(matches!(err, Error::UnsupportedDtype(d) if d == ">f8"));
    }

    #[test]
    fn integer_dtype_is_unsupported() {
        let err = parse_dict("{'descr': '<i8', 'fortran_order': False, 'shape': (2,), }").unwrap_err();
        assert!(matches!(err, Error::UnsupportedDtype(_)));
    }

    #[test]
    fn fortran_order_is_rejected() {
        let err = parse_dict("{'descr': '<f8', 'fortran_order': True, 'shape': (2, 2), }").unwrap_err();
        assert!(matches!(err, Error::MalformedHeader(_)));
    }

    #[test]
    fn overflowing_shape_is_rejected() {
        let err = parse_dict(
            "{'descr': '<f8', 'fortran_order': False, 'shape': (4294967296, 4294967296, 4), }",
        )
        .unwrap_err();
        assert!(matches!(err, Error::ShapeOverflow(_)));
    }

    #[test]
    fn truncated_payload_is_malformed() {
        let a = NpyArray::F64(ArrayD::ones(IxDyn(&[4, 4])));
        let buf = encode(&a);
        let err = read_npy(&mut &buf[..buf.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("malformed header"));
    }

    #[test]
    fn truncated_header_is_malformed() {
        let a = NpyArray::F64(ArrayD::ones(IxDyn(&[4, 4])));
        let buf = encode(&a);
        for cut in [0, 5, 9, 30] {
            let err = read_npy(&mut &buf[..cut]).unwrap_err();
            assert!(matches!(err, Error::MalformedHeader(_)), "cut at {cut}");
        }
    }

    #[test]
    fn bad_magic() {
        let err = read_npy(&mut &b"NOTNPY\x01\x00\x00\x00"[..]).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader(_)));
    }
}
