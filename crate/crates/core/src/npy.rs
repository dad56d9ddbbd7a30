//! NPY v1.0 tensor files.
//!
//! Only little-endian `<f8` and `<c16` arrays stored with
//! `fortran_order: True` are accepted, which makes the on-disk layout the
//! same column-major buffer the tensors use. Files written here are
//! readable by `numpy.load`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Element};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

/// Element types with an NPY encoding.
pub trait NpyElement: Element {
    const DESCR: &'static str;
    const SIZE: usize;

    fn put(self, out: &mut Vec<u8>);
    fn take(bytes: &[u8]) -> Self;
}

impl NpyElement for f64 {
    const DESCR: &'static str = "<f8";
    const SIZE: usize = 8;

    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn take(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

impl NpyElement for Complex64 {
    const DESCR: &'static str = "<c16";
    const SIZE: usize = 16;

    fn put(self, out: &mut Vec<u8>) {
        self.re.put(out);
        self.im.put(out);
    }

    fn take(bytes: &[u8]) -> Self {
        Complex64::new(f64::take(&bytes[..8]), f64::take(&bytes[8..16]))
    }
}

/// Element buffer of a file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

/// Any supported array, of any number of dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

#[derive(Debug, PartialEq)]
struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Npy(msg.into())
}

fn header_text(descr: &str, shape: &[usize]) -> Vec<u8> {
    let dims = match shape {
        [n] => format!("({n},)"),
        _ => format!("({})", shape.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut h = format!("{{'descr': '{descr}', 'fortran_order': True, 'shape': {dims}, }}").into_bytes();
    let fixed = MAGIC.len() + 2 + 2;
    let total = (fixed + h.len() + 1).div_ceil(ALIGN) * ALIGN;
    h.resize(total - fixed - 1, b' ');
    h.push(b'\n');
    h
}

/// Writes an array of any shape.
pub fn write_array<T: NpyElement, W: Write>(mut w: W, shape: &[usize], data: &[T]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(Error::ShapeMismatch(format!("shape {shape:?} holds {numel} elements, buffer has {}", data.len())));
    }
    let header = header_text(T::DESCR, shape);
    let len = u16::try_from(header.len()).map_err(|_| bad("header does not fit a version 1.0 file"))?;
    w.write_all(MAGIC)?;
    w.write_all(&[1, 0])?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(data.len() * T::SIZE);
    for &v in data {
        v.put(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn skip_ws(s: &[u8], mut i: usize) -> usize {
    while i < s.len() && s[i].is_ascii_whitespace() {
        i += 1;
    }
    i
}

fn parse_string(s: &[u8], i: usize) -> Result<(String, usize)> {
    let q = *s.get(i).ok_or_else(|| bad("header ends inside a key"))?;
    if q != b'\'' && q != b'"' {
        return Err(bad("expected a quoted string in the header"));
    }
    let end = s[i + 1..].iter().position(|&c| c == q).ok_or_else(|| bad("unterminated string in header"))?;
    let text = std::str::from_utf8(&s[i + 1..i + 1 + end]).map_err(|_| bad("header is not ASCII"))?;
    Ok((text.to_string(), i + end + 2))
}

/// Parses the Python dict literal of a header. Only the three standard keys
/// are recognised.
fn parse_header(text: &[u8]) -> Result<Header> {
    let mut i = skip_ws(text, 0);
    if text.get(i) != Some(&b'{') {
        return Err(bad("header is not a dict"));
    }
    i += 1;
    let (mut descr, mut fortran, mut shape) = (None, None, None);
    loop {
        i = skip_ws(text, i);
        match text.get(i) {
            Some(b'}') => break,
            Some(b',') => {
                i += 1;
                continue;
            }
            None => return Err(bad("unterminated header dict")),
            _ => {}
        }
        let (key, next) = parse_string(text, i)?;
        i = skip_ws(text, next);
        if text.get(i) != Some(&b':') {
            return Err(bad(format!("missing ':' after key '{key}'")));
        }
        i = skip_ws(text, i + 1);
        match key.as_str() {
            "descr" => {
                let (v, next) = parse_string(text, i)?;
                descr = Some(v);
                i = next;
            }
            "fortran_order" => {
                if text[i..].starts_with(b"True") {
                    fortran = Some(true);
                    i += 4;
                } else if text[i..].starts_with(b"False") {
                    fortran = Some(false);
                    i += 5;
                } else {
                    return Err(bad("fortran_order must be True or False"));
                }
            }
            "shape" => {
                if text.get(i) != Some(&b'(') {
                    return Err(bad("shape must be a tuple"));
                }
                let end = text[i..].iter().position(|&c| c == b')').ok_or_else(|| bad("unterminated shape tuple"))?;
                let inner = std::str::from_utf8(&text[i + 1..i + end]).map_err(|_| bad("header is not ASCII"))?;
                let dims = inner
                    .split(',')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(|t| t.trim_end_matches('L').parse::<usize>().map_err(|_| bad(format!("bad dimension '{t}'"))))
                    .collect::<Result<Vec<_>>>()?;
                shape = Some(dims);
                i += end + 1;
            }
            other => return Err(bad(format!("unexpected header key '{other}'"))),
        }
    }
    Ok(Header {
        descr: descr.ok_or_else(|| bad("header lacks 'descr'"))?,
        fortran_order: fortran.ok_or_else(|| bad("header lacks 'fortran_order'"))?,
        shape: shape.ok_or_else(|| bad("header lacks 'shape'"))?,
    })
}

fn decode<T: NpyElement>(raw: &[u8]) -> Vec<T> {
    raw.chunks_exact(T::SIZE).map(T::take).collect()
}

/// Reads an array of any shape. Versions 1.0 through 3.0 of the container
/// are accepted since they differ only in the header length field.
pub fn read_array<R: Read>(mut r: R) -> Result<NpyArray> {
    let mut pre = [0u8; 8];
    r.read_exact(&mut pre).map_err(|_| bad("file is too short for an NPY preamble"))?;
    if &pre[..6] != MAGIC {
        return Err(bad("missing \\x93NUMPY magic"));
    }
    let hlen = match pre[6] {
        1 => {
            let mut b = [0u8; 2];
            r.read_exact(&mut b)?;
            u16::from_le_bytes(b) as usize
        }
        2 | 3 => {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            u32::from_le_bytes(b) as usize
        }
        v => return Err(bad(format!("unsupported format version {v}.{}", pre[7]))),
    };
    let mut text = vec![0u8; hlen];
    r.read_exact(&mut text).map_err(|_| bad("truncated header"))?;
    let h = parse_header(&text)?;
    let numel: usize = h.shape.iter().product();
    let size = match h.descr.as_str() {
        "<f8" => 8,
        "<c16" => 16,
        d => return Err(bad(format!("unsupported dtype '{d}', expected '<f8' or '<c16'"))),
    };
    if !h.fortran_order && h.shape.iter().filter(|&&n| n > 1).count() > 1 {
        return Err(bad("C-order arrays are not supported; save with fortran_order=True (e.g. np.asfortranarray)"));
    }
    let mut raw = vec![0u8; numel * size];
    r.read_exact(&mut raw).map_err(|_| bad(format!("data section shorter than {} bytes", raw.len())))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after the data section"));
    }
    let data = if size == 8 { NpyData::Real(decode(&raw)) } else { NpyData::Complex(decode(&raw)) };
    Ok(NpyArray { shape: h.shape, data })
}

pub fn read_npy(path: &Path) -> Result<NpyArray> {
    read_array(BufReader::new(File::open(path)?))
}

/// Writes a tensor as a Fortran-ordered NPY file.
pub fn write_tensor<T: NpyElement>(path: &Path, x: &DenseTensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_array(&mut w, x.shape(), x.data())?;
    w.flush()?;
    Ok(())
}

/// Reads a real tensor. Complex files are rejected rather than truncated.
pub fn read_real_tensor(path: &Path) -> Result<DenseTensor<f64>> {
    let a = read_npy(path)?;
    match a.data {
        NpyData::Real(v) => DenseTensor::new(a.shape, v),
        NpyData::Complex(_) => Err(bad(format!("{} holds complex data, a real tensor is required", path.display()))),
    }
}

/// Reads a complex tensor; real files are promoted.
pub fn read_complex_tensor(path: &Path) -> Result<DenseTensor<Complex64>> {
    let a = read_npy(path)?;
    match a.data {
        NpyData::Real(v) => DenseTensor::new(a.shape, v.into_iter().map(|x| Complex64::new(x, 0.0)).collect()),
        NpyData::Complex(v) => DenseTensor::new(a.shape, v),
    }
}
