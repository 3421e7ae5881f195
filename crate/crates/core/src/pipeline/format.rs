//! Little-endian container shared by feature files and checkpoints:
//! magic, `u16` version, a length-prefixed UTF-8 header, then named `f32`
//! sections.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const FORMAT_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

/// A named `f32` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Section {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::LengthMismatch {
                what: "section payload vs shape",
                left: data.len(),
                right: n,
            });
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::invalid("section name too long"));
        }
        Ok(Section { name, shape, data })
    }

    pub fn from_matrix(name: impl Into<String>, m: &Matrix) -> Self {
        Section {
            name: name.into(),
            shape: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    pub fn from_tensor(name: impl Into<String>, t: &Tensor<f32>) -> Self {
        Section {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    pub fn vector(name: impl Into<String>, v: Vec<f32>) -> Self {
        Section {
            name: name.into(),
            shape: vec![v.len()],
            data: v,
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.shape.as_slice() {
            [r, c] => Matrix::new(*r, *c, self.data.clone()),
            other => Err(Error::shape(
                "section",
                format!("`{}` is not 2-D: {other:?}", self.name),
            )),
        }
    }
}

/// Parsed container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: String,
    pub sections: Vec<Section>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require(&self, name: &str, path: &Path) -> Result<&Section> {
        self.get(name).ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("missing section `{name}`"),
        })
    }
}

pub fn encode(magic: &[u8; 4], c: &Container) -> Result<Vec<u8>> {
    let mut seen = std::collections::HashSet::new();
    for s in &c.sections {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::invalid(format!("duplicate section `{}`", s.name)));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(c.header.len() as u32).to_le_bytes());
    out.extend_from_slice(c.header.as_bytes());
    out.extend_from_slice(&(c.sections.len() as u32).to_le_bytes());
    for s in &c.sections {
        out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
        out.extend_from_slice(s.name.as_bytes());
        out.push(DTYPE_F32);
        out.push(s.shape.len() as u8);
        for &d in &s.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &s.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, at: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Malformed {
            path: self.path.to_path_buf(),
            offset: at as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(self.pos, format!("truncated {what}: need {n} bytes"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<String> {
        let at = self.pos;
        let raw = self.take(n, what)?;
        match std::str::from_utf8(raw) {
            Ok(s) => Ok(s.to_string()),
            Err(_) => self.fail(at, format!("{what} is not UTF-8")),
        }
    }
}

pub fn decode(magic: &[u8; 4], bytes: &[u8], path: &Path) -> Result<Container> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    if r.take(4, "magic")? != magic {
        return r.fail(
            0,
            format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
        );
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return r.fail(4, format!("unsupported version {version}"));
    }
    let hlen = r.u32("header length")? as usize;
    let header = r.utf8(hlen, "header")?;
    let count = r.u32("section count")? as usize;
    let mut sections: Vec<Section> = Vec::new();
    for _ in 0..count {
        let start = r.pos;
        let nlen = r.u16("section name length")? as usize;
        let name = r.utf8(nlen, "section name")?;
        if sections.iter().any(|s| s.name == name) {
            return r.fail(start, format!("duplicate section `{name}`"));
        }
        let dtype_at = r.pos;
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return r.fail(dtype_at, format!("unsupported dtype code {dtype}"));
        }
        let ndim = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dimension")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let Some(n) = n.filter(|n| n.checked_mul(4).is_some()) else {
            return r.fail(start, format!("section `{name}` shape {shape:?} overflows"));
        };
        let payload_at = r.pos;
        let raw = r.take(n * 4, &format!("payload of `{name}`"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        debug_assert_eq!(payload_at + 4 * n, r.pos);
        sections.push(Section { name, shape, data });
    }
    if r.pos != bytes.len() {
        return r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(Container { header, sections })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
