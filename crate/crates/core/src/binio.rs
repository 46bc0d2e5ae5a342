//! Little-endian helpers shared by the binary artifact formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub(crate) struct BinWriter {
    path: PathBuf,
    inner: BufWriter<File>,
}

impl BinWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner: BufWriter::new(file),
        })
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner
            .write_all(bytes)
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn magic(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        self.put(magic)?;
        self.u32(version)
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.put(&[v])
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(vs.len() * 8);
        for v in vs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.put(&buf)
    }

    /// Length-prefixed UTF-8 string.
    pub fn string(&mut self, s: &str) -> Result<()> {
        self.u64(s.len() as u64)?;
        self.put(s.as_bytes())
    }

    /// Length-prefixed f64 array.
    pub fn f64_vec(&mut self, vs: &[f64]) -> Result<()> {
        self.u64(vs.len() as u64)?;
        self.f64s(vs)
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub(crate) struct BinReader {
    path: PathBuf,
    inner: BufReader<File>,
}

impl BinReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner: BufReader::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn bad(&self, detail: impl Into<String>) -> Error {
        Error::format(&self.path, detail)
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| self.bad("unexpected end of file"))?;
        Ok(buf)
    }

    /// Checks the magic tag and returns the format version.
    pub fn expect_magic(&mut self, magic: &[u8; 4], max_version: u32) -> Result<u32> {
        let found = self.take::<4>()?;
        if &found != magic {
            return Err(self.bad(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&found),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32()?;
        if version == 0 || version > max_version {
            return Err(self.bad(format!("unsupported format version {version}")));
        }
        Ok(version)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    pub fn usize(&mut self, limit: usize) -> Result<usize> {
        let v = self.u64()?;
        if v > limit as u64 {
            return Err(self.bad(format!("size field {v} exceeds limit {limit}")));
        }
        Ok(v as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 8];
        self.inner
            .read_exact(&mut bytes)
            .map_err(|_| self.bad("unexpected end of file"))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f64_vec(&mut self, limit: usize) -> Result<Vec<f64>> {
        let n = self.usize(limit)?;
        self.f64s(n)
    }

    pub fn string(&mut self, limit: usize) -> Result<String> {
        let n = self.usize(limit)?;
        let mut bytes = vec![0u8; n];
        self.inner
            .read_exact(&mut bytes)
            .map_err(|_| self.bad("unexpected end of file"))?;
        String::from_utf8(bytes).map_err(|_| self.bad("string field is not UTF-8"))
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.bad("trailing bytes after payload")),
            Err(e) => Err(Error::io(&self.path, e)),
        }
    }
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
