//! Versioned binary checkpoint container: magic, version, a model-kind tag,
//! a config blob, then named row-major double tensors. Round trips are
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SSHIFT01";
const VERSION: u32 = 1;

/// Parsed checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub config_json: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

pub fn save(
    path: impl AsRef<Path>,
    kind: &str,
    config_json: &str,
    tensors: &[(String, Tensor)],
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let werr = |e: std::io::Error| Error::io(path.display().to_string(), e);

    w.write_all(MAGIC).map_err(werr)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(werr)?;
    write_bytes(&mut w, kind.as_bytes()).map_err(werr)?;
    write_bytes(&mut w, config_json.as_bytes()).map_err(werr)?;
    w.write_all(&(tensors.len() as u64).to_le_bytes()).map_err(werr)?;
    for (name, tensor) in tensors {
        write_bytes(&mut w, name.as_bytes()).map_err(werr)?;
        w.write_all(&(tensor.rows() as u64).to_le_bytes()).map_err(werr)?;
        w.write_all(&(tensor.cols() as u64).to_le_bytes()).map_err(werr)?;
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(werr)?;
        }
    }
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let bad = |detail: &str| Error::Parse {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    let rerr = |e: std::io::Error| Error::io(path.display().to_string(), e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(rerr)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version).map_err(rerr)?;
    if u32::from_le_bytes(version) != VERSION {
        return Err(bad("unsupported checkpoint version"));
    }
    let kind = String::from_utf8(read_bytes(&mut r).map_err(rerr)?)
        .map_err(|_| bad("kind is not utf-8"))?;
    let config_json = String::from_utf8(read_bytes(&mut r).map_err(rerr)?)
        .map_err(|_| bad("config is not utf-8"))?;
    let mut count = [0u8; 8];
    r.read_exact(&mut count).map_err(rerr)?;
    let count = u64::from_le_bytes(count) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = String::from_utf8(read_bytes(&mut r).map_err(rerr)?)
            .map_err(|_| bad("tensor name is not utf-8"))?;
        let mut dims = [0u8; 16];
        r.read_exact(&mut dims).map_err(rerr)?;
        let rows = u64::from_le_bytes(dims[..8].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(dims[8..].try_into().unwrap()) as usize;
        let mut data = vec![0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut buf).map_err(rerr)?;
            *v = f64::from_le_bytes(buf);
        }
        tensors.push((name, Tensor::from_vec(rows, cols, data)));
    }
    Ok(Checkpoint {
        kind,
        config_json,
        tensors,
    })
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> std::io::Result<()> {
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(bytes)
}

fn read_bytes<R: Read>(r: &mut R) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut bytes = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut bytes)?;
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let tensors = vec![
            ("w".to_string(), Tensor::from_vec(2, 3, vec![1.5, -2.25, 0.1, f64::MIN_POSITIVE, 1e300, -0.0])),
            ("b".to_string(), Tensor::zeros(1, 4)),
        ];
        save(&path, "test-model", "{\"dim\":3}", &tensors).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.kind, "test-model");
        assert_eq!(loaded.config_json, "{\"dim\":3}");
        assert_eq!(loaded.tensors.len(), 2);
        for ((n0, t0), (n1, t1)) in tensors.iter().zip(&loaded.tensors) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            for (a, b) in t0.data().iter().zip(t1.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(load(&path), Err(Error::Parse { .. })));
    }
}
