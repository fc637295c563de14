// MIRD container.
//
//   "MIRD" | u32 version | u32 count
//   count × ( u32 meta_len | meta JSON | f32 actions[T×3] | u8 obs_a | u8 obs_b )
//   u32 manifest_len | manifest JSON
//
// All integers and floats little-endian.

use std::io::Write;
use std::path::Path;

use super::{Dataset, DatasetError, DatasetManifest, PairedTrajectory, Result, TrajectoryMeta, ACTION_DIM};
use crate::sim::render::OBS_LEN;

pub const MAGIC: &[u8; 4] = b"MIRD";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_json<T: serde::Serialize>(out: &mut Vec<u8>, v: &T) {
    let bytes = serde_json::to_vec(v).expect("plain data serializes");
    put_u32(out, bytes.len() as u32);
    out.extend_from_slice(&bytes);
}

pub fn to_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, ds.trajectories.len() as u32);
    for t in &ds.trajectories {
        put_json(&mut out, &t.meta);
        for a in &t.actions {
            out.extend_from_slice(&a.to_le_bytes());
        }
        out.extend_from_slice(&t.obs_a);
        out.extend_from_slice(&t.obs_b);
    }
    put_json(&mut out, &ds.manifest);
    out
}

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&to_bytes(ds))?;
    f.flush()?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> DatasetError {
        DatasetError::Format {
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, what: &str) -> Result<T> {
        let start = self.pos;
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        serde_json::from_slice(bytes).map_err(|e| DatasetError::Format {
            offset: start as u64,
            msg: format!("bad {what}: {e}"),
        })
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic, expected \"MIRD\""));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        r.pos -= 4;
        return Err(r.err(format!("unsupported version {version}, expected {FORMAT_VERSION}")));
    }
    let count = r.u32("trajectory count")? as usize;
    let mut trajectories = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let meta_at = r.pos;
        let meta: TrajectoryMeta = r.json(&format!("metadata of trajectory {i}"))?;
        let t = meta.length;
        if meta.actions_shape != [t, ACTION_DIM] || meta.obs_shape.iter().skip(1).product::<usize>() != OBS_LEN {
            r.pos = meta_at;
            return Err(r.err(format!("inconsistent shapes in trajectory {i}")));
        }
        let raw = r.take(t * ACTION_DIM * 4, "actions")?;
        let actions = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let obs_a = r.take(t * OBS_LEN, "obs_a")?.to_vec();
        let obs_b = r.take(t * OBS_LEN, "obs_b")?.to_vec();
        trajectories.push(PairedTrajectory {
            meta,
            actions,
            obs_a,
            obs_b,
        });
    }
    let manifest: DatasetManifest = r.json("manifest")?;
    if r.pos != buf.len() {
        return Err(r.err("trailing bytes"));
    }
    Ok(Dataset {
        trajectories,
        manifest,
    })
}

pub fn load(path: &Path) -> Result<Dataset> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_dataset;

    fn small() -> Dataset {
        build_dataset(2, 5).unwrap()
    }

    #[test]
    fn round_trip() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.mird");
        save(&ds, &p).unwrap();
        assert_eq!(load(&p).unwrap(), ds);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"MIRD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn corrupted_length_is_a_format_error() {
        let mut bytes = to_bytes(&small());
        bytes[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        match from_bytes(&bytes) {
            Err(DatasetError::Format { offset, .. }) => assert!(offset >= 12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = to_bytes(&small());
        assert!(matches!(from_bytes(&bytes[..bytes.len() / 2]), Err(DatasetError::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(DatasetError::Format { offset: 0, .. })));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(from_bytes(&v2), Err(DatasetError::Format { offset: 4, .. })));
    }
}
