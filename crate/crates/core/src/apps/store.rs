//! Where swapped-out chunks live: in memory, or one file per chunk.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::PathBuf;

use crate::tracer::{RemoteChunk, RemoteReader};
use crate::types::TypeId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredChunk {
    pub ty: TypeId,
    pub size: u64,
    pub words: Vec<u64>,
}

pub trait RemoteStore {
    fn put(&mut self, id: u32, c: StoredChunk) -> io::Result<()>;
    fn get(&self, id: u32) -> io::Result<Option<StoredChunk>>;
    fn remove(&mut self, id: u32) -> io::Result<()>;
    fn ids(&self) -> io::Result<Vec<u32>>;
}

#[derive(Default, Debug)]
pub struct MemoryStore {
    chunks: BTreeMap<u32, StoredChunk>,
}

impl RemoteStore for MemoryStore {
    fn put(&mut self, id: u32, c: StoredChunk) -> io::Result<()> {
        self.chunks.insert(id, c);
        Ok(())
    }

    fn get(&self, id: u32) -> io::Result<Option<StoredChunk>> {
        Ok(self.chunks.get(&id).cloned())
    }

    fn remove(&mut self, id: u32) -> io::Result<()> {
        self.chunks.remove(&id);
        Ok(())
    }

    fn ids(&self) -> io::Result<Vec<u32>> {
        Ok(self.chunks.keys().copied().collect())
    }
}

const CHUNK_MAGIC: &[u8; 4] = b"MTC1";

/// `chunk-<id>.bin`: magic, type id u32, size u64, then the words.
pub struct DirStore {
    dir: PathBuf,
}

impl DirStore {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<DirStore> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DirStore { dir })
    }

    fn path(&self, id: u32) -> PathBuf {
        self.dir.join(format!("chunk-{id}.bin"))
    }
}

impl RemoteStore for DirStore {
    fn put(&mut self, id: u32, c: StoredChunk) -> io::Result<()> {
        let mut b = Vec::with_capacity(16 + 8 * c.words.len());
        b.extend_from_slice(CHUNK_MAGIC);
        b.extend_from_slice(&c.ty.0.to_le_bytes());
        b.extend_from_slice(&c.size.to_le_bytes());
        for w in &c.words {
            b.extend_from_slice(&w.to_le_bytes());
        }
        fs::write(self.path(id), b)
    }

    fn get(&self, id: u32) -> io::Result<Option<StoredChunk>> {
        let b = match fs::read(self.path(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        if b.len() < 16 || &b[..4] != CHUNK_MAGIC || (b.len() - 16) % 8 != 0 {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("corrupt chunk file for {id}")));
        }
        let ty = TypeId(u32::from_le_bytes(b[4..8].try_into().unwrap()));
        let size = u64::from_le_bytes(b[8..16].try_into().unwrap());
        let words = b[16..].chunks(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Some(StoredChunk { ty, size, words }))
    }

    fn remove(&mut self, id: u32) -> io::Result<()> {
        match fs::remove_file(self.path(id)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }

    fn ids(&self) -> io::Result<Vec<u32>> {
        let mut out = Vec::new();
        for e in fs::read_dir(&self.dir)? {
            let name = e?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_prefix("chunk-").and_then(|n| n.strip_suffix(".bin")) {
                if let Ok(id) = id.parse() {
                    out.push(id);
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Lets the tracer descend into chunks held by a store.
pub struct StoreReader<'a>(pub &'a dyn RemoteStore);

impl RemoteReader for StoreReader<'_> {
    fn remote_chunk(&self, id: u32) -> Option<RemoteChunk> {
        self.0.get(id).ok().flatten().map(|c| RemoteChunk { ty: c.ty, words: c.words })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exercise(s: &mut dyn RemoteStore) {
        let c = StoredChunk { ty: TypeId(4), size: 24, words: vec![1, 2, 3] };
        s.put(7, c.clone()).unwrap();
        s.put(2, c.clone()).unwrap();
        assert_eq!(s.get(7).unwrap(), Some(c));
        assert_eq!(s.ids().unwrap(), vec![2, 7]);
        s.remove(7).unwrap();
        assert_eq!(s.get(7).unwrap(), None);
        assert_eq!(s.ids().unwrap(), vec![2]);
    }

    #[test]
    fn memory_store() {
        exercise(&mut MemoryStore::default());
    }

    #[test]
    fn dir_store() {
        let d = tempfile::tempdir().unwrap();
        exercise(&mut DirStore::new(d.path()).unwrap());
    }
}
