//! On-disk cache of global embeddings keyed by graph content and
//! hyperparameters.
//!
//! Each entry is `<key>.bin`: one JSON header line followed by the matrix as
//! row-major little-endian `f64`. `index.json` maps keys to header metadata.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GlobalEmbedConfig, NodeEmbeddings};
use crate::data::GlobalGraph;
use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    key: String,
    rows: usize,
    cols: usize,
    users: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub rows: usize,
    pub cols: usize,
    pub graph_hash: String,
}

pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(graph: &GlobalGraph, cfg: &GlobalEmbedConfig) -> String {
        let mut h = Sha256::new();
        h.update(graph.content_hash().as_bytes());
        h.update(serde_json::to_vec(cfg).expect("config serialises"));
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.bin"))
    }

    pub fn load(&self, key: &str) -> Result<Option<NodeEmbeddings>> {
        let path = self.path(key);
        if !path.exists() {
            return Ok(None);
        }
        let mut r = BufReader::new(fs::File::open(&path)?);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end())?;
        if header.key != key || header.users.len() != header.rows {
            log::warn!("cache entry {} is inconsistent; ignoring", path.display());
            return Ok(None);
        }
        let mut bytes = vec![0u8; header.rows * header.cols * 8];
        if r.read_exact(&mut bytes).is_err() {
            log::warn!("cache entry {} is truncated; ignoring", path.display());
            return Ok(None);
        }
        let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        Ok(Some(NodeEmbeddings::new(header.users, Mat::from_vec(header.rows, header.cols, data))))
    }

    pub fn store(&self, key: &str, graph_hash: &str, emb: &NodeEmbeddings) -> Result<()> {
        let header = Header { key: key.to_string(), rows: emb.len(), cols: emb.dim(), users: emb.users.clone() };
        let tmp = self.dir.join(format!("{key}.bin.tmp"));
        {
            let mut w = std::io::BufWriter::new(fs::File::create(&tmp)?);
            serde_json::to_writer(&mut w, &header)?;
            w.write_all(b"\n")?;
            for x in &emb.vectors.data {
                w.write_all(&x.to_le_bytes())?;
            }
            w.flush()?;
        }
        fs::rename(&tmp, self.path(key))?;
        let mut index = self.index()?;
        index.insert(
            key.to_string(),
            CacheEntry { rows: header.rows, cols: header.cols, graph_hash: graph_hash.to_string() },
        );
        fs::write(self.dir.join("index.json"), serde_json::to_vec_pretty(&index)?)?;
        Ok(())
    }

    pub fn index(&self) -> Result<BTreeMap<String, CacheEntry>> {
        let p = self.dir.join("index.json");
        if !p.exists() {
            return Ok(BTreeMap::new());
        }
        serde_json::from_slice(&fs::read(p)?).map_err(Error::from)
    }

    /// Loads the embeddings for `graph` under `cfg`, computing and storing
    /// them on a miss. Returns the embeddings and whether it was a hit.
    pub fn get_or_compute(&self, graph: &GlobalGraph, cfg: &GlobalEmbedConfig) -> Result<(NodeEmbeddings, bool)> {
        let key = Self::key(graph, cfg);
        if let Some(e) = self.load(&key)? {
            return Ok((e, true));
        }
        let e = super::global_embed(graph, cfg)?;
        self.store(&key, &graph.content_hash(), &e)?;
        Ok((e, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact_and_keyed() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path()).unwrap();
        let nodes: Vec<String> = (0..5).map(|i| format!("u{i}")).collect();
        let g = GlobalGraph::from_parts(nodes, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        let cfg = GlobalEmbedConfig { dim: 4, ..Default::default() };
        let (a, hit) = cache.get_or_compute(&g, &cfg).unwrap();
        assert!(!hit);
        let (b, hit) = cache.get_or_compute(&g, &cfg).unwrap();
        assert!(hit);
        assert_eq!(a.users, b.users);
        assert!(a.vectors.data.iter().zip(&b.vectors.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(b.get("u3"), a.get("u3"));

        let other = GlobalEmbedConfig { dim: 4, window: 5, ..Default::default() };
        assert_ne!(EmbeddingCache::key(&g, &cfg), EmbeddingCache::key(&g, &other));
        assert_eq!(cache.index().unwrap().len(), 1);
    }
}
