//! Structural user embeddings: heat-wavelet signatures on each cascade graph
//! (local view) and a factorised random-walk co-occurrence matrix on the
//! global graph (global view).

pub mod cache;
pub mod global;
pub mod graphwave;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::tensor::Mat;

pub use cache::EmbeddingCache;
pub use global::{global_embed, GlobalEmbedConfig};
pub use graphwave::{graphwave_embed, GraphWaveConfig};

/// Row `i` of `vectors` is the embedding of `users[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbeddings {
    pub users: Vec<String>,
    pub vectors: Mat,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl NodeEmbeddings {
    pub fn new(users: Vec<String>, vectors: Mat) -> Self {
        assert_eq!(users.len(), vectors.rows);
        let index = users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        Self { users, vectors, index }
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn get(&self, user: &str) -> Option<&[f64]> {
        let i = match self.index.get(user) {
            Some(&i) => i,
            // Deserialised values carry no index yet.
            None if self.index.is_empty() && !self.users.is_empty() => self.users.iter().position(|u| u == user)?,
            None => return None,
        };
        Some(self.vectors.row_slice(i))
    }

    /// Embedding of `user`, or the zero vector for users never seen.
    pub fn get_or_zero(&self, user: &str) -> Vec<f64> {
        self.get(user).map_or_else(|| vec![0.0; self.dim()], <[f64]>::to_vec)
    }

    pub fn rebuild_index(&mut self) {
        self.index = self.users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
    }
}
