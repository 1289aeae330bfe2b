use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One resharing triplet `(source, target, time)`. The root event has
/// `source == target == root_user` and time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetweetEvent {
    pub source: String,
    pub target: String,
    pub time: f64,
}

impl RetweetEvent {
    pub fn new(source: impl Into<String>, target: impl Into<String>, time: f64) -> Self {
        Self { source: source.into(), target: target.into(), time }
    }
}

/// Full resharing record of one information item, rebased so the root
/// event happens at time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    pub cascade_id: String,
    pub root_user: String,
    pub events: Vec<RetweetEvent>,
}

impl Cascade {
    /// Builds a cascade from raw events: inserts a root event when absent,
    /// rebases times to the root event and stably sorts by time. Returns the
    /// cascade and whether the input order had to be repaired.
    pub fn from_raw(
        cascade_id: impl Into<String>,
        root_user: impl Into<String>,
        mut events: Vec<RetweetEvent>,
        default_root_time: Option<f64>,
    ) -> Result<(Self, bool)> {
        let cascade_id = cascade_id.into();
        let root_user = root_user.into();
        let root_pos = events.iter().position(|e| e.source == root_user && e.target == root_user);
        let root_time = match root_pos {
            Some(p) => events.remove(p).time,
            None => default_root_time
                .unwrap_or_else(|| events.iter().map(|e| e.time).reduce(f64::min).unwrap_or(0.0)),
        };
        for e in &events {
            if !e.time.is_finite() {
                return Err(Error::InvalidArgument(format!("cascade {cascade_id}: non-finite event time")));
            }
            if e.source == e.target {
                return Err(Error::InvalidArgument(format!(
                    "cascade {cascade_id}: self-loop event for user {} outside the root",
                    e.source
                )));
            }
            if e.time < root_time {
                return Err(Error::InvalidArgument(format!(
                    "cascade {cascade_id}: event at {} precedes the root at {root_time}",
                    e.time
                )));
            }
        }
        let reordered = events.windows(2).any(|w| w[1].time < w[0].time);
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut all = Vec::with_capacity(events.len() + 1);
        all.push(RetweetEvent::new(root_user.clone(), root_user.clone(), 0.0));
        all.extend(events.into_iter().map(|mut e| {
            e.time -= root_time;
            e
        }));
        Ok((Self { cascade_id, root_user, events: all }, reordered))
    }

    /// Events with `time <= t_obs` (the observed prefix `C(t_o)`).
    pub fn observed(&self, t_obs: f64) -> &[RetweetEvent] {
        let n = self.events.partition_point(|e| e.time <= t_obs);
        &self.events[..n]
    }

    /// Number of non-root events.
    pub fn size(&self) -> usize {
        self.events.len().saturating_sub(1)
    }

    /// Copy of the cascade keeping only events at or before `t`.
    pub fn truncated(&self, t: f64) -> Self {
        Self { cascade_id: self.cascade_id.clone(), root_user: self.root_user.clone(), events: self.observed(t).to_vec() }
    }
}

/// `G(t_o) = (V_c, E_c)`: nodes in order of first appearance, directed
/// edges as node indices, one per observed non-root event.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

impl CascadeGraph {
    pub fn index_of(&self, user: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == user)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Symmetric 0/1 adjacency, row-major `n x n`.
    pub fn symmetric_adjacency(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut a = vec![0.0; n * n];
        for &(s, t) in &self.edges {
            if s != t {
                a[s * n + t] = 1.0;
                a[t * n + s] = 1.0;
            }
        }
        a
    }

    /// Longest root-to-node hop count, treating edges as parent links.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for &(s, t) in &self.edges {
            depth[t] = depth[t].max(depth[s] + 1);
        }
        depth.into_iter().max().unwrap_or(0)
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|&&(s, _)| s == node).count()
    }
}

/// `S(t_o)`: chronologically ordered target users, root first.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSequence {
    pub users: Vec<String>,
    pub times: Vec<f64>,
}

impl CascadeSequence {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn distinct_users(&self) -> usize {
        let mut u: Vec<&str> = self.users.iter().map(String::as_str).collect();
        u.sort_unstable();
        u.dedup();
        u.len()
    }
}

pub fn build_cascade_graph(c: &Cascade, t_obs: f64) -> Result<CascadeGraph> {
    check_t_obs(t_obs)?;
    let obs = c.observed(t_obs);
    if obs.is_empty() {
        return Err(Error::EmptyObservation { t_obs });
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut edges = Vec::with_capacity(obs.len());
    for e in obs {
        let s = intern_node(&mut index, &mut nodes, &e.source);
        let t = intern_node(&mut index, &mut nodes, &e.target);
        if s != t {
            edges.push((s, t));
        }
    }
    Ok(CascadeGraph { nodes, edges })
}

fn intern_node<'a>(index: &mut HashMap<&'a str, usize>, nodes: &mut Vec<String>, u: &'a str) -> usize {
    *index.entry(u).or_insert_with(|| {
        nodes.push(u.to_string());
        nodes.len() - 1
    })
}

pub fn build_cascade_sequence(c: &Cascade, t_obs: f64) -> Result<CascadeSequence> {
    check_t_obs(t_obs)?;
    let obs = c.observed(t_obs);
    if obs.is_empty() {
        return Err(Error::EmptyObservation { t_obs });
    }
    Ok(CascadeSequence {
        users: obs.iter().map(|e| e.target.clone()).collect(),
        times: obs.iter().map(|e| e.time).collect(),
    })
}

fn check_t_obs(t_obs: f64) -> Result<()> {
    if t_obs > 0.0 && t_obs.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("observation time must be positive, got {t_obs}")))
    }
}

/// Union of cascade graphs under one observation time. Directed edges are
/// collapsed with their multiplicity recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGraph {
    pub nodes: Vec<String>,
    index: HashMap<String, usize>,
    /// `(source, target) -> multiplicity`
    pub edges: BTreeMap<(usize, usize), u32>,
}

impl GlobalGraph {
    pub fn from_parts(nodes: Vec<String>, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let index = nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut map = BTreeMap::new();
        for e in edges {
            *map.entry(e).or_insert(0) += 1;
        }
        Self { nodes, index, edges: map }
    }

    pub fn index_of(&self, user: &str) -> Option<usize> {
        self.index.get(user).copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_node(&mut self, user: &str) -> usize {
        if let Some(&i) = self.index.get(user) {
            return i;
        }
        self.nodes.push(user.to_string());
        self.index.insert(user.to_string(), self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    /// Undirected simple neighbour lists (multiplicity and direction dropped).
    pub fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(s, t) in self.edges.keys() {
            if s != t {
                adj[s].push(t);
                adj[t].push(s);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Stable content hash over node names and edges.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for n in &self.nodes {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        for (&(s, t), &m) in &self.edges {
            h.update((s as u64).to_le_bytes());
            h.update((t as u64).to_le_bytes());
            h.update(m.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn build_global_graph(cascades: &[Cascade], t_obs: f64) -> Result<GlobalGraph> {
    if cascades.is_empty() {
        return Err(Error::InvalidArgument("global graph needs at least one cascade".into()));
    }
    let mut g = GlobalGraph::from_parts(Vec::new(), std::iter::empty());
    for c in cascades {
        let cg = build_cascade_graph(c, t_obs)?;
        let ids: Vec<usize> = cg.nodes.iter().map(|u| g.add_node(u)).collect();
        for (s, t) in cg.edges {
            *g.edges.entry((ids[s], ids[t])).or_insert(0) += 1;
        }
    }
    Ok(g)
}
