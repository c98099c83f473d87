use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLAZEPOSE33: &str = include_str!("../../data/layouts/blazepose33.json");
pub const OPENPOSE18: &str = include_str!("../../data/layouts/openpose18.json");

/// Named joints, an undirected edge list and the graph center.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonLayout {
    pub name: String,
    pub version: u32,
    #[serde(default, skip_serializing)]
    pub notes: Vec<String>,
    pub nodes: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub center: usize,
}

impl SkeletonLayout {
    pub fn from_json(s: &str) -> Result<Self> {
        let layout: SkeletonLayout = serde_json::from_str(s)?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if n == 0 {
            return Err(Error::config(format!("layout {}: no nodes", self.name)));
        }
        if self.center >= n {
            return Err(Error::config(format!("layout {}: center {} out of range", self.name, self.center)));
        }
        for &(a, b) in &self.edges {
            if a >= n || b >= n || a == b {
                return Err(Error::config(format!("layout {}: invalid edge ({a}, {b})", self.name)));
            }
        }
        let unreachable: Vec<_> =
            self.hop_distances().into_iter().enumerate().filter(|(_, d)| d.is_none()).map(|(i, _)| i).collect();
        if !unreachable.is_empty() {
            return Err(Error::config(format!(
                "layout {}: graph is disconnected, nodes {unreachable:?} unreachable from the center",
                self.name
            )));
        }
        Ok(())
    }

    fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.num_nodes()];
        for &(a, b) in &self.edges {
            nb[a].push(b);
            nb[b].push(a);
        }
        nb
    }

    fn bfs(&self, from: usize) -> Vec<Option<usize>> {
        let nb = self.neighbors();
        let mut dist = vec![None; self.num_nodes()];
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].expect("queued nodes have a distance");
            for &v in &nb[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Graph distance of every node from the center.
    pub fn hop_distances(&self) -> Vec<Option<usize>> {
        self.bfs(self.center)
    }

    /// All-pairs graph distances.
    pub fn distance_matrix(&self) -> Vec<Vec<Option<usize>>> {
        (0..self.num_nodes()).map(|i| self.bfs(i)).collect()
    }
}

/// Load one of the shipped layouts.
pub fn build_layout(name: &str) -> Result<SkeletonLayout> {
    match name {
        "blazepose33" => SkeletonLayout::from_json(BLAZEPOSE33),
        "openpose18" => SkeletonLayout::from_json(OPENPOSE18),
        _ => Err(Error::config(format!("unknown skeleton layout {name:?}; expected blazepose33 or openpose18"))),
    }
}

/// Partitioned, normalized adjacency for spatial graph convolutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adjacency {
    pub num_nodes: usize,
    pub max_hop: usize,
    /// Row-major `n x n` matrices: root, centripetal, centrifugal. Row `i`
    /// holds the weights node `i` gathers from its neighbors.
    pub partitions: Vec<Vec<f64>>,
    /// Shape of the learnable edge-importance mask, `(partitions, n, n)`.
    pub edge_importance_shape: (usize, usize, usize),
}

impl Adjacency {
    pub fn get(&self, partition: usize, i: usize, j: usize) -> f64 {
        self.partitions[partition][i * self.num_nodes + j]
    }

    /// Boolean support of one partition.
    pub fn support(&self, partition: usize) -> Vec<bool> {
        self.partitions[partition].iter().map(|v| *v != 0.0).collect()
    }
}

pub const ROOT: usize = 0;
pub const CENTRIPETAL: usize = 1;
pub const CENTRIFUGAL: usize = 2;

/// Spatial partitioning: neighbors within `max_hop` of each root node are
/// split by their distance to the center relative to the root's (equal:
/// root, closer: centripetal, farther: centrifugal). Weights are the
/// row-normalized `D^-1 (A + I)` of the `max_hop` neighborhood.
pub fn build_adjacency(layout: &SkeletonLayout, max_hop: usize) -> Result<Adjacency> {
    layout.validate()?;
    if max_hop == 0 {
        return Err(Error::config("max_hop must be at least 1"));
    }
    let n = layout.num_nodes();
    let dist = layout.distance_matrix();
    let center: Vec<usize> = layout.hop_distances().into_iter().map(|d| d.expect("connected")).collect();
    let reach = |i: usize, j: usize| dist[i][j].is_some_and(|d| d <= max_hop);
    let degree: Vec<f64> = (0..n).map(|i| (0..n).filter(|&j| reach(i, j)).count() as f64).collect();
    let mut partitions = vec![vec![0.0; n * n]; 3];
    for i in 0..n {
        for j in (0..n).filter(|&j| reach(i, j)) {
            let p = match center[j].cmp(&center[i]) {
                std::cmp::Ordering::Equal => ROOT,
                std::cmp::Ordering::Less => CENTRIPETAL,
                std::cmp::Ordering::Greater => CENTRIFUGAL,
            };
            partitions[p][i * n + j] = 1.0 / degree[i];
        }
    }
    Ok(Adjacency { num_nodes: n, max_hop, partitions, edge_importance_shape: (3, n, n) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> SkeletonLayout {
        SkeletonLayout {
            name: "chain".into(),
            version: 1,
            notes: vec![],
            nodes: vec!["a".into(), "b".into()],
            edges: vec![(0, 1)],
            center: 0,
        }
    }

    #[test]
    fn shipped_layout_sizes() {
        assert_eq!(build_layout("blazepose33").unwrap().num_nodes(), 33);
        assert_eq!(build_layout("openpose18").unwrap().num_nodes(), 18);
        assert!(build_layout("coco17").is_err());
    }

    #[test]
    fn disconnected_layout_is_rejected() {
        let mut l = chain();
        l.nodes.push("c".into());
        assert!(l.validate().unwrap_err().to_string().contains("disconnected"));
        assert!(build_adjacency(&l, 1).is_err());
    }

    #[test]
    fn two_node_chain_partitions() {
        let a = build_adjacency(&chain(), 1).unwrap();
        // root: self loops; centrifugal: 0 gathers from farther 1; centripetal: 1 from 0
        assert_eq!(a.support(ROOT), [true, false, false, true]);
        assert_eq!(a.support(CENTRIPETAL), [false, false, true, false]);
        assert_eq!(a.support(CENTRIFUGAL), [false, true, false, false]);
        assert_eq!(a.get(ROOT, 0, 0), 0.5);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn supports_partition_a_plus_i() {
        for name in ["blazepose33", "openpose18"] {
            let l = build_layout(name).unwrap();
            let n = l.num_nodes();
            let a = build_adjacency(&l, 1).unwrap();
            let mut a_plus_i = vec![false; n * n];
            for i in 0..n {
                a_plus_i[i * n + i] = true;
            }
            for &(x, y) in &l.edges {
                a_plus_i[x * n + y] = true;
                a_plus_i[y * n + x] = true;
            }
            for k in 0..n * n {
                let hits = (0..3).filter(|p| a.support(*p)[k]).count();
                assert_eq!(hits, usize::from(a_plus_i[k]), "{name} entry {k}");
            }
            for p in &a.partitions {
                assert!(p.iter().all(|v| *v >= 0.0));
                for i in 0..n {
                    assert!(p[i * n..(i + 1) * n].iter().sum::<f64>() <= 1.0 + 1e-12);
                }
            }
            assert_eq!(a.edge_importance_shape, (3, n, n));
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn no_entries_beyond_max_hop() {
        let l = build_layout("blazepose33").unwrap();
        let dist = l.distance_matrix();
        let a = build_adjacency(&l, 1).unwrap();
        for i in 0..33 {
            for j in 0..33 {
                if dist[i][j].unwrap() >= 2 {
                    assert!((0..3).all(|p| a.get(p, i, j) == 0.0));
                }
            }
        }
    }
}
