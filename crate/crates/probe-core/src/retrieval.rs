//! Candidate retrieval: exact KD-tree over the ring-mean keys, then
//! full-score re-ranking of the top-K candidates.
//!
//! The tree is exact, not approximate; neighbor order is the
//! lexicographic (Euclidean distance, frame id) order, so results are
//! deterministic even with duplicate keys.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::HashSet;

use crate::descriptor::Descriptor;
use crate::error::{Error, Result};
use crate::matching::{score_pair, MatchScore, ScoreMode};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Inner {
        axis: usize,
        split: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// KD-tree over N keys of uniform dimension.
#[derive(Debug, Clone)]
pub struct DescriptorIndex {
    dim: usize,
    keys: Vec<f64>,
    frame_ids: Vec<u64>,
    order: Vec<usize>,
    root: Node,
}

/// One retrieval candidate, ascending by `(distance, frame_id)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub frame_id: u64,
    pub distance: f64,
}

// max-heap entry: "greater" means a worse candidate
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    frame_id: u64,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .partial_cmp(&other.d2)
            .expect("key distances are finite")
            .then(self.frame_id.cmp(&other.frame_id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl DescriptorIndex {
    /// Builds an index over `(frame_id, key)` pairs. Keys must be
    /// non-empty, finite, and of uniform length.
    pub fn build(entries: Vec<(u64, Vec<f64>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter(
                "cannot index zero descriptors".into(),
            ));
        }
        let dim = entries[0].1.len();
        if dim == 0 {
            return Err(Error::InvalidParameter("zero-dimensional keys".into()));
        }
        let mut keys = Vec::with_capacity(entries.len() * dim);
        let mut frame_ids = Vec::with_capacity(entries.len());
        for (frame_id, key) in &entries {
            if key.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "key length {} for frame {frame_id}, expected {dim}",
                    key.len()
                )));
            }
            if key.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "non-finite key component for frame {frame_id}"
                )));
            }
            frame_ids.push(*frame_id);
            keys.extend_from_slice(key);
        }
        let mut order: Vec<usize> = (0..frame_ids.len()).collect();
        let root = build_node(&keys, dim, &mut order, 0, frame_ids.len());
        Ok(Self {
            dim,
            keys,
            frame_ids,
            order,
            root,
        })
    }

    /// Convenience constructor from descriptors indexed by position.
    pub fn from_descriptors(descriptors: &[Descriptor]) -> Result<Self> {
        Self::build(
            descriptors
                .iter()
                .enumerate()
                .map(|(i, d)| (i as u64, d.key.clone()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn key_of(&self, idx: usize) -> &[f64] {
        &self.keys[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Exact K nearest neighbors by Euclidean key distance; ties resolve
    /// by ascending frame id. Returns `min(k, N)` entries.
    pub fn query_topk(&self, key: &[f64], k: usize) -> Vec<Neighbor> {
        assert_eq!(key.len(), self.dim, "query key dimension mismatch");
        if k == 0 {
            return Vec::new();
        }
        let k = k.min(self.len());
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(&self.root, key, k, &mut heap);
        let mut found: Vec<Candidate> = heap.into_vec();
        found.sort_unstable();
        found
            .into_iter()
            .map(|c| Neighbor {
                frame_id: c.frame_id,
                distance: c.d2.sqrt(),
            })
            .collect()
    }

    fn search(&self, node: &Node, key: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match node {
            Node::Leaf { start, end } => {
                for &idx in &self.order[*start..*end] {
                    let d2 = squared_distance(key, self.key_of(idx));
                    let cand = Candidate {
                        d2,
                        frame_id: self.frame_ids[idx],
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is non-empty") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Inner {
                axis,
                split,
                left,
                right,
            } => {
                let diff = key[*axis] - split;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, key, k, heap);
                // the far half may still hold an equal-distance, smaller
                // frame id, so prune only on strict inequality
                let must_visit =
                    heap.len() < k || diff * diff <= heap.peek().expect("heap is non-empty").d2;
                if must_visit {
                    self.search(far, key, k, heap);
                }
            }
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn build_node(keys: &[f64], dim: usize, order: &mut [usize], start: usize, end: usize) -> Node {
    let count = end - start;
    if count <= LEAF_SIZE {
        return Node::Leaf { start, end };
    }
    // split on the axis with the widest spread over this subset
    let slice = &order[start..end];
    let mut best_axis = 0;
    let mut best_spread = -1.0;
    for axis in 0..dim {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &idx in slice {
            let v = keys[idx * dim + axis];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo > best_spread {
            best_spread = hi - lo;
            best_axis = axis;
        }
    }
    if best_spread <= 0.0 {
        // all keys identical over this subset
        return Node::Leaf { start, end };
    }
    let mid = count / 2;
    let slice = &mut order[start..end];
    slice.select_nth_unstable_by(mid, |&a, &b| {
        keys[a * dim + best_axis]
            .partial_cmp(&keys[b * dim + best_axis])
            .expect("keys are finite")
    });
    let split = keys[slice[mid] * dim + best_axis];
    let left = Box::new(build_node(keys, dim, order, start, start + mid));
    let right = Box::new(build_node(keys, dim, order, start + mid, end));
    Node::Inner {
        axis: best_axis,
        split,
        left,
        right,
    }
}

/// Brute-force exact top-k, used as the oracle for the KD-tree.
pub fn linear_scan_topk(entries: &[(u64, Vec<f64>)], key: &[f64], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Candidate> = entries
        .iter()
        .map(|(frame_id, e)| Candidate {
            d2: squared_distance(key, e),
            frame_id: *frame_id,
        })
        .collect();
    all.sort_unstable();
    all.truncate(k);
    all.into_iter()
        .map(|c| Neighbor {
            frame_id: c.frame_id,
            distance: c.d2.sqrt(),
        })
        .collect()
}

/// Pre-filters by key distance, re-ranks surviving candidates with the
/// full pairwise score, and returns the best `(frame_id, score)` under
/// the (distance, frame id) tie-break chain.
pub fn retrieve_best<'a>(
    index: &DescriptorIndex,
    descriptor_of: impl Fn(u64) -> &'a Descriptor,
    query: &Descriptor,
    k: usize,
    mode: ScoreMode,
    exclusion: &HashSet<u64>,
) -> Result<(u64, MatchScore)> {
    if k == 0 {
        return Err(Error::InvalidParameter("top-k must be at least 1".into()));
    }
    let candidates = index.query_topk(&query.key, k);
    let mut best: Option<(u64, MatchScore)> = None;
    for cand in candidates {
        if exclusion.contains(&cand.frame_id) {
            continue;
        }
        let score = score_pair(descriptor_of(cand.frame_id), query, mode)?;
        let better = match &best {
            None => true,
            Some((best_id, best_score)) => {
                score.distance < best_score.distance
                    || (score.distance == best_score.distance && cand.frame_id < *best_id)
            }
        };
        if better {
            best = Some((cand.frame_id, score));
        }
    }
    best.ok_or(Error::NoCandidate)
}
