//! Balanced k-d tree over 3D points with exact nearest-neighbor queries.
//! Ties in distance are broken by the lowest original index so results are
//! deterministic and match a linear scan exactly.

use super::Vec3;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Node {
    point: Vec3,
    index: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Immutable spatial index; safe to share across threads after construction.
#[derive(Debug, Clone)]
pub struct KdTree3 {
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl KdTree3 {
    /// Builds a balanced tree by median splits on cycling axes.
    pub fn new(points: &[Vec3]) -> KdTree3 {
        let mut items: Vec<(Vec3, usize)> =
            points.iter().copied().enumerate().map(|(i, p)| (p, i)).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build(&mut items, 0, &mut nodes);
        KdTree3 { nodes, root }
    }

    fn build(items: &mut [(Vec3, usize)], depth: usize, nodes: &mut Vec<Node>) -> Option<usize> {
        if items.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = items.len() / 2;
        items.select_nth_unstable_by(mid, |a, b| {
            coord(&a.0, axis)
                .total_cmp(&coord(&b.0, axis))
                .then(a.1.cmp(&b.1))
        });
        let (point, index) = items[mid];
        let node_id = nodes.len();
        nodes.push(Node {
            point,
            index,
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = items.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = Self::build(lo, depth + 1, nodes);
        let right = Self::build(hi, depth + 1, nodes);
        nodes[node_id].left = left;
        nodes[node_id].right = right;
        Some(node_id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Exact nearest neighbor: returns (original index, squared distance).
    /// The result minimizes (squared distance, index) lexicographically.
    pub fn nearest(&self, query: &Vec3) -> Result<(usize, f64)> {
        let root = self.root.ok_or(Error::EmptyIndex)?;
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(root, query, &mut best);
        Ok((best.0, best.1))
    }

    fn search(&self, node_id: usize, query: &Vec3, best: &mut (usize, f64)) {
        let node = &self.nodes[node_id];
        let d2 = (node.point - *query).squared_norm();
        if d2 < best.1 || (d2 == best.1 && node.index < best.0) {
            *best = (node.index, d2);
        }
        let delta = coord(query, node.axis) - coord(&node.point, node.axis);
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.search(n, query, best);
        }
        // The far side can still hold an equal-distance lower index, so
        // descend on <= rather than <.
        if let Some(f) = far {
            if delta * delta <= best.1 {
                self.search(f, query, best);
            }
        }
    }
}

fn coord(v: &Vec3, axis: usize) -> f64 {
    match axis {
        0 => v.x,
        1 => v.y,
        _ => v.z,
    }
}

/// Linear-scan reference with the same tie-break, used by tests as the oracle
/// and exported for brute-force metric oracles.
pub fn nearest_linear(points: &[Vec3], query: &Vec3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = (*p - *query).squared_norm();
        match best {
            None => best = Some((i, d2)),
            Some((_, bd)) if d2 < bd => best = Some((i, d2)),
            _ => {}
        }
    }
    best
}
