//! Binary BVH over splat boxes, built by median splits on the longest
//! centroid axis. Nodes are stored flat in depth-first order.

use nalgebra::Vector3;

pub const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub lo: Vector3<f64>,
    pub hi: Vector3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb { lo: Vector3::repeat(f64::INFINITY), hi: Vector3::repeat(f64::NEG_INFINITY) }
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb { lo: self.lo.inf(&o.lo), hi: self.hi.sup(&o.hi) }
    }

    pub fn contains(&self, o: &Aabb) -> bool {
        (0..3).all(|i| self.lo[i] <= o.lo[i] && self.hi[i] >= o.hi[i])
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.lo + self.hi) * 0.5
    }

    /// Entry and exit distances of the ray, or `None` if it misses or the
    /// box lies entirely behind the origin.
    #[inline]
    pub fn intersect(&self, o: &Vector3<f64>, inv_d: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if inv_d[i].is_infinite() {
                // ray parallel to this slab
                if o[i] < self.lo[i] || o[i] > self.hi[i] {
                    return None;
                }
                continue;
            }
            let a = (self.lo[i] - o[i]) * inv_d[i];
            let b = (self.hi[i] - o[i]) * inv_d[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Inner { left: u32, right: u32 },
    Leaf { start: u32, count: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub bounds: Aabb,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Default)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Splat ids referenced by leaves.
    items: Vec<u32>,
}

impl Bvh {
    /// Builds over `(id, box)` pairs. Deterministic for a given input.
    pub fn build(boxes: &[(u32, Aabb)]) -> Bvh {
        let mut bvh = Bvh { nodes: Vec::new(), items: boxes.iter().map(|(id, _)| *id).collect() };
        if boxes.is_empty() {
            return bvh;
        }
        let mut work: Vec<(u32, Aabb, Vector3<f64>)> =
            boxes.iter().map(|(id, b)| (*id, *b, b.center())).collect();
        bvh.build_node(&mut work, 0);
        bvh.items = work.iter().map(|(id, _, _)| *id).collect();
        bvh
    }

    fn build_node(&mut self, work: &mut [(u32, Aabb, Vector3<f64>)], start: usize) -> u32 {
        let bounds = work.iter().fold(Aabb::empty(), |acc, (_, b, _)| acc.union(b));
        let index = self.nodes.len() as u32;
        if work.len() <= LEAF_SIZE {
            self.nodes.push(Node {
                bounds,
                kind: NodeKind::Leaf { start: start as u32, count: work.len() as u32 },
            });
            return index;
        }
        let cb = work.iter().fold(Aabb::empty(), |acc, (_, _, c)| Aabb {
            lo: acc.lo.inf(c),
            hi: acc.hi.sup(c),
        });
        let axis = (cb.hi - cb.lo).imax();
        let mid = work.len() / 2;
        work.select_nth_unstable_by(mid, |a, b| {
            a.2[axis].total_cmp(&b.2[axis]).then(a.0.cmp(&b.0))
        });
        self.nodes.push(Node { bounds, kind: NodeKind::Leaf { start: 0, count: 0 } });
        let (l, r) = work.split_at_mut(mid);
        let left = self.build_node(l, start);
        let right = self.build_node(r, start + mid);
        self.nodes[index as usize].kind = NodeKind::Inner { left, right };
        index
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_items(&self, start: u32, count: u32) -> &[u32] {
        &self.items[start as usize..(start + count) as usize]
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaves as `(bounds, ids)` pairs, in storage order.
    pub fn leaves(&self) -> impl Iterator<Item = (&Aabb, &[u32])> {
        self.nodes.iter().filter_map(move |n| match n.kind {
            NodeKind::Leaf { start, count } => Some((&n.bounds, self.leaf_items(start, count))),
            NodeKind::Inner { .. } => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(c: Vector3<f64>) -> Aabb {
        Aabb { lo: c - Vector3::repeat(0.5), hi: c + Vector3::repeat(0.5) }
    }

    #[test]
    fn single_item_is_one_leaf() {
        let bvh = Bvh::build(&[(7, unit_box(Vector3::zeros()))]);
        assert_eq!(bvh.nodes().len(), 1);
        let leaves: Vec<_> = bvh.leaves().collect();
        assert_eq!(leaves[0].1, &[7]);
    }

    #[test]
    fn every_id_in_exactly_one_leaf() {
        let boxes: Vec<_> = (0..1000u32)
            .map(|i| {
                let f = i as f64;
                (i, unit_box(Vector3::new((f * 0.37).sin() * 10.0, (f * 1.1).cos() * 5.0, f * 0.01)))
            })
            .collect();
        let bvh = Bvh::build(&boxes);
        let mut seen = vec![0; boxes.len()];
        for (b, ids) in bvh.leaves() {
            assert!(ids.len() <= LEAF_SIZE);
            for &id in ids {
                seen[id as usize] += 1;
                assert!(b.contains(&boxes[id as usize].1));
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        for n in bvh.nodes() {
            if let NodeKind::Inner { left, right } = n.kind {
                assert!(n.bounds.contains(&bvh.nodes()[left as usize].bounds));
                assert!(n.bounds.contains(&bvh.nodes()[right as usize].bounds));
            }
        }
    }

    #[test]
    fn slab_test() {
        let b = unit_box(Vector3::new(0.0, 0.0, 5.0));
        let d = Vector3::new(0.0, 0.0, 1.0);
        let inv = d.map(|v| 1.0 / v);
        let (t0, t1) = b.intersect(&Vector3::zeros(), &inv).unwrap();
        assert!((t0 - 4.5).abs() < 1e-12 && (t1 - 5.5).abs() < 1e-12);
        assert!(b.intersect(&Vector3::new(0.0, 0.0, 10.0), &inv).is_none());
        assert!(b.intersect(&Vector3::new(2.0, 0.0, 0.0), &inv).is_none());
        // origin on a slab plane with a parallel ray
        assert!(b.intersect(&Vector3::new(0.5, 0.0, 0.0), &inv).is_some());
    }
}
