//! Binned-SAH bounding volume hierarchy over triangles, stored as a flat
//! node array. Interior nodes keep their two children adjacent.

use glam::DVec3;

use super::{Aabb, TriangleMesh};

pub const MAX_LEAF_SIZE: usize = 4;
const BINS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvhNode {
    pub bounds: Aabb,
    /// Leaf: offset into the triangle order. Interior: index of the left child.
    pub first: u32,
    /// Triangle count for leaves, 0 for interior nodes.
    pub count: u32,
}

impl BvhNode {
    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.count > 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
}

struct Prim {
    bounds: Aabb,
    centroid: DVec3,
}

#[derive(Clone, Copy)]
struct Bin {
    bounds: Aabb,
    count: usize,
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Bvh {
        let n = mesh.triangle_count();
        if n == 0 {
            return Bvh::default();
        }
        let prims: Vec<Prim> = (0..n)
            .map(|i| {
                let [a, b, c] = mesh.triangle(i);
                let bounds = Aabb::from_points(&[a, b, c]);
                Prim {
                    bounds,
                    centroid: (a + b + c) / 3.0,
                }
            })
            .collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = vec![BvhNode {
            bounds: Aabb::EMPTY,
            first: 0,
            count: 0,
        }];
        let mut stack = vec![(0usize, 0usize, n)];

        while let Some((node, start, end)) = stack.pop() {
            let mut bounds = Aabb::EMPTY;
            let mut cbounds = Aabb::EMPTY;
            for &t in &order[start..end] {
                let p = &prims[t as usize];
                bounds = bounds.union(&p.bounds);
                cbounds.grow(p.centroid);
            }
            let count = end - start;
            if count <= MAX_LEAF_SIZE {
                nodes[node] = BvhNode {
                    bounds: pad(bounds),
                    first: start as u32,
                    count: count as u32,
                };
                continue;
            }

            let mid = match best_split(&prims, &order[start..end], &cbounds) {
                Some((axis, split_bin)) => {
                    let lo = cbounds.min[axis];
                    let ext = cbounds.max[axis] - lo;
                    let slice = &mut order[start..end];
                    let mut i = 0;
                    for j in 0..slice.len() {
                        let c = prims[slice[j] as usize].centroid[axis];
                        if bin_of(c, lo, ext) <= split_bin {
                            slice.swap(i, j);
                            i += 1;
                        }
                    }
                    start + i
                }
                None => start,
            };
            // Fall back to an object median when binning cannot separate the
            // centroids (coincident centroids or a degenerate best split).
            let mid = if mid == start || mid == end {
                let axis = largest_axis(cbounds.extent());
                let half = count / 2;
                order[start..end].select_nth_unstable_by(half, |a, b| {
                    prims[*a as usize].centroid[axis].total_cmp(&prims[*b as usize].centroid[axis])
                });
                start + half
            } else {
                mid
            };

            let left = nodes.len();
            nodes.push(nodes[node]);
            nodes.push(nodes[node]);
            nodes[node] = BvhNode {
                bounds: pad(bounds),
                first: left as u32,
                count: 0,
            };
            stack.push((left + 1, mid, end));
            stack.push((left, start, mid));
        }
        Bvh { nodes, order }
    }

    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    /// Triangle ids in leaf order.
    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn depth(&self) -> usize {
        fn rec(nodes: &[BvhNode], i: usize) -> usize {
            let n = nodes[i];
            if n.is_leaf() {
                1
            } else {
                1 + rec(nodes, n.first as usize).max(rec(nodes, n.first as usize + 1))
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            rec(&self.nodes, 0)
        }
    }
}

// Node boxes are inflated slightly so that slab-test rounding can never cull
// a triangle the exact intersection routine would report.
fn pad(b: Aabb) -> Aabb {
    let scale = b.min.abs().max(b.max.abs()).max_element();
    b.padded(1e-9 * (1.0 + scale))
}

#[inline]
fn bin_of(c: f64, lo: f64, ext: f64) -> usize {
    (((c - lo) / ext * BINS as f64) as usize).min(BINS - 1)
}

fn largest_axis(e: DVec3) -> usize {
    if e.x >= e.y && e.x >= e.z {
        0
    } else if e.y >= e.z {
        1
    } else {
        2
    }
}

/// Returns (axis, last bin of the left side) minimising the SAH cost.
fn best_split(prims: &[Prim], ids: &[u32], cbounds: &Aabb) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for axis in 0..3 {
        let lo = cbounds.min[axis];
        let ext = cbounds.max[axis] - lo;
        if ext <= 0.0 {
            continue;
        }
        let mut bins = [Bin {
            bounds: Aabb::EMPTY,
            count: 0,
        }; BINS];
        for &t in ids {
            let p = &prims[t as usize];
            let b = &mut bins[bin_of(p.centroid[axis], lo, ext)];
            b.bounds = b.bounds.union(&p.bounds);
            b.count += 1;
        }
        // Sweep from the right to get suffix areas/counts.
        let mut right_area = [0.0; BINS];
        let mut right_count = [0usize; BINS];
        let mut acc = Aabb::EMPTY;
        let mut cnt = 0;
        for i in (1..BINS).rev() {
            acc = acc.union(&bins[i].bounds);
            cnt += bins[i].count;
            right_area[i] = acc.surface_area();
            right_count[i] = cnt;
        }
        let mut acc = Aabb::EMPTY;
        let mut cnt = 0;
        for i in 0..BINS - 1 {
            acc = acc.union(&bins[i].bounds);
            cnt += bins[i].count;
            if cnt == 0 || right_count[i + 1] == 0 {
                continue;
            }
            let cost =
                acc.surface_area() * cnt as f64 + right_area[i + 1] * right_count[i + 1] as f64;
            if best.is_none_or(|(c, _, _)| cost < c) {
                best = Some((cost, axis, i));
            }
        }
    }
    best.map(|(_, axis, bin)| (axis, bin))
}
