use glam::DVec3;

use super::{check_unit, Aabb, Bvh, GeometryError, SceneHash, TriangleMesh};

/// Default ray length; misses are recorded at this distance (m).
pub const DEFAULT_CLAMP_DISTANCE: f64 = 100.0;

/// Hits within this distance of either segment endpoint are treated as
/// contact, not occlusion (m).
pub const CONTACT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Hit distance, or the ray's max distance on a miss.
    pub distance: f64,
    pub triangle: Option<u32>,
    pub hit: bool,
}

impl RayHit {
    fn miss(max_distance: f64) -> Self {
        RayHit {
            distance: max_distance,
            triangle: None,
            hit: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Tri {
    v0: DVec3,
    e1: DVec3,
    e2: DVec3,
    id: u32,
}

/// Möller–Trumbore with inclusive edges. Returns the ray parameter for any
/// intersection, including those behind the origin; callers apply bounds.
#[inline(always)]
fn intersect(orig: DVec3, dir: DVec3, tri: &Tri) -> Option<f64> {
    let p = dir.cross(tri.e2);
    let det = tri.e1.dot(p);
    if det == 0.0 {
        return None;
    }
    let inv = 1.0 / det;
    let s = orig - tri.v0;
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(tri.e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(tri.e2.dot(q) * inv)
}

struct RayBox {
    orig: DVec3,
    inv: DVec3,
    zero: [bool; 3],
}

impl RayBox {
    fn new(orig: DVec3, dir: DVec3) -> Self {
        RayBox {
            orig,
            inv: dir.recip(),
            zero: [dir.x == 0.0, dir.y == 0.0, dir.z == 0.0],
        }
    }

    /// Entry distance into `b` if the ray overlaps it within `[0, tmax]`.
    #[inline(always)]
    fn enter(&self, b: &Aabb, tmax: f64) -> Option<f64> {
        let mut lo = 0.0f64;
        let mut hi = tmax;
        for a in 0..3 {
            if self.zero[a] {
                if self.orig[a] < b.min[a] || self.orig[a] > b.max[a] {
                    return None;
                }
                continue;
            }
            let t1 = (b.min[a] - self.orig[a]) * self.inv[a];
            let t2 = (b.max[a] - self.orig[a]) * self.inv[a];
            lo = lo.max(t1.min(t2));
            hi = hi.min(t1.max(t2));
        }
        (lo <= hi).then_some(lo)
    }
}

/// Immutable triangle scene with its BVH. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct Scene {
    mesh: TriangleMesh,
    bvh: Bvh,
    // Triangles in BVH leaf order, precomputed for intersection.
    tris: Vec<Tri>,
    hash: SceneHash,
}

impl Scene {
    pub fn new(mesh: TriangleMesh) -> Self {
        let bvh = Bvh::build(&mesh);
        let tris = bvh
            .order()
            .iter()
            .map(|&id| {
                let [a, b, c] = mesh.triangle(id as usize);
                Tri {
                    v0: a,
                    e1: b - a,
                    e2: c - a,
                    id,
                }
            })
            .collect();
        let hash = mesh.content_hash();
        Scene {
            mesh,
            bvh,
            tris,
            hash,
        }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    pub fn hash(&self) -> SceneHash {
        self.hash
    }

    pub fn bounds(&self) -> Aabb {
        self.mesh.bounds()
    }

    pub fn triangle_count(&self) -> usize {
        self.mesh.triangle_count()
    }

    fn check_ray(direction: DVec3, max_distance: f64) -> Result<(), GeometryError> {
        check_unit(direction)?;
        if !(max_distance > 0.0) {
            return Err(GeometryError::InvalidMaxDistance(max_distance));
        }
        Ok(())
    }

    /// Nearest hit in `(0, max_distance]` along a unit direction.
    pub fn raycast(
        &self,
        origin: DVec3,
        direction: DVec3,
        max_distance: f64,
    ) -> Result<RayHit, GeometryError> {
        Self::check_ray(direction, max_distance)?;
        Ok(self.nearest(origin, direction, max_distance))
    }

    pub(crate) fn nearest(&self, orig: DVec3, dir: DVec3, max_distance: f64) -> RayHit {
        let nodes = self.bvh.nodes();
        if nodes.is_empty() {
            return RayHit::miss(max_distance);
        }
        let rb = RayBox::new(orig, dir);
        let mut best_t = max_distance;
        let mut best_id: Option<u32> = None;
        let mut stack = [0u32; 64];
        let mut sp = 0;
        if rb.enter(&nodes[0].bounds, best_t).is_none() {
            return RayHit::miss(max_distance);
        }
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            let node = &nodes[stack[sp] as usize];
            if node.is_leaf() {
                let start = node.first as usize;
                for tri in &self.tris[start..start + node.count as usize] {
                    if let Some(t) = intersect(orig, dir, tri) {
                        if t > 0.0
                            && (t < best_t || (t == best_t && best_id.is_none_or(|b| tri.id < b)))
                        {
                            best_t = t;
                            best_id = Some(tri.id);
                        }
                    }
                }
                continue;
            }
            let l = node.first as usize;
            let tl = rb.enter(&nodes[l].bounds, best_t);
            let tr = rb.enter(&nodes[l + 1].bounds, best_t);
            match (tl, tr) {
                (Some(a), Some(b)) => {
                    // Push the far child first so the near one is visited next.
                    let (near, far) = if a <= b { (l, l + 1) } else { (l + 1, l) };
                    stack[sp] = far as u32;
                    stack[sp + 1] = near as u32;
                    sp += 2;
                }
                (Some(_), None) => {
                    stack[sp] = l as u32;
                    sp += 1;
                }
                (None, Some(_)) => {
                    stack[sp] = l as u32 + 1;
                    sp += 1;
                }
                (None, None) => {}
            }
        }
        match best_id {
            Some(id) => RayHit {
                distance: best_t,
                triangle: Some(id),
                hit: true,
            },
            None => RayHit::miss(max_distance),
        }
    }

    /// Reference raycast that tests every triangle. Ties on distance resolve
    /// to the lowest triangle id, as in [`Scene::raycast`].
    pub fn raycast_brute_force(
        &self,
        origin: DVec3,
        direction: DVec3,
        max_distance: f64,
    ) -> Result<RayHit, GeometryError> {
        Self::check_ray(direction, max_distance)?;
        let mut best_t = max_distance;
        let mut best_id: Option<u32> = None;
        for tri in &self.tris {
            if let Some(t) = intersect(origin, direction, tri) {
                if t > 0.0 && (t < best_t || (t == best_t && best_id.is_none_or(|b| tri.id < b))) {
                    best_t = t;
                    best_id = Some(tri.id);
                }
            }
        }
        Ok(match best_id {
            Some(id) => RayHit {
                distance: best_t,
                triangle: Some(id),
                hit: true,
            },
            None => RayHit::miss(max_distance),
        })
    }

    /// True if any triangle intersects the open interval `(tmin, tmax)`.
    pub(crate) fn any_hit(&self, orig: DVec3, dir: DVec3, tmin: f64, tmax: f64) -> bool {
        let nodes = self.bvh.nodes();
        if nodes.is_empty() || tmax <= tmin {
            return false;
        }
        let rb = RayBox::new(orig, dir);
        let mut stack = [0u32; 64];
        let mut sp = 1;
        while sp > 0 {
            sp -= 1;
            let node = &nodes[stack[sp] as usize];
            if rb.enter(&node.bounds, tmax).is_none() {
                continue;
            }
            if node.is_leaf() {
                let start = node.first as usize;
                for tri in &self.tris[start..start + node.count as usize] {
                    if let Some(t) = intersect(orig, dir, tri) {
                        if t > tmin && t < tmax {
                            return true;
                        }
                    }
                }
            } else {
                stack[sp] = node.first;
                stack[sp + 1] = node.first + 1;
                sp += 2;
            }
        }
        false
    }

    /// Line-of-sight ground truth: the open segment between `s` and `t`,
    /// shortened by [`CONTACT_EPSILON`] at both ends, crosses no triangle.
    /// Symmetric in its arguments.
    pub fn oracle_visibility(&self, s: DVec3, t: DVec3) -> Result<bool, GeometryError> {
        let (dir, len) = segment(s, t)?;
        Ok(!self.any_hit(s, dir, CONTACT_EPSILON, len - CONTACT_EPSILON))
    }

    /// Brute-force counterpart of [`Scene::oracle_visibility`].
    pub fn oracle_visibility_brute_force(&self, s: DVec3, t: DVec3) -> Result<bool, GeometryError> {
        let (dir, len) = segment(s, t)?;
        let blocked = self.tris.iter().any(|tri| {
            intersect(s, dir, tri).is_some_and(|h| h > CONTACT_EPSILON && h < len - CONTACT_EPSILON)
        });
        Ok(!blocked)
    }

    /// Number of surface crossings along a ray up to `max_distance`.
    pub fn count_crossings(&self, orig: DVec3, dir: DVec3, max_distance: f64) -> usize {
        let nodes = self.bvh.nodes();
        if nodes.is_empty() {
            return 0;
        }
        let rb = RayBox::new(orig, dir);
        let mut stack = vec![0u32];
        let mut hits = 0;
        while let Some(i) = stack.pop() {
            let node = &nodes[i as usize];
            if rb.enter(&node.bounds, max_distance).is_none() {
                continue;
            }
            if node.is_leaf() {
                let start = node.first as usize;
                hits += self.tris[start..start + node.count as usize]
                    .iter()
                    .filter(|tri| {
                        intersect(orig, dir, tri).is_some_and(|t| t > 0.0 && t <= max_distance)
                    })
                    .count();
            } else {
                stack.push(node.first);
                stack.push(node.first + 1);
            }
        }
        hits
    }

    /// Whether the nearest surface along `dir` is seen from behind, judged by
    /// the triangle's winding.
    pub fn hits_back_face(&self, orig: DVec3, dir: DVec3, max_distance: f64) -> bool {
        let hit = self.nearest(orig, dir, max_distance);
        match hit.triangle {
            Some(id) => {
                let [a, b, c] = self.mesh.triangle(id as usize);
                (b - a).cross(c - a).dot(dir) > 0.0
            }
            None => false,
        }
    }
}

fn segment(s: DVec3, t: DVec3) -> Result<(DVec3, f64), GeometryError> {
    let d = t - s;
    let len = d.length();
    if len == 0.0 {
        return Err(GeometryError::DegeneratePair);
    }
    Ok((d / len, len))
}
