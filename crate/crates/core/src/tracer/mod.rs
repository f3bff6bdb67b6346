//! Ray tracing through splats with front-to-back alpha accumulation, and
//! the per-splat index matrix used by self-transfer.

mod bvh;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

pub use bvh::{Aabb, Bvh, Node, NodeKind, LEAF_SIZE};

use crate::error::{Error, Result};
use crate::scene::{IndexBlob, Scene, Splat, EXTENT_SIGMAS};
use crate::sh::SphereSampler;

pub const ALPHA_MAX: f64 = 0.999;
/// Traversal stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-3;
pub const DEFAULT_T_FILTER: f64 = 0.9;
pub const DEFAULT_GATHER_DIRS: usize = 64;
pub const MIN_GATHER_DIRS: usize = 8;
/// Ray origins are pushed off the source splat by this fraction of the
/// scene diameter.
pub const ORIGIN_OFFSET: f64 = 1e-3;

const MAX_MAHALANOBIS2: f64 = EXTENT_SIGMAS * EXTENT_SIGMAS + 1e-6;
const BOX_PAD: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
struct Prepared {
    mean: Vector3<f64>,
    inv_cov: Matrix3<f64>,
    opacity: f64,
    normal: Vector3<f64>,
}

impl Prepared {
    fn new(s: &Splat) -> Self {
        Prepared { mean: s.mean, inv_cov: s.inverse_covariance(), opacity: s.opacity, normal: s.normal }
    }

    /// `(t*, α)` at the point of the ray closest to the mean in the
    /// Mahalanobis metric.
    #[inline]
    fn response(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64)> {
        let sd = self.inv_cov * d;
        let a = d.dot(&sd);
        if !(a > 0.0) {
            return None;
        }
        let t = sd.dot(&(self.mean - o)) / a;
        if !(t >= 0.0) {
            return None;
        }
        let r = o + d * t - self.mean;
        let m2 = r.dot(&(self.inv_cov * r));
        if !(m2 <= MAX_MAHALANOBIS2) {
            return None;
        }
        let alpha = (self.opacity * (-0.5 * m2).exp()).min(ALPHA_MAX);
        (alpha > 0.0).then_some((t, alpha))
    }
}

/// Peak response of a splat along a ray, as `(t*, α)`.
///
/// `None` when the peak lies behind the origin, outside the 3σ ellipsoid, or
/// when the splat is degenerate.
pub fn ray_splat_alpha(splat: &Splat, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
    if splat.flags.degenerate {
        return None;
    }
    Prepared::new(splat).response(origin, dir)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub id: u32,
    /// Distance along the ray to the peak response.
    pub t: f64,
    pub alpha: f64,
    pub t_before: f64,
    /// `α·T_before·max(−d·n, 0)`.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceStats {
    /// Final transmittance along the ray.
    pub transmittance: f64,
    /// Hits dropped by the same-surface filter.
    pub filtered: usize,
    /// Splat response evaluations performed.
    pub visited: usize,
    pub terminated_early: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    /// Accepted hits in order of increasing `t` (ties by id).
    pub hits: Vec<RayHit>,
    pub stats: TraceStats,
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    t: f64,
    id: u32,
    alpha: f64,
}

impl PartialEq for Cand {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Cand {}
impl PartialOrd for Cand {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Cand {
    // reversed: BinaryHeap pops the nearest first
    fn cmp(&self, o: &Self) -> Ordering {
        o.t.total_cmp(&self.t).then(o.id.cmp(&self.id))
    }
}

/// Reusable traversal buffers.
#[derive(Debug, Default)]
pub struct Scratch {
    nodes: BinaryHeap<Cand>,
    hits: BinaryHeap<Cand>,
    linear: Vec<Cand>,
}

struct Accumulator<'a, F: FnMut(RayHit)> {
    t: f64,
    t_filter: f64,
    dir: &'a Vector3<f64>,
    stats: TraceStats,
    on_hit: F,
}

impl<F: FnMut(RayHit)> Accumulator<'_, F> {
    /// Returns false once the ray is effectively opaque.
    fn push(&mut self, c: Cand, normal: &Vector3<f64>) -> bool {
        let t_before = self.t;
        let t_after = t_before * (1.0 - c.alpha);
        if t_after > self.t_filter {
            self.stats.filtered += 1;
        } else {
            let weight = c.alpha * t_before * (-self.dir.dot(normal)).max(0.0);
            (self.on_hit)(RayHit { id: c.id, t: c.t, alpha: c.alpha, t_before, weight });
        }
        self.t = t_after;
        if self.t < MIN_TRANSMITTANCE {
            self.stats.terminated_early = true;
            return false;
        }
        true
    }

    fn finish(mut self) -> TraceStats {
        self.stats.transmittance = self.t;
        self.stats
    }
}

/// Scene tracer. Degenerate splats are left out of the hierarchy.
#[derive(Debug)]
pub struct Tracer<'a> {
    scene: &'a Scene,
    prepared: Vec<Prepared>,
    bvh: Bvh,
    eps: f64,
    t_filter: f64,
    skipped: usize,
}

impl<'a> Tracer<'a> {
    pub fn new(scene: &'a Scene, t_filter: f64) -> Result<Self> {
        scene.require_non_empty()?;
        if !(0.0..=1.0).contains(&t_filter) {
            return Err(Error::input(format!("t_filter {t_filter} outside [0, 1]")));
        }
        let prepared: Vec<Prepared> = scene.splats().par_iter().map(Prepared::new).collect();
        let boxes: Vec<(u32, Aabb)> = scene
            .splats()
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.flags.degenerate)
            .map(|(i, s)| {
                let e = s.half_extents(EXTENT_SIGMAS) * (1.0 + BOX_PAD);
                let slack = Vector3::repeat(1e-12 * (1.0 + s.mean.amax()));
                (i as u32, Aabb { lo: s.mean - e - slack, hi: s.mean + e + slack })
            })
            .collect();
        let skipped = scene.len() - boxes.len();
        if skipped > 0 {
            log::warn!("{skipped} degenerate splats excluded from tracing");
        }
        Ok(Tracer {
            scene,
            prepared,
            bvh: Bvh::build(&boxes),
            eps: ORIGIN_OFFSET * scene.diameter(),
            t_filter,
            skipped,
        })
    }

    pub fn scene(&self) -> &Scene {
        self.scene
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    /// Number of degenerate splats that rays pass through.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn origin_offset(&self) -> f64 {
        self.eps
    }

    pub fn t_filter(&self) -> f64 {
        self.t_filter
    }

    /// Ray leaving splat `id` in direction `dir`, offset off its mean.
    pub fn trace_from(&self, id: usize, dir: &Vector3<f64>) -> Trace {
        let o = self.scene.splats()[id].mean + dir * self.eps;
        self.trace(&o, dir, Some(id as u32))
    }

    pub fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, exclude: Option<u32>) -> Trace {
        let mut hits = Vec::new();
        let stats = self.traverse(origin, dir, exclude, &mut Scratch::default(), |h| hits.push(h));
        Trace { hits, stats }
    }

    /// Same result as [`Tracer::trace`], testing every splat.
    pub fn trace_linear(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, exclude: Option<u32>) -> Trace {
        let mut hits = Vec::new();
        let stats = self.traverse_linear(origin, dir, exclude, &mut Scratch::default(), |h| hits.push(h));
        Trace { hits, stats }
    }

    /// Front-to-back BVH traversal. A candidate is finalized only when no
    /// unexpanded node can still produce a nearer one, so hits arrive in the
    /// same `(t, id)` order as a full sort.
    pub fn traverse(
        &self,
        o: &Vector3<f64>,
        d: &Vector3<f64>,
        exclude: Option<u32>,
        scratch: &mut Scratch,
        on_hit: impl FnMut(RayHit),
    ) -> TraceStats {
        let mut acc = Accumulator { t: 1.0, t_filter: self.t_filter, dir: d, stats: TraceStats::default(), on_hit };
        let nodes = self.bvh.nodes();
        scratch.nodes.clear();
        scratch.hits.clear();
        if nodes.is_empty() {
            return acc.finish();
        }
        let inv = d.map(|v| 1.0 / v);
        if let Some((t0, _)) = nodes[0].bounds.intersect(o, &inv) {
            scratch.nodes.push(Cand { t: t0, id: 0, alpha: 0.0 });
        }
        loop {
            let next_node = scratch.nodes.peek().map_or(f64::INFINITY, |c| c.t);
            if scratch.hits.peek().is_some_and(|h| h.t < next_node) {
                let h = scratch.hits.pop().unwrap();
                if !acc.push(h, &self.prepared[h.id as usize].normal) {
                    break;
                }
                continue;
            }
            let Some(c) = scratch.nodes.pop() else { break };
            match nodes[c.id as usize].kind {
                NodeKind::Inner { left, right } => {
                    for child in [left, right] {
                        if let Some((t0, _)) = nodes[child as usize].bounds.intersect(o, &inv) {
                            scratch.nodes.push(Cand { t: t0, id: child, alpha: 0.0 });
                        }
                    }
                }
                NodeKind::Leaf { start, count } => {
                    for &id in self.bvh.leaf_items(start, count) {
                        if Some(id) == exclude {
                            continue;
                        }
                        acc.stats.visited += 1;
                        if let Some((t, alpha)) = self.prepared[id as usize].response(o, d) {
                            scratch.hits.push(Cand { t, id, alpha });
                        }
                    }
                }
            }
        }
        acc.finish()
    }

    pub fn traverse_linear(
        &self,
        o: &Vector3<f64>,
        d: &Vector3<f64>,
        exclude: Option<u32>,
        scratch: &mut Scratch,
        on_hit: impl FnMut(RayHit),
    ) -> TraceStats {
        let mut acc = Accumulator { t: 1.0, t_filter: self.t_filter, dir: d, stats: TraceStats::default(), on_hit };
        scratch.linear.clear();
        for (i, s) in self.scene.splats().iter().enumerate() {
            let id = i as u32;
            if s.flags.degenerate || Some(id) == exclude {
                continue;
            }
            acc.stats.visited += 1;
            if let Some((t, alpha)) = self.prepared[i].response(o, d) {
                scratch.linear.push(Cand { t, id, alpha });
            }
        }
        // Cand's Ord is reversed for the heaps
        scratch.linear.sort_unstable_by(|a, b| b.cmp(a));
        for c in &scratch.linear {
            if !acc.push(*c, &self.prepared[c.id as usize].normal) {
                break;
            }
        }
        acc.finish()
    }

    /// Argmax-weight hit id (or −1), its weight, and final transmittance for
    /// a ray leaving splat `id`.
    pub fn gather(&self, id: usize, dir: &Vector3<f64>, scratch: &mut Scratch) -> (i32, f64, f64) {
        let o = self.scene.splats()[id].mean + dir * self.eps;
        let mut best: Option<RayHit> = None;
        let stats = self.traverse(&o, dir, Some(id as u32), scratch, |h| {
            if best.is_none_or(|b| h.weight > b.weight) {
                best = Some(h);
            }
        });
        match best {
            Some(b) => (b.id as i32, b.weight, stats.transmittance),
            None => (-1, 0.0, stats.transmittance),
        }
    }
}

/// The fixed gather lattice about a normal; identical in the local frame for
/// every splat.
pub fn gather_directions(normal: &Vector3<f64>, k: usize) -> Result<Vec<Vector3<f64>>> {
    Ok(SphereSampler::uniform_hemisphere(k, *normal, 0)?.samples().into_iter().map(|(d, _)| d).collect())
}

/// Traces `k` gather directions from every splat.
pub fn build_index_matrix(tracer: &Tracer, k: usize) -> Result<IndexBlob> {
    if k < MIN_GATHER_DIRS {
        return Err(Error::input(format!("need at least {MIN_GATHER_DIRS} gather directions, got {k}")));
    }
    let n = tracer.scene().len();
    let rows: Vec<Vec<(i32, f32, f32)>> = (0..n)
        .into_par_iter()
        .map_init(Scratch::default, |scratch, i| {
            let normal = tracer.scene().splats()[i].normal;
            gather_directions(&normal, k)
                .expect("splat normals are unit length")
                .iter()
                .map(|d| {
                    let (id, w, v) = tracer.gather(i, d, scratch);
                    (id, w as f32, v as f32)
                })
                .collect()
        })
        .collect();
    let mut blob = IndexBlob {
        gather_dirs: k,
        ids: Vec::with_capacity(n * k),
        weights: Vec::with_capacity(n * k),
        visibility: Vec::with_capacity(n * k),
    };
    for (id, w, v) in rows.into_iter().flatten() {
        blob.ids.push(id);
        blob.weights.push(w);
        blob.visibility.push(v);
    }
    Ok(blob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brdf::Material;
    use nalgebra::UnitQuaternion;

    fn disk(p: Vector3<f64>, normal: Vector3<f64>, radius: f64, opacity: f64) -> Splat {
        let rot = UnitQuaternion::rotation_between(&Vector3::z(), &normal)
            .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
        Splat::new(p, rot, Vector3::new(radius, radius, radius * 1e-2), opacity, normal, Material::default())
            .unwrap()
    }

    fn ball(p: Vector3<f64>, opacity: f64) -> Splat {
        Splat::new(p, UnitQuaternion::identity(), Vector3::repeat(0.1), opacity, Vector3::z(), Material::default())
            .unwrap()
    }

    #[test]
    fn alpha_through_mean_is_opacity() {
        let s = ball(Vector3::new(0.0, 0.0, 5.0), 0.9);
        let (t, a) = ray_splat_alpha(&s, &Vector3::zeros(), &Vector3::z()).unwrap();
        assert!((a - 0.9).abs() < 1e-12);
        assert!((t - 5.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_at_three_sigma() {
        let s = ball(Vector3::new(0.3, 0.0, 5.0), 1.0);
        let (_, a) = ray_splat_alpha(&s, &Vector3::zeros(), &Vector3::z()).unwrap();
        assert!((a - (-4.5f64).exp()).abs() < 1e-9, "{a}");
        let far = ball(Vector3::new(0.31, 0.0, 5.0), 1.0);
        assert!(ray_splat_alpha(&far, &Vector3::zeros(), &Vector3::z()).is_none());
    }

    #[test]
    fn behind_origin_rejected_and_alpha_clamped() {
        let s = ball(Vector3::new(0.0, 0.0, -5.0), 1.0);
        assert!(ray_splat_alpha(&s, &Vector3::zeros(), &Vector3::z()).is_none());
        let (_, a) = ray_splat_alpha(&s, &Vector3::zeros(), &-Vector3::z()).unwrap();
        assert_eq!(a, ALPHA_MAX);
    }

    #[test]
    fn empty_ray_has_full_transmittance() {
        let scene = Scene::new(vec![ball(Vector3::zeros(), 0.5)]).unwrap();
        let tr = Tracer::new(&scene, DEFAULT_T_FILTER).unwrap();
        let r = tr.trace_from(0, &Vector3::x());
        assert!(r.hits.is_empty());
        assert_eq!(r.stats.transmittance, 1.0);
    }

    #[test]
    fn opaque_facing_and_backface() {
        let d = Vector3::z();
        let src = ball(Vector3::zeros(), 0.5);
        let facing = disk(Vector3::new(0.0, 0.0, 2.0), -Vector3::z(), 0.5, 0.95);
        let scene = Scene::new(vec![src.clone(), facing]).unwrap();
        let tr = Tracer::new(&scene, DEFAULT_T_FILTER).unwrap();
        let r = tr.trace_from(0, &d);
        assert_eq!(r.hits.len(), 1);
        assert!((r.hits[0].weight - 0.95).abs() < 1e-12);
        assert!((r.stats.transmittance - 0.05).abs() < 1e-12);

        let back = disk(Vector3::new(0.0, 0.0, 2.0), Vector3::z(), 0.5, 0.95);
        let scene = Scene::new(vec![src, back]).unwrap();
        let tr = Tracer::new(&scene, DEFAULT_T_FILTER).unwrap();
        let r = tr.trace_from(0, &d);
        assert_eq!(r.hits.len(), 1);
        assert_eq!(r.hits[0].weight, 0.0);
        assert!((r.stats.transmittance - 0.05).abs() < 1e-12);
    }

    #[test]
    fn faint_first_hit_is_filtered_but_attenuates() {
        let scene = Scene::new(vec![
            ball(Vector3::zeros(), 0.5),
            disk(Vector3::new(0.0, 0.0, 1.0), -Vector3::z(), 0.5, 0.05),
        ])
        .unwrap();
        let tr = Tracer::new(&scene, DEFAULT_T_FILTER).unwrap();
        let r = tr.trace_from(0, &Vector3::z());
        assert!(r.hits.is_empty());
        assert_eq!(r.stats.filtered, 1);
        assert!((r.stats.transmittance - 0.95).abs() < 1e-12);
    }

    #[test]
    fn stack_conserves_energy_and_stops_early() {
        let mut splats = vec![ball(Vector3::zeros(), 0.5)];
        for i in 1..=12 {
            splats.push(disk(Vector3::new(0.0, 0.0, i as f64), -Vector3::z(), 0.5, 0.5));
        }
        let scene = Scene::new(splats).unwrap();
        let tr = Tracer::new(&scene, 1.0).unwrap();
        let r = tr.trace_from(0, &Vector3::z());
        assert!(r.stats.terminated_early);
        assert_eq!(r.hits.len(), 10);
        let absorbed: f64 = r.hits.iter().map(|h| h.alpha * h.t_before).sum();
        assert!((absorbed + r.stats.transmittance - 1.0).abs() < 1e-12);
        assert!(r.hits.windows(2).all(|w| w[0].t <= w[1].t));
        for h in &r.hits {
            assert!(h.weight <= h.alpha * h.t_before + 1e-15);
        }
    }

    #[test]
    fn isolated_splat_index_is_empty() {
        let scene = Scene::new(vec![ball(Vector3::zeros(), 0.9)]).unwrap();
        let tr = Tracer::new(&scene, DEFAULT_T_FILTER).unwrap();
        let ix = build_index_matrix(&tr, 16).unwrap();
        assert!(ix.ids.iter().all(|&i| i == -1));
        assert!(ix.visibility.iter().all(|&v| v == 1.0));
        assert!(build_index_matrix(&tr, 4).is_err());
    }

    #[test]
    fn gather_excludes_self_and_picks_max_weight() {
        let scene = Scene::new(vec![
            disk(Vector3::zeros(), Vector3::z(), 0.5, 0.9),
            disk(Vector3::new(0.0, 0.0, 1.0), -Vector3::z(), 5.0, 0.3),
            disk(Vector3::new(0.0, 0.0, 2.0), -Vector3::z(), 5.0, 0.99),
        ])
        .unwrap();
        let tr = Tracer::new(&scene, DEFAULT_T_FILTER).unwrap();
        let (id, w, v) = tr.gather(0, &Vector3::z(), &mut Scratch::default());
        // second layer: 0.99 * 0.7 > 0.3
        assert_eq!(id, 2);
        assert!((w - 0.693).abs() < 1e-9);
        assert!((v - 0.007).abs() < 1e-9);
        let ix = build_index_matrix(&tr, 32).unwrap();
        for (row, ids) in ix.ids.chunks(32).enumerate() {
            assert!(ids.iter().all(|&i| i != row as i32));
        }
    }

    #[test]
    fn bvh_matches_linear_on_random_scene() {
        let mut splats = Vec::new();
        let mut x = 0.5f64;
        let mut rnd = || {
            x = (x * 3.9 * (1.0 - x)).clamp(1e-6, 1.0 - 1e-6);
            x
        };
        for _ in 0..300 {
            let p = Vector3::new(rnd() * 4.0 - 2.0, rnd() * 4.0 - 2.0, rnd() * 4.0 - 2.0);
            let n = Vector3::new(rnd() - 0.5, rnd() - 0.5, rnd() - 0.5);
            splats.push(disk(p, n, 0.05 + 0.2 * rnd(), rnd()));
        }
        let scene = Scene::new(splats).unwrap();
        let tr = Tracer::new(&scene, DEFAULT_T_FILTER).unwrap();
        for i in 0..scene.len() {
            for d in gather_directions(&scene.splats()[i].normal, 8).unwrap() {
                let o = scene.splats()[i].mean + d * tr.origin_offset();
                let a = tr.trace(&o, &d, Some(i as u32));
                let b = tr.trace_linear(&o, &d, Some(i as u32));
                assert_eq!(a.hits, b.hits);
                assert_eq!(a.stats.transmittance, b.stats.transmittance);
                assert_eq!(a.stats.filtered, b.stats.filtered);
            }
        }
    }
}
