//! Brute-force reference implementations for validation.
//!
//! Nothing here calls into the tracer or transfer code: ray/splat responses,
//! traversal and every integral are written out again in the plainest form.
//! Two tiers are provided:
//!
//! * *discrete*: the same gather lattice and dominant-splat indirection the
//!   transfer precompute uses, with the light given by its SH reconstruction.
//!   This should agree with relit transfer vectors to rounding error.
//! * *dense*: a fine midpoint rule over the hemisphere against the source
//!   radiance, with every hit along a ray contributing to interreflection.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::brdf::{eval, eval_diffuse, Rgb};
use crate::envlight::EnvLight;
use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::sh::SphereSampler;
use crate::tracer::Trace;

pub const SPLAT_CAP: usize = 2000;
pub const MIN_DENSE_SAMPLES: usize = 10_000;
pub const MAX_ORACLE_BOUNCES: u32 = 3;

const ALPHA_MAX: f64 = 0.999;
const MIN_TRANSMITTANCE: f64 = 1e-3;
const CUTOFF_M2: f64 = 9.0 + 1e-6;
const ORIGIN_OFFSET: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// Directions in the dense hemisphere rule (rounded up to `2·m²`).
    pub dense_samples: usize,
    /// Gather lattice size of the discrete tier; must match the precompute.
    pub gather_dirs: usize,
    pub t_filter: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { dense_samples: 20_000, gather_dirs: 64, t_filter: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleHit {
    pub id: u32,
    pub t: f64,
    pub alpha: f64,
    pub t_before: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleTrace {
    pub hits: Vec<OracleHit>,
    pub transmittance: f64,
    pub filtered: usize,
}

impl OracleTrace {
    /// Largest difference against a tracer result, relative to `max(1, |x|)`,
    /// or `None` when the hit sequences differ in length or ids.
    pub fn max_difference(&self, other: &Trace) -> Option<f64> {
        if self.hits.len() != other.hits.len() || self.filtered != other.stats.filtered {
            return None;
        }
        let mut worst = (self.transmittance - other.stats.transmittance).abs();
        for (a, b) in self.hits.iter().zip(&other.hits) {
            if a.id != b.id {
                return None;
            }
            for (x, y) in [(a.t, b.t), (a.alpha, b.alpha), (a.t_before, b.t_before), (a.weight, b.weight)] {
                worst = worst.max((x - y).abs() / x.abs().max(1.0));
            }
        }
        Some(worst)
    }
}

/// Result of the bounce oracle for one splat. Both entries include the
/// direct term; `discrete[b]` is the contribution of bounce `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BounceRadiance {
    pub discrete: Vec<Rgb>,
    pub discrete_total: Rgb,
    /// Dense-quadrature estimate where every hit contributes; `None` when not
    /// requested.
    pub free_total: Option<Rgb>,
}

/// Direction, dominant hit, W and V for one gather direction.
type LatticeSample = (Vector3<f64>, Option<usize>, f64, f64);

struct Gaussian {
    mean: Vector3<f64>,
    precision: Matrix3<f64>,
    opacity: f64,
    normal: Vector3<f64>,
    usable: bool,
}

pub struct Oracle<'a> {
    scene: &'a Scene,
    gaussians: Vec<Gaussian>,
    cfg: OracleConfig,
    eps: f64,
}

fn add(a: Rgb, b: Rgb) -> Rgb {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Orthonormal `(t, b)` completing `n` to a basis.
fn tangents(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t = helper.cross(n).normalize();
    (t, n.cross(&t))
}

/// Midpoint rule in `(cos θ, φ)` over the hemisphere around `n`.
pub fn dense_hemisphere(n: &Vector3<f64>, samples: usize) -> Vec<(Vector3<f64>, f64)> {
    let rings = ((samples as f64 / 2.0).sqrt().ceil() as usize).max(1);
    let per_ring = 2 * rings;
    let w = 2.0 * PI / (rings * per_ring) as f64;
    let (t, b) = tangents(n);
    let mut out = Vec::with_capacity(rings * per_ring);
    for i in 0..rings {
        let z = (i as f64 + 0.5) / rings as f64;
        let r = (1.0 - z * z).sqrt();
        for j in 0..per_ring {
            let phi = 2.0 * PI * (j as f64 + 0.5) / per_ring as f64;
            out.push((t * (r * phi.cos()) + b * (r * phi.sin()) + n * z, w));
        }
    }
    out
}

impl<'a> Oracle<'a> {
    pub fn new(scene: &'a Scene, cfg: OracleConfig) -> Result<Self> {
        if scene.len() > SPLAT_CAP {
            return Err(Error::input(format!(
                "the oracle handles at most {SPLAT_CAP} splats, scene has {}; crop the scene first",
                scene.len()
            )));
        }
        if cfg.dense_samples < MIN_DENSE_SAMPLES {
            return Err(Error::input(format!("dense oracle needs at least {MIN_DENSE_SAMPLES} samples")));
        }
        let gaussians = scene
            .splats()
            .iter()
            .map(|s| {
                let inv = s.covariance().try_inverse();
                Gaussian {
                    mean: s.mean,
                    precision: inv.unwrap_or_else(Matrix3::zeros),
                    opacity: s.opacity,
                    normal: s.normal,
                    usable: inv.is_some() && !s.flags.degenerate,
                }
            })
            .collect();
        let eps = if scene.is_empty() { 0.0 } else { ORIGIN_OFFSET * scene.diameter() };
        Ok(Oracle { scene, gaussians, cfg, eps })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    fn response(&self, g: &Gaussian, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64)> {
        // minimum over t of (o + t d − μ)ᵀ P (o + t d − μ), in closed form
        let e = g.mean - o;
        let pd = g.precision * d;
        let dpd = d.dot(&pd);
        if !(dpd > 0.0) {
            return None;
        }
        let epd = e.dot(&pd);
        let t = epd / dpd;
        if !(t >= 0.0) {
            return None;
        }
        // residual from the closest point keeps thin splats free of cancellation
        let r = e - t * d;
        let m2 = r.dot(&(g.precision * r)).max(0.0);
        if !(m2 <= CUTOFF_M2) {
            return None;
        }
        let a = (g.opacity * (-0.5 * m2).exp()).min(ALPHA_MAX);
        (a > 0.0).then_some((t, a))
    }

    /// Linear scan with the tracer's accumulation and filter rules.
    pub fn trace(&self, o: &Vector3<f64>, d: &Vector3<f64>, exclude: Option<usize>) -> OracleTrace {
        let mut cands: Vec<(f64, usize, f64)> = Vec::new();
        for (i, g) in self.gaussians.iter().enumerate() {
            if !g.usable || Some(i) == exclude {
                continue;
            }
            if let Some((t, a)) = self.response(g, o, d) {
                cands.push((t, i, a));
            }
        }
        cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut out = OracleTrace { hits: Vec::new(), transmittance: 1.0, filtered: 0 };
        for (t, i, a) in cands {
            let before = out.transmittance;
            let after = before * (1.0 - a);
            if after > self.cfg.t_filter {
                out.filtered += 1;
            } else {
                let facing = (-d.dot(&self.gaussians[i].normal)).max(0.0);
                out.hits.push(OracleHit { id: i as u32, t, alpha: a, t_before: before, weight: a * before * facing });
            }
            out.transmittance = after;
            if after < MIN_TRANSMITTANCE {
                break;
            }
        }
        out
    }

    pub fn trace_from(&self, id: usize, d: &Vector3<f64>) -> OracleTrace {
        self.trace(&(self.scene.splats()[id].mean + d * self.eps), d, Some(id))
    }

    /// `(dominant id, W, V)` along one gather direction.
    fn dominant(&self, id: usize, d: &Vector3<f64>) -> (Option<usize>, f64, f64) {
        let tr = self.trace_from(id, d);
        let mut best: Option<&OracleHit> = None;
        for h in &tr.hits {
            if best.is_none_or(|b| h.weight > b.weight) {
                best = Some(h);
            }
        }
        match best {
            Some(h) => (Some(h.id as usize), h.weight, tr.transmittance),
            None => (None, 0.0, tr.transmittance),
        }
    }

    fn brdf(&self, id: usize, wi: &Vector3<f64>, view: Option<&Vector3<f64>>) -> Rgb {
        let s = &self.scene.splats()[id];
        match view {
            Some(v) => eval(&s.material, &s.normal, wi, v),
            None => eval_diffuse(&s.material),
        }
    }

    /// Direct radiance by dense quadrature against the source radiance.
    pub fn direct_radiance(&self, id: usize, env: &EnvLight, view: Option<&Vector3<f64>>) -> Rgb {
        let n = self.scene.splats()[id].normal;
        let mut acc = [0.0; 3];
        for (d, w) in dense_hemisphere(&n, self.cfg.dense_samples) {
            let v = self.trace_from(id, &d).transmittance;
            let g = w * d.dot(&n) * v;
            let f = self.brdf(id, &d, view);
            let l = env.radiance(&d);
            for c in 0..3 {
                acc[c] += g * f[c] * l[c];
            }
        }
        acc
    }

    fn lattice(&self, id: usize) -> Vec<Vector3<f64>> {
        let n = self.scene.splats()[id].normal;
        SphereSampler::uniform_hemisphere(self.cfg.gather_dirs, n, 0)
            .expect("unit normal")
            .samples()
            .into_iter()
            .map(|(d, _)| d)
            .collect()
    }

    /// Bounce-by-bounce radiance of `id`. The discrete tier is exact for the
    /// precompute's discretization; the free tier (when `free`) gathers every
    /// hit with a dense rule. Bounces use the diffuse lobe; the final gather
    /// at `id` uses the full BRDF when `view` is given.
    pub fn bounce_radiance(
        &self,
        id: usize,
        env: &EnvLight,
        bounces: u32,
        view: Option<&Vector3<f64>>,
        free: bool,
    ) -> Result<BounceRadiance> {
        Ok(self.bounce_all(env, bounces, view, free, Some(id))?.swap_remove(0))
    }

    /// [`Oracle::bounce_radiance`] for every splat (or just `only`).
    pub fn bounce_all(
        &self,
        env: &EnvLight,
        bounces: u32,
        view: Option<&Vector3<f64>>,
        free: bool,
        only: Option<usize>,
    ) -> Result<Vec<BounceRadiance>> {
        if bounces > MAX_ORACLE_BOUNCES {
            return Err(Error::input(format!("oracle supports at most {MAX_ORACLE_BOUNCES} bounces")));
        }
        let n = self.scene.len();
        if let Some(i) = only {
            if i >= n {
                return Err(Error::input(format!("splat {i} out of range")));
            }
        }
        let k = self.cfg.gather_dirs;
        let w = 2.0 * PI / k as f64;

        let rows: Vec<Vec<LatticeSample>> = (0..n)
            .into_par_iter()
            .map(|i| {
                self.lattice(i)
                    .into_iter()
                    .map(|d| {
                        let (h, wt, v) = self.dominant(i, &d);
                        (d, h, wt, v)
                    })
                    .collect()
            })
            .collect();
        let normal = |i: usize| self.scene.splats()[i].normal;

        let direct = |i: usize, v: Option<&Vector3<f64>>| -> Rgb {
            let mut acc = [0.0; 3];
            for (d, _, _, vis) in &rows[i] {
                let g = w * d.dot(&normal(i)).max(0.0) * vis;
                let f = self.brdf(i, d, v);
                let l = env.reconstruct(d);
                for c in 0..3 {
                    acc[c] += g * f[c] * l[c];
                }
            }
            acc
        };
        let gather = |i: usize, prev: &[Rgb], v: Option<&Vector3<f64>>| -> Rgb {
            let mut acc = [0.0; 3];
            for (d, hit, wt, _) in &rows[i] {
                let Some(h) = hit else { continue };
                let g = w * d.dot(&normal(i)).max(0.0) * wt;
                let f = self.brdf(i, d, v);
                for c in 0..3 {
                    acc[c] += g * f[c] * prev[*h][c];
                }
            }
            acc
        };

        // diffuse outgoing radiance per level drives the chain
        let mut levels: Vec<Vec<Rgb>> = vec![(0..n).into_par_iter().map(|i| direct(i, None)).collect()];
        for b in 1..bounces as usize {
            let prev = &levels[b - 1];
            let next = (0..n).into_par_iter().map(|i| gather(i, prev, None)).collect();
            levels.push(next);
        }

        let free_levels = if free { Some(self.free_levels(env, bounces)) } else { None };

        let targets: Vec<usize> = match only {
            Some(i) => vec![i],
            None => (0..n).collect(),
        };
        Ok(targets
            .into_par_iter()
            .map(|i| {
                let mut parts = vec![if view.is_some() { direct(i, view) } else { levels[0][i] }];
                for b in 1..=bounces as usize {
                    parts.push(gather(i, &levels[b - 1], view));
                }
                let total = parts.iter().fold([0.0; 3], |a, p| add(a, *p));
                let free_total = free_levels.as_ref().map(|fl| {
                    let mut t = self.direct_radiance(i, env, view);
                    for b in 1..=bounces as usize {
                        t = add(t, self.free_gather(i, &fl[b - 1], view));
                    }
                    t
                });
                BounceRadiance { discrete: parts, discrete_total: total, free_total }
            })
            .collect())
    }

    /// Diffuse outgoing radiance per level from dense gathers over all hits.
    fn free_levels(&self, env: &EnvLight, bounces: u32) -> Vec<Vec<Rgb>> {
        let n = self.scene.len();
        let mut levels: Vec<Vec<Rgb>> = Vec::new();
        if bounces == 0 {
            return levels;
        }
        levels.push((0..n).into_par_iter().map(|i| self.direct_radiance(i, env, None)).collect());
        for b in 1..bounces as usize {
            let prev = &levels[b - 1];
            let next = (0..n).into_par_iter().map(|i| self.free_gather(i, prev, None)).collect();
            levels.push(next);
        }
        levels
    }

    /// Dense gather of `prev` over every front-facing hit, weighted by its
    /// share `α·T_before` of the ray.
    fn free_gather(&self, id: usize, prev: &[Rgb], view: Option<&Vector3<f64>>) -> Rgb {
        let n = self.scene.splats()[id].normal;
        let mut acc = [0.0; 3];
        for (d, w) in dense_hemisphere(&n, self.cfg.dense_samples) {
            let tr = self.trace_from(id, &d);
            let mut l = [0.0; 3];
            for h in &tr.hits {
                if d.dot(&self.gaussians[h.id as usize].normal) < 0.0 {
                    let share = h.alpha * h.t_before;
                    for c in 0..3 {
                        l[c] += share * prev[h.id as usize][c];
                    }
                }
            }
            if l == [0.0; 3] {
                continue;
            }
            let g = w * d.dot(&n);
            let f = self.brdf(id, &d, view);
            for c in 0..3 {
                acc[c] += g * f[c] * l[c];
            }
        }
        acc
    }
}

/// Directional albedo `∫ f(wi)·wi.z dwi` over the `+z` hemisphere for a lobe
/// of GGX width `alpha`, by a midpoint grid over GGX-distributed half vectors.
pub fn ggx_directional_albedo(
    alpha: f64,
    wo: &Vector3<f64>,
    f: impl Fn(&Vector3<f64>) -> f64 + Sync,
    nu: usize,
    nv: usize,
) -> f64 {
    let a2 = alpha * alpha;
    let rows: Vec<f64> = (0..nu)
        .into_par_iter()
        .map(|i| {
            let u = (i as f64 + 0.5) / nu as f64;
            let cos_h = 1.0 / (1.0 + a2 * u / (1.0 - u)).sqrt();
            let sin_h = (1.0 - cos_h * cos_h).max(0.0).sqrt();
            let mut s = 0.0;
            for j in 0..nv {
                let phi = 2.0 * PI * (j as f64 + 0.5) / nv as f64;
                let h = Vector3::new(sin_h * phi.cos(), sin_h * phi.sin(), cos_h);
                let o_h = wo.dot(&h);
                let wi = 2.0 * o_h * h - wo;
                if wi.z <= 0.0 || o_h <= 0.0 {
                    continue;
                }
                let dd = cos_h * cos_h * (a2 - 1.0) + 1.0;
                let pdf = a2 / (PI * dd * dd) * cos_h / (4.0 * o_h);
                s += f(&wi) * wi.z / pdf;
            }
            s
        })
        .collect();
    rows.iter().sum::<f64>() / (nu * nv) as f64
}
