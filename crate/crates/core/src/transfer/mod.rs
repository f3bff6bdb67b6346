//! Per-splat radiance transfer.
//!
//! All integrals are evaluated on the splat's gather directions (the same
//! lattice the index matrix was traced with) with weight `2π/K`. Arrays are
//! laid out `[splat][rgb][coeff]`; matrices `[splat][rgb][light coeff][out coeff]`.

mod relight;

use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;

pub use relight::{radiance_matrix, relight_matrix, relight_vectors, RgbLight};

use crate::brdf::{eval_diffuse, eval_specular, Material, Rgb};
use crate::error::{Error, Result};
use crate::scene::{IndexBlob, Scene};
use crate::sh::{eval_basis_into, gauss_legendre, Frame, ShOrder};
use crate::tracer::gather_directions;

pub const MAX_BOUNCES: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransferMode {
    /// View-independent `f_d` transfer vectors.
    Diffuse,
    /// `f_s + f_d` toward a fixed outgoing direction.
    View(Vector3<f64>),
    /// Glossy transfer matrices plus diffuse vectors.
    Matrix,
}

impl TransferMode {
    pub fn name(&self) -> &'static str {
        match self {
            TransferMode::Diffuse => "diffuse",
            TransferMode::View(_) => "view",
            TransferMode::Matrix => "matrix",
        }
    }

    pub fn view_dir(&self) -> Option<Vector3<f64>> {
        match self {
            TransferMode::View(v) => Some(*v),
            _ => None,
        }
    }

    /// Parses `diffuse`/`vector`, `view` (needs `view`) or `matrix`.
    pub fn parse(s: &str, view: Option<Vector3<f64>>) -> Result<Self> {
        match s {
            "diffuse" | "vector" => Ok(TransferMode::Diffuse),
            "matrix" => Ok(TransferMode::Matrix),
            "view" => {
                let v = view.ok_or_else(|| Error::input("view mode needs a view direction"))?;
                let n = v.norm();
                if !(n.is_finite() && n > 0.0) {
                    return Err(Error::input("view direction must be non-zero"));
                }
                Ok(TransferMode::View(v / n))
            }
            other => Err(Error::input(format!(
                "unknown transfer mode '{other}' (expected vector, view or matrix)"
            ))),
        }
    }
}

/// RGB SH transfer vectors for every splat.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferVectors {
    order: ShOrder,
    data: Vec<f64>,
}

impl TransferVectors {
    pub fn zeros(order: ShOrder, splats: usize) -> Self {
        TransferVectors { order, data: vec![0.0; splats * 3 * order.basis_len()] }
    }

    pub fn from_data(order: ShOrder, data: Vec<f64>) -> Result<Self> {
        if !data.len().is_multiple_of(3 * order.basis_len()) {
            return Err(Error::Shape(format!(
                "{} values is not a whole number of order-{order} RGB vectors",
                data.len()
            )));
        }
        Ok(TransferVectors { order, data })
    }

    pub fn order(&self) -> ShOrder {
        self.order
    }

    pub fn splat_count(&self) -> usize {
        self.data.len() / (3 * self.order.basis_len())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `3 × n²` coefficients of one splat.
    pub fn splat(&self, i: usize) -> &[f64] {
        let w = 3 * self.order.basis_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn channel(&self, i: usize, c: usize) -> &[f64] {
        let n2 = self.order.basis_len();
        &self.splat(i)[c * n2..(c + 1) * n2]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|v| *v as f32).collect()
    }

    fn check_same_shape(&self, other: &TransferVectors) -> Result<()> {
        if self.order != other.order || self.data.len() != other.data.len() {
            return Err(Error::Shape(format!(
                "transfer shapes differ: {} splats at order {} vs {} splats at order {}",
                self.splat_count(),
                self.order,
                other.splat_count(),
                other.order
            )));
        }
        Ok(())
    }
}

/// Element-wise `direct + indirect`.
pub fn combine_total(direct: &TransferVectors, indirect: &TransferVectors) -> Result<TransferVectors> {
    direct.check_same_shape(indirect)?;
    let data = direct.data.iter().zip(&indirect.data).map(|(a, b)| a + b).collect();
    Ok(TransferVectors { order: direct.order, data })
}

/// RGB transfer matrices for every splat.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrices {
    order: ShOrder,
    data: Vec<f64>,
}

impl TransferMatrices {
    pub fn order(&self) -> ShOrder {
        self.order
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Row-major `n² × n²` block (light index major) of one splat and channel.
    pub fn block(&self, i: usize, c: usize) -> &[f64] {
        let n2 = self.order.basis_len();
        let w = n2 * n2;
        &self.data[(i * 3 + c) * w..(i * 3 + c + 1) * w]
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|v| *v as f32).collect()
    }

    /// Folds view-independent diffuse vectors into the constant outgoing
    /// column, so they contribute `Σ_i l_i s_i` at every outgoing direction.
    pub fn add_diffuse(&mut self, s: &TransferVectors) -> Result<()> {
        let n2 = self.order.basis_len();
        if s.order != self.order || s.data.len() * n2 != self.data.len() {
            return Err(Error::Shape("diffuse vectors do not match the matrices".into()));
        }
        let inv_y0 = 2.0 * PI.sqrt();
        for (blk, vec) in self.data.chunks_exact_mut(n2 * n2).zip(s.data.chunks_exact(n2)) {
            for (i, v) in vec.iter().enumerate() {
                blk[i * n2] += inv_y0 * v;
            }
        }
        Ok(())
    }
}

fn check_index(scene: &Scene, index: &IndexBlob) -> Result<usize> {
    scene.require_non_empty()?;
    let k = index.gather_dirs;
    if k == 0 || index.ids.len() != scene.len() * k {
        return Err(Error::Shape(format!(
            "index matrix covers {} splats, scene has {}",
            index.splat_count(),
            scene.len()
        )));
    }
    Ok(k)
}

/// Projects a per-direction RGB integrand over each splat's gather lattice.
/// `f(splat, k, dir)` returns the integrand without the quadrature weight.
fn project_gather<F>(scene: &Scene, index: &IndexBlob, order: ShOrder, f: F) -> Result<TransferVectors>
where
    F: Fn(usize, usize, &Vector3<f64>) -> Rgb + Sync,
{
    let k = check_index(scene, index)?;
    let n2 = order.basis_len();
    let w = 2.0 * PI / k as f64;
    let mut out = TransferVectors::zeros(order, scene.len());
    out.data.par_chunks_mut(3 * n2).enumerate().for_each(|(i, dst)| {
        let normal = scene.splats()[i].normal;
        let dirs = gather_directions(&normal, k).expect("unit normal");
        let mut y = vec![0.0; n2];
        for (kk, d) in dirs.iter().enumerate() {
            let g = f(i, kk, d);
            if g == [0.0; 3] {
                continue;
            }
            eval_basis_into(d, order.bands(), &mut y);
            for c in 0..3 {
                let s = w * g[c];
                for (a, yj) in dst[c * n2..(c + 1) * n2].iter_mut().zip(&y) {
                    *a += s * yj;
                }
            }
        }
    });
    Ok(out)
}

/// `(2π/K) Σ_k f_d · max(d_k·n, 0) · V_k · Y(d_k)`.
pub fn direct_diffuse_transfer(scene: &Scene, index: &IndexBlob, order: ShOrder) -> Result<TransferVectors> {
    let k = index.gather_dirs;
    project_gather(scene, index, order, |i, kk, d| {
        let s = &scene.splats()[i];
        let fd = eval_diffuse(&s.material);
        let g = d.dot(&s.normal).max(0.0) * index.visibility[i * k + kk] as f64;
        fd.map(|f| f * g)
    })
}

/// Like [`direct_diffuse_transfer`] with the full BRDF toward `view`
/// (unit, pointing away from the surface).
pub fn view_conditioned_transfer(
    scene: &Scene,
    index: &IndexBlob,
    view: &Vector3<f64>,
    order: ShOrder,
) -> Result<TransferVectors> {
    let k = index.gather_dirs;
    project_gather(scene, index, order, |i, kk, d| {
        let s = &scene.splats()[i];
        let f = full_brdf(&s.material, &s.normal, d, view);
        let g = d.dot(&s.normal).max(0.0) * index.visibility[i * k + kk] as f64;
        f.map(|f| f * g)
    })
}

fn full_brdf(m: &Material, n: &Vector3<f64>, wi: &Vector3<f64>, wo: &Vector3<f64>) -> Rgb {
    let fd = eval_diffuse(m);
    let fs = eval_specular(m, n, wi, wo);
    [fd[0] + fs[0], fd[1] + fs[1], fd[2] + fs[2]]
}

/// Outgoing quadrature for glossy matrices as `(direction, weight)`:
/// Gauss-Legendre rings in `cos θ` about the normal times equispaced
/// azimuths. Weights sum to `2π`; polynomial lobes of low degree, including
/// the constant diffuse lobe, integrate exactly.
pub fn outgoing_samples(normal: &Vector3<f64>, count: usize) -> Result<Vec<(Vector3<f64>, f64)>> {
    if count == 0 {
        return Err(Error::input("need at least one outgoing sample"));
    }
    let n = normal.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::input("outgoing frame needs a non-zero normal"));
    }
    let frame = Frame::new(&(normal / n));
    let mut rings = ((count as f64 / 2.0).sqrt().floor() as usize).max(1);
    while !count.is_multiple_of(rings) {
        rings -= 1;
    }
    let per_ring = count / rings;
    let (nodes, weights) = gauss_legendre(rings);
    let mut out = Vec::with_capacity(count);
    for (r, (x, wz)) in nodes.iter().zip(&weights).enumerate() {
        // map [-1, 1] onto z in [0, 1]
        let z = 0.5 * (x + 1.0);
        let rad = (1.0 - z * z).max(0.0).sqrt();
        let w = 0.5 * wz * 2.0 * PI / per_ring as f64;
        for j in 0..per_ring {
            let phi = 2.0 * PI * (j as f64 + 0.5 * (r % 2) as f64) / per_ring as f64;
            out.push((frame.to_world(&Vector3::new(rad * phi.cos(), rad * phi.sin(), z)), w));
        }
    }
    Ok(out)
}

/// `t'_ij = Σ_k Σ_l w_l w_k Y_i(d_l) T(d_l, o_k) [Y_j(o_k) + Y_j(o_k*)]`
/// where `o_k*` is `o_k` mirrored through the tangent plane. The mirrored
/// term makes the outgoing expansion that of the even extension of the
/// hemispherical radiance, so a constant lobe reconstructs as a constant.
pub fn glossy_transfer_matrix(
    scene: &Scene,
    index: &IndexBlob,
    order: ShOrder,
    outgoing: usize,
) -> Result<TransferMatrices> {
    let k = check_index(scene, index)?;
    if outgoing == 0 {
        return Err(Error::input("need at least one outgoing sample"));
    }
    let n2 = order.basis_len();
    let bands = order.bands();
    let wl = 2.0 * PI / k as f64;
    let mut data = vec![0.0; scene.len() * 3 * n2 * n2];
    data.par_chunks_mut(3 * n2 * n2).enumerate().for_each(|(i, dst)| {
        let s = &scene.splats()[i];
        let dirs = gather_directions(&s.normal, k).expect("unit normal");
        let outs = outgoing_samples(&s.normal, outgoing).expect("unit normal");
        let mut y_in = vec![0.0; k * n2];
        let mut cos_v = vec![0.0; k];
        for (l, d) in dirs.iter().enumerate() {
            eval_basis_into(d, bands, &mut y_in[l * n2..(l + 1) * n2]);
            cos_v[l] = d.dot(&s.normal).max(0.0) * index.visibility[i * k + l] as f64;
        }
        let mut a = vec![0.0; 3 * n2];
        let mut y_o = vec![0.0; n2];
        let mut y_m = vec![0.0; n2];
        for (o, wk) in &outs {
            a.iter_mut().for_each(|v| *v = 0.0);
            for (l, d) in dirs.iter().enumerate() {
                if cos_v[l] == 0.0 {
                    continue;
                }
                let f = full_brdf(&s.material, &s.normal, d, o);
                for c in 0..3 {
                    let t = wl * f[c] * cos_v[l];
                    for (ai, yi) in a[c * n2..(c + 1) * n2].iter_mut().zip(&y_in[l * n2..(l + 1) * n2]) {
                        *ai += t * yi;
                    }
                }
            }
            let mirror = o - s.normal * (2.0 * o.dot(&s.normal));
            eval_basis_into(o, bands, &mut y_o);
            eval_basis_into(&mirror, bands, &mut y_m);
            for c in 0..3 {
                let blk = &mut dst[c * n2 * n2..(c + 1) * n2 * n2];
                for ii in 0..n2 {
                    let ai = wk * a[c * n2 + ii];
                    if ai == 0.0 {
                        continue;
                    }
                    for j in 0..n2 {
                        blk[ii * n2 + j] += ai * (y_o[j] + y_m[j]);
                    }
                }
            }
        }
    });
    Ok(TransferMatrices { order, data })
}

/// Interreflection transfer, one entry per bounce `b = 1..=B`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfTransfer {
    pub bounces: Vec<TransferVectors>,
}

impl SelfTransfer {
    /// `Σ_b T^(b)`, or zeros shaped like `like` when there are no bounces.
    pub fn total(&self, like: &TransferVectors) -> Result<TransferVectors> {
        let mut acc = TransferVectors::zeros(like.order, like.splat_count());
        for b in &self.bounces {
            acc = combine_total(&acc, b)?;
        }
        Ok(acc)
    }
}

/// Jacobi bounce chain over the index matrix.
///
/// `D^(b)_x = (2π/K) Σ_k f_d,x · max(d_k·n, 0) · W_k · D^(b−1)_hit(k)` with
/// `D^(0)` the direct diffuse transfer. In diffuse mode `T^(b) = D^(b)`; with
/// a view direction `T^(b)` uses `f_s + f_d` toward it over the same
/// `D^(b−1)` while the chain itself stays diffuse.
pub fn self_transfer(
    scene: &Scene,
    index: &IndexBlob,
    direct_diffuse: &TransferVectors,
    bounces: u32,
    view: Option<&Vector3<f64>>,
) -> Result<SelfTransfer> {
    if bounces > MAX_BOUNCES {
        return Err(Error::input(format!(
            "bounce count {bounces} exceeds {MAX_BOUNCES}; higher orders add negligible energy"
        )));
    }
    let k = check_index(scene, index)?;
    if direct_diffuse.splat_count() != scene.len() {
        return Err(Error::Shape("direct transfer does not match the scene".into()));
    }
    let order = direct_diffuse.order;
    let width = 3 * order.basis_len();
    let w = 2.0 * PI / k as f64;

    let gather = |prev: &TransferVectors, brdf: &(dyn Fn(usize, &Vector3<f64>) -> Rgb + Sync)| {
        let mut next = TransferVectors::zeros(order, scene.len());
        next.data.par_chunks_mut(width).enumerate().for_each(|(i, dst)| {
            let s = &scene.splats()[i];
            let dirs = gather_directions(&s.normal, k).expect("unit normal");
            let n2 = order.basis_len();
            for (kk, d) in dirs.iter().enumerate() {
                let hit = index.ids[i * k + kk];
                let wt = index.weights[i * k + kk] as f64;
                if hit < 0 || wt == 0.0 {
                    continue;
                }
                let f = brdf(i, d);
                let g = w * d.dot(&s.normal).max(0.0) * wt;
                let src = prev.splat(hit as usize);
                for c in 0..3 {
                    let s = g * f[c];
                    for (a, v) in dst[c * n2..(c + 1) * n2].iter_mut().zip(&src[c * n2..(c + 1) * n2]) {
                        *a += s * v;
                    }
                }
            }
        });
        next
    };

    let diffuse = |i: usize, _: &Vector3<f64>| eval_diffuse(&scene.splats()[i].material);
    let mut out = Vec::with_capacity(bounces as usize);
    let mut prev = direct_diffuse.clone();
    for _ in 0..bounces {
        let next = gather(&prev, &diffuse);
        match view {
            None => out.push(next.clone()),
            Some(v) => {
                let glossy = |i: usize, d: &Vector3<f64>| {
                    let s = &scene.splats()[i];
                    full_brdf(&s.material, &s.normal, d, v)
                };
                out.push(gather(&prev, &glossy));
            }
        }
        prev = next;
    }
    Ok(SelfTransfer { bounces: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Splat;
    use crate::sh::{reconstruct_raw, ShVector, SphereSampler};
    use crate::tracer::{build_index_matrix, Tracer, DEFAULT_T_FILTER};
    use nalgebra::UnitQuaternion;

    fn splat(mat: Material, normal: Vector3<f64>) -> Splat {
        Splat::new(Vector3::zeros(), UnitQuaternion::identity(), Vector3::repeat(0.1), 0.9, normal, mat).unwrap()
    }

    fn open_index(n: usize, k: usize) -> IndexBlob {
        IndexBlob { gather_dirs: k, ids: vec![-1; n * k], weights: vec![0.0; n * k], visibility: vec![1.0; n * k] }
    }

    fn order(n: u32) -> ShOrder {
        ShOrder::new(n).unwrap()
    }

    #[test]
    fn unoccluded_white_diffuse_coefficients() {
        let scene = Scene::new(vec![splat(Material::new([1.0; 3], 0.5, 0.0).unwrap(), Vector3::z())]).unwrap();
        let t = direct_diffuse_transfer(&scene, &open_index(1, 256), order(3)).unwrap();
        for c in 0..3 {
            let ch = t.channel(0, c);
            assert!((ch[0] - 0.2820948).abs() < 2e-3, "{}", ch[0]);
            assert!((ch[2] - 1.023327 / PI).abs() < 2e-3, "{}", ch[2]);
            assert!(ch[1].abs() < 2e-3 && ch[3].abs() < 2e-3);
        }
    }

    #[test]
    fn traced_isolated_splat_matches_open_index() {
        let scene = Scene::new(vec![splat(Material::default(), Vector3::new(1.0, 2.0, 3.0))]).unwrap();
        let tr = Tracer::new(&scene, DEFAULT_T_FILTER).unwrap();
        let ix = build_index_matrix(&tr, 64).unwrap();
        let a = direct_diffuse_transfer(&scene, &ix, order(3)).unwrap();
        let b = direct_diffuse_transfer(&scene, &open_index(1, 64), order(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn occluded_and_metal_are_zero() {
        let scene = Scene::new(vec![splat(Material::default(), Vector3::z())]).unwrap();
        let mut ix = open_index(1, 64);
        ix.visibility.iter_mut().for_each(|v| *v = 0.0);
        assert!(direct_diffuse_transfer(&scene, &ix, order(3)).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(view_conditioned_transfer(&scene, &ix, &Vector3::z(), order(3))
            .unwrap()
            .data()
            .iter()
            .all(|v| *v == 0.0));
        assert!(glossy_transfer_matrix(&scene, &ix, order(2), 16).unwrap().data().iter().all(|v| *v == 0.0));

        let metal = Scene::new(vec![splat(Material::new([0.9; 3], 0.3, 1.0).unwrap(), Vector3::z())]).unwrap();
        let t = direct_diffuse_transfer(&metal, &open_index(1, 64), order(3)).unwrap();
        assert!(t.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn order_nesting_is_exact() {
        let scene = Scene::new(vec![splat(Material::default(), Vector3::new(0.3, -0.4, 0.8))]).unwrap();
        let ix = open_index(1, 64);
        let hi = direct_diffuse_transfer(&scene, &ix, order(4)).unwrap();
        let lo = direct_diffuse_transfer(&scene, &ix, order(3)).unwrap();
        for c in 0..3 {
            assert_eq!(&hi.channel(0, c)[..9], lo.channel(0, c));
        }
    }

    #[test]
    fn rough_dielectric_view_close_to_diffuse() {
        let scene = Scene::new(vec![splat(Material::new([1.0; 3], 1.0, 0.0).unwrap(), Vector3::z())]).unwrap();
        let ix = open_index(1, 256);
        let v = Vector3::new(0.3, 0.0, 1.0).normalize();
        let d = direct_diffuse_transfer(&scene, &ix, order(3)).unwrap();
        let g = view_conditioned_transfer(&scene, &ix, &v, order(3)).unwrap();
        let peak = d.channel(0, 0).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in d.channel(0, 0).iter().zip(g.channel(0, 0)) {
            assert!((a - b).abs() <= 0.1 * peak.max(a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn sharp_metal_lobe_points_along_mirror() {
        let n = Vector3::z();
        let k = 256;
        let scene = Scene::new(vec![splat(Material::new([1.0; 3], 0.04, 1.0).unwrap(), n)]).unwrap();
        let dirs = gather_directions(&n, k).unwrap();
        let d = dirs.iter().find(|d| (d.z - 0.7).abs() < 0.02).unwrap();
        let v = 2.0 * d.dot(&n) * n - d;
        let o = order(6);
        let t = view_conditioned_transfer(&scene, &open_index(1, k), &v, o).unwrap();
        let best = SphereSampler::uniform_hemisphere(20_000, n, 0)
            .unwrap()
            .samples()
            .into_iter()
            .map(|(w, _)| (reconstruct_raw(t.channel(0, 0), o.bands(), &w), w))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
            .1;
        let angle = best.dot(d).clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle < 15.0, "lobe peak {angle} degrees off the reflected direction");
    }

    #[test]
    fn lambertian_matrix_is_constant_and_matches_vector() {
        let scene = Scene::new(vec![splat(Material::lambertian([1.0; 3]).unwrap(), Vector3::z())]).unwrap();
        let ix = open_index(1, 128);
        let o = order(3);
        let m = glossy_transfer_matrix(&scene, &ix, o, 64).unwrap();
        let v = direct_diffuse_transfer(&scene, &ix, o).unwrap();
        let light = ShVector::constant(o, 1.0);
        let vec_radiance: f64 = v.channel(0, 0).iter().zip(light.coeffs()).map(|(a, b)| a * b).sum();
        assert!((vec_radiance - 1.0).abs() < 2e-2);
        for w in SphereSampler::uniform_hemisphere(16, Vector3::z(), 3).unwrap().samples() {
            let r = radiance_matrix(m.block(0, 0), o, light.coeffs(), &w.0);
            assert!((r - 1.0).abs() < 2e-2, "{r}");
            assert!((r - vec_radiance).abs() < 1e-2 * vec_radiance, "{r} vs {vec_radiance}");
        }
    }

    #[test]
    fn outgoing_rule_integrates_low_degree() {
        for p in [1, 7, 16, 64, 100] {
            let n = Vector3::new(0.2, 0.5, -0.8).normalize();
            let d = outgoing_samples(&n, p).unwrap();
            assert_eq!(d.len(), p);
            assert!(d.iter().all(|(v, _)| v.dot(&n) > 0.0 && (v.norm() - 1.0).abs() < 1e-12));
            let area: f64 = d.iter().map(|(_, w)| w).sum();
            assert!((area - 2.0 * PI).abs() < 1e-12);
            let cos: f64 = d.iter().map(|(v, w)| w * v.dot(&n)).sum();
            assert!((cos - PI).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_self_transfer_is_zero_and_bounds_checked() {
        let scene = Scene::new(vec![splat(Material::default(), Vector3::z())]).unwrap();
        let ix = open_index(1, 16);
        let d = direct_diffuse_transfer(&scene, &ix, order(2)).unwrap();
        let st = self_transfer(&scene, &ix, &d, 2, None).unwrap();
        assert_eq!(st.bounces.len(), 2);
        assert!(st.total(&d).unwrap().data().iter().all(|v| *v == 0.0));
        assert_eq!(combine_total(&d, &st.total(&d).unwrap()).unwrap(), d);
        assert!(self_transfer(&scene, &ix, &d, 9, None).is_err());
    }

    #[test]
    fn combine_is_associative() {
        let o = order(2);
        let mk = |s: f64| TransferVectors::from_data(o, (0..24).map(|i| (i as f64 * s).sin()).collect()).unwrap();
        let (a, b, c) = (mk(0.5), mk(1.25), mk(2.0));
        let left = combine_total(&a, &combine_total(&b, &c).unwrap()).unwrap();
        let right = combine_total(&combine_total(&a, &b).unwrap(), &c).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(combine_total(&a, &TransferVectors::zeros(order(3), 2)).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(TransferMode::parse("vector", None).unwrap(), TransferMode::Diffuse);
        assert_eq!(TransferMode::parse("matrix", None).unwrap().name(), "matrix");
        assert!(TransferMode::parse("view", None).is_err());
        assert!(TransferMode::parse("bogus", None).is_err());
    }
}
