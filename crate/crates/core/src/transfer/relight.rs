//! Relight-time evaluation: dot products and matrix contractions.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sh::{eval_basis_into, ShOrder, ShVector};

/// One SH light per color channel.
pub type RgbLight = [ShVector; 3];

fn check_light(light: &RgbLight, order: ShOrder) -> Result<()> {
    for ch in light {
        if ch.order() != order {
            return Err(Error::OrderMismatch { bundle: order.bands(), light: ch.order().bands() });
        }
    }
    Ok(())
}

/// Per-splat RGB radiance `dot(L_c, T_c)`, optionally clamped at zero.
pub fn relight_vectors<T>(transfer: &[T], order: ShOrder, light: &RgbLight, clamp: bool) -> Result<Vec<[f64; 3]>>
where
    T: Copy + Into<f64> + Sync,
{
    check_light(light, order)?;
    let n2 = order.basis_len();
    if !transfer.len().is_multiple_of(3 * n2) {
        return Err(Error::Shape(format!("transfer length {} is not a multiple of 3 x {n2}", transfer.len())));
    }
    let l: [&[f64]; 3] = [light[0].coeffs(), light[1].coeffs(), light[2].coeffs()];
    Ok(transfer
        .par_chunks(3 * n2)
        .with_min_len(1024)
        .map(|t| {
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                let mut s = 0.0;
                for (a, b) in t[c * n2..(c + 1) * n2].iter().zip(l[c]) {
                    s += (*a).into() * b;
                }
                rgb[c] = if clamp { s.max(0.0) } else { s };
            }
            rgb
        })
        .collect())
}

/// `Σ_j (Σ_i l_i M_ij) Y_j(ω_o)` for one `n² × n²` block.
pub fn radiance_matrix<T: Copy + Into<f64>>(block: &[T], order: ShOrder, light: &[f64], wo: &Vector3<f64>) -> f64 {
    let n2 = order.basis_len();
    let mut y = vec![0.0; n2];
    eval_basis_into(wo, order.bands(), &mut y);
    let mut total = 0.0;
    for (i, li) in light.iter().enumerate() {
        if *li == 0.0 {
            continue;
        }
        let row = &block[i * n2..(i + 1) * n2];
        let r: f64 = row.iter().zip(&y).map(|(m, yj)| (*m).into() * yj).sum();
        total += li * r;
    }
    total
}

/// Matrix-path radiance with a per-splat outgoing direction.
pub fn relight_matrix<T>(
    matrix: &[T],
    order: ShOrder,
    light: &RgbLight,
    view_dirs: &[Vector3<f64>],
    clamp: bool,
) -> Result<Vec<[f64; 3]>>
where
    T: Copy + Into<f64> + Sync,
{
    check_light(light, order)?;
    let n2 = order.basis_len();
    let w = 3 * n2 * n2;
    if matrix.len() != view_dirs.len() * w {
        return Err(Error::Shape(format!(
            "matrix data has {} values, expected {} splats x {w}",
            matrix.len(),
            view_dirs.len()
        )));
    }
    Ok(matrix
        .par_chunks(w)
        .zip(view_dirs.par_iter())
        .map(|(m, v)| {
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                let r = radiance_matrix(&m[c * n2 * n2..(c + 1) * n2 * n2], order, light[c].coeffs(), v);
                rgb[c] = if clamp { r.max(0.0) } else { r };
            }
            rgb
        })
        .collect())
}
