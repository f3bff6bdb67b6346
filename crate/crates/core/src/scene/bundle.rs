//! On-disk relightable bundle.
//!
//! A bundle is a directory holding `manifest.json` and little-endian `f32`
//! blobs (`index.bin` mixes `i32` ids with `f32` values). Every blob is
//! described in the manifest by file, byte offset, byte length, dtype and
//! shape; loading checks all of these against the files and the counts.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{Scene, Splat};
use crate::brdf::Material;
use crate::error::{Error, Result};
use crate::sh::{ShOrder, SphereSampler};

pub const FORMAT: &str = "prtsplat-bundle";
pub const VERSION: u32 = 1;

/// Per-splat geometry record, in order: `(name, width in floats)`.
pub const GEOMETRY_FIELDS: [(&str, usize); 9] = [
    ("mean", 3),
    ("rotation_wxyz", 4),
    ("scale", 3),
    ("opacity", 1),
    ("normal", 3),
    ("albedo", 3),
    ("roughness", 1),
    ("metallic", 1),
    ("specular", 1),
];
pub const GEOMETRY_STRIDE: usize = 20;

/// Directions in the light-rotation table shipped to the viewer.
pub const ROTATION_TABLE_SIZE: usize = 512;
const ROTATION_TABLE_THETA: usize = 16;
const ROTATION_TABLE_PHI: usize = 32;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GEOMETRY_FILE: &str = "geometry.bin";
pub const TRANSFER_FILE: &str = "transfer.bin";
pub const TRANSFER_MATRIX_FILE: &str = "transfer_matrix.bin";
pub const INDEX_FILE: &str = "index.bin";

const INDEX_ENTRY_BYTES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldInfo {
    pub name: String,
    /// Offset within one record, in elements.
    pub offset: usize,
    pub width: usize,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub file: String,
    pub offset: u64,
    pub length: u64,
    pub dtype: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldInfo>,
    /// CRC-32 of the blob bytes; filled in on write, checked and cleared on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crc32: Option<u32>,
}

/// Precompute settings recorded alongside the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub bounces: u32,
    pub gather_dirs: usize,
    pub t_filter: f64,
    /// `diffuse`, `view` or `matrix`.
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_dir: Option<[f64; 3]>,
    pub seed: u64,
}

impl Default for BundleMeta {
    fn default() -> Self {
        BundleMeta {
            bounces: 0,
            gather_dirs: 64,
            t_filter: 0.9,
            mode: "diffuse".into(),
            view_dir: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub splat_count: usize,
    pub sh_order: ShOrder,
    pub coeffs_per_channel: usize,
    pub channel_layout: String,
    #[serde(flatten)]
    pub meta: BundleMeta,
    pub geometry: BlobInfo,
    pub transfer: BlobInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer_matrix: Option<BlobInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<BlobInfo>,
    /// `[x, y, z, weight]` quadrature rows for re-projection rotation.
    pub rotation_table: Vec<[f64; 4]>,
    /// RGB light coefficients the bundle was last relit with, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_sh: Option<[Vec<f64>; 3]>,
}

/// Per-splat, per-direction gather results: hit id (`-1` for none), weight
/// `W` and visibility `V`. Row-major `[splat][direction]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndexBlob {
    pub gather_dirs: usize,
    pub ids: Vec<i32>,
    pub weights: Vec<f32>,
    pub visibility: Vec<f32>,
}

impl IndexBlob {
    pub fn splat_count(&self) -> usize {
        self.ids.len().checked_div(self.gather_dirs).unwrap_or(0)
    }

    fn check(&self, splats: usize) -> Result<()> {
        let n = splats * self.gather_dirs;
        if self.ids.len() != n || self.weights.len() != n || self.visibility.len() != n {
            return Err(Error::Shape(format!(
                "index arrays must have {splats} x {} entries",
                self.gather_dirs
            )));
        }
        Ok(())
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.ids.len() * INDEX_ENTRY_BYTES);
        for ((id, w), v) in self.ids.iter().zip(&self.weights).zip(&self.visibility) {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&w.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn from_bytes(bytes: &[u8], gather_dirs: usize) -> Self {
        let n = bytes.len() / INDEX_ENTRY_BYTES;
        let mut b = IndexBlob {
            gather_dirs,
            ids: Vec::with_capacity(n),
            weights: Vec::with_capacity(n),
            visibility: Vec::with_capacity(n),
        };
        for e in bytes.chunks_exact(INDEX_ENTRY_BYTES) {
            b.ids.push(i32::from_le_bytes(e[0..4].try_into().unwrap()));
            b.weights.push(f32::from_le_bytes(e[4..8].try_into().unwrap()));
            b.visibility.push(f32::from_le_bytes(e[8..12].try_into().unwrap()));
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifest: BundleManifest,
    /// `[splat][GEOMETRY_STRIDE]`.
    pub geometry: Vec<f32>,
    /// `[splat][rgb][n²]`.
    pub transfer: Vec<f32>,
    /// `[splat][rgb][n²][n²]`, light index major.
    pub transfer_matrix: Option<Vec<f32>>,
    pub index: Option<IndexBlob>,
}

fn f32_blob(file: &str, shape: Vec<usize>) -> BlobInfo {
    let count: usize = shape.iter().product();
    BlobInfo {
        file: file.into(),
        offset: 0,
        length: (count * 4) as u64,
        dtype: "<f4".into(),
        shape,
        fields: Vec::new(),
        crc32: None,
    }
}

fn geometry_blob(n: usize) -> BlobInfo {
    let mut info = f32_blob(GEOMETRY_FILE, vec![n, GEOMETRY_STRIDE]);
    let mut offset = 0;
    info.fields = GEOMETRY_FIELDS
        .iter()
        .map(|(name, width)| {
            let f = FieldInfo { name: name.to_string(), offset, width: *width, dtype: "<f4".into() };
            offset += width;
            f
        })
        .collect();
    info
}

fn index_blob_info(n: usize, k: usize) -> BlobInfo {
    BlobInfo {
        file: INDEX_FILE.into(),
        offset: 0,
        length: (n * k * INDEX_ENTRY_BYTES) as u64,
        dtype: "record".into(),
        shape: vec![n, k],
        fields: vec![
            FieldInfo { name: "id".into(), offset: 0, width: 1, dtype: "<i4".into() },
            FieldInfo { name: "weight".into(), offset: 1, width: 1, dtype: "<f4".into() },
            FieldInfo { name: "visibility".into(), offset: 2, width: 1, dtype: "<f4".into() },
        ],
        crc32: None,
    }
}

/// The fixed quadrature table used for light rotation by consumers that
/// cannot run the projection code themselves.
pub fn rotation_table() -> Vec<[f64; 4]> {
    SphereSampler::gauss_product(ROTATION_TABLE_THETA, ROTATION_TABLE_PHI)
        .expect("non-zero table size")
        .samples()
        .into_iter()
        .map(|(d, w)| [d.x, d.y, d.z, w])
        .collect()
}

fn encode_geometry(scene: &Scene) -> Vec<f32> {
    let mut g = Vec::with_capacity(scene.len() * GEOMETRY_STRIDE);
    for s in scene.splats() {
        let q = s.rotation.quaternion();
        let m = &s.material;
        let rec: [f64; GEOMETRY_STRIDE] = [
            s.mean.x, s.mean.y, s.mean.z, q.w, q.i, q.j, q.k, s.scale.x, s.scale.y, s.scale.z,
            s.opacity, s.normal.x, s.normal.y, s.normal.z, m.albedo[0], m.albedo[1], m.albedo[2],
            m.roughness, m.metallic, m.specular,
        ];
        g.extend(rec.iter().map(|v| *v as f32));
    }
    g
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptBundle(msg.into())
}

fn to_le_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn from_le_bytes(b: &[u8]) -> Vec<f32> {
    b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

impl Bundle {
    /// Packs a scene and its transfer vectors (`[splat][rgb][n²]`).
    pub fn new(scene: &Scene, order: ShOrder, transfer: Vec<f32>, meta: BundleMeta) -> Result<Self> {
        let n = scene.len();
        let c = order.basis_len();
        if transfer.len() != n * 3 * c {
            return Err(Error::Shape(format!(
                "transfer has {} floats, expected {n} splats x 3 x {c}",
                transfer.len()
            )));
        }
        if let Some(i) = transfer.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("transfer value {i} is not finite")));
        }
        let manifest = BundleManifest {
            format: FORMAT.into(),
            version: VERSION,
            name: scene.name.clone(),
            splat_count: n,
            sh_order: order,
            coeffs_per_channel: c,
            channel_layout: "splat-major: [splat][r,g,b][coeff], coeff index l*l+l+m".into(),
            meta,
            geometry: geometry_blob(n),
            transfer: f32_blob(TRANSFER_FILE, vec![n, 3, c]),
            transfer_matrix: None,
            index: None,
            rotation_table: rotation_table(),
            env_sh: None,
        };
        Ok(Bundle {
            manifest,
            geometry: encode_geometry(scene),
            transfer,
            transfer_matrix: None,
            index: None,
        })
    }

    pub fn with_transfer_matrix(mut self, m: Vec<f32>) -> Result<Self> {
        let n = self.splat_count();
        let c = self.order().basis_len();
        if m.len() != n * 3 * c * c {
            return Err(Error::Shape(format!(
                "transfer matrix has {} floats, expected {n} x 3 x {c} x {c}",
                m.len()
            )));
        }
        self.manifest.transfer_matrix = Some(f32_blob(TRANSFER_MATRIX_FILE, vec![n, 3, c, c]));
        self.transfer_matrix = Some(m);
        Ok(self)
    }

    pub fn with_index(mut self, index: IndexBlob) -> Result<Self> {
        index.check(self.splat_count())?;
        self.manifest.index = Some(index_blob_info(self.splat_count(), index.gather_dirs));
        self.index = Some(index);
        Ok(self)
    }

    pub fn with_env_sh(mut self, rgb: [Vec<f64>; 3]) -> Result<Self> {
        let c = self.order().basis_len();
        if rgb.iter().any(|ch| ch.len() != c) {
            return Err(Error::Shape(format!("env SH must have {c} coefficients per channel")));
        }
        self.manifest.env_sh = Some(rgb);
        Ok(self)
    }

    pub fn splat_count(&self) -> usize {
        self.manifest.splat_count
    }

    pub fn order(&self) -> ShOrder {
        self.manifest.sh_order
    }

    /// The `3 × n²` transfer coefficients of one splat.
    pub fn transfer_of(&self, splat: usize) -> &[f32] {
        let w = 3 * self.order().basis_len();
        &self.transfer[splat * w..(splat + 1) * w]
    }

    /// Rebuilds the scene stored in the geometry blob.
    pub fn scene(&self) -> Result<Scene> {
        let mut splats = Vec::with_capacity(self.splat_count());
        for (i, r) in self.geometry.chunks_exact(GEOMETRY_STRIDE).enumerate() {
            let r: Vec<f64> = r.iter().map(|v| *v as f64).collect();
            let q = Quaternion::new(r[3], r[4], r[5], r[6]);
            let mat = Material {
                albedo: [r[14], r[15], r[16]],
                roughness: r[17],
                metallic: r[18],
                specular: r[19],
            };
            let s = Splat::new(
                Vector3::new(r[0], r[1], r[2]),
                UnitQuaternion::from_quaternion(q),
                Vector3::new(r[7], r[8], r[9]),
                r[10],
                Vector3::new(r[11], r[12], r[13]),
                mat,
            )
            .map_err(|e| corrupt(format!("geometry record {i}: {e}")))?;
            splats.push(s);
        }
        let scene = Scene::new(splats)?;
        Ok(match &self.manifest.name {
            Some(n) => scene.with_name(n.clone()),
            None => scene,
        })
    }

    /// Writes all blobs and the manifest into `dir`, creating it if needed.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut manifest = self.manifest.clone();
        let put = |info: &mut BlobInfo, bytes: Vec<u8>| -> Result<()> {
            info.crc32 = Some(crc32fast::hash(&bytes));
            fs::write(dir.join(&info.file), bytes)?;
            Ok(())
        };
        put(&mut manifest.geometry, to_le_bytes(&self.geometry))?;
        put(&mut manifest.transfer, to_le_bytes(&self.transfer))?;
        let stale = |f: &str| -> Result<()> {
            let p = dir.join(f);
            if p.exists() {
                fs::remove_file(p)?;
            }
            Ok(())
        };
        match (&self.transfer_matrix, manifest.transfer_matrix.as_mut()) {
            (Some(m), Some(info)) => put(info, to_le_bytes(m))?,
            _ => stale(TRANSFER_MATRIX_FILE)?,
        }
        match (&self.index, manifest.index.as_mut()) {
            (Some(ix), Some(info)) => put(info, ix.to_bytes())?,
            _ => stale(INDEX_FILE)?,
        }
        let mut json = serde_json::to_string_pretty(&manifest)?;
        json.push('\n');
        fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    /// Loads and fully checks a bundle directory. Any disagreement between
    /// manifest and blobs is reported as [`Error::CorruptBundle`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))
            .map_err(|e| corrupt(format!("cannot read {MANIFEST_FILE}: {e}")))?;
        let mut manifest: BundleManifest =
            serde_json::from_str(&text).map_err(|e| corrupt(format!("{MANIFEST_FILE}: {e}")))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(corrupt(format!(
                "unsupported format {} v{}",
                manifest.format, manifest.version
            )));
        }
        let n = manifest.splat_count;
        let c = manifest.sh_order.basis_len();
        if manifest.coeffs_per_channel != c {
            return Err(corrupt(format!(
                "coeffs_per_channel {} does not match order {}",
                manifest.coeffs_per_channel, manifest.sh_order
            )));
        }
        if manifest.rotation_table.len() != ROTATION_TABLE_SIZE {
            return Err(corrupt("rotation table has the wrong size"));
        }

        let geometry = from_le_bytes(&read_blob(dir, &manifest.geometry, &[n, GEOMETRY_STRIDE], 4)?);
        let transfer = from_le_bytes(&read_blob(dir, &manifest.transfer, &[n, 3, c], 4)?);
        let transfer_matrix = match &manifest.transfer_matrix {
            Some(info) => Some(from_le_bytes(&read_blob(dir, info, &[n, 3, c, c], 4)?)),
            None => None,
        };
        let index = match &manifest.index {
            Some(info) => {
                let k = *info.shape.get(1).ok_or_else(|| corrupt("index shape"))?;
                let bytes = read_blob(dir, info, &[n, k], INDEX_ENTRY_BYTES)?;
                let ix = IndexBlob::from_bytes(&bytes, k);
                if ix.ids.iter().any(|&id| id < -1 || id as i64 >= n as i64) {
                    return Err(corrupt("index blob holds an out-of-range splat id"));
                }
                if !ix.weights.iter().chain(&ix.visibility).all(|v| v.is_finite()) {
                    return Err(corrupt("index blob holds non-finite values"));
                }
                Some(ix)
            }
            None => None,
        };
        for (name, data) in [("geometry", Some(&geometry)), ("transfer", Some(&transfer)), ("transfer_matrix", transfer_matrix.as_ref())] {
            if let Some(d) = data {
                if let Some(i) = d.iter().position(|v| !v.is_finite()) {
                    return Err(corrupt(format!("{name} value {i} is not finite")));
                }
            }
        }
        manifest.geometry.crc32 = None;
        manifest.transfer.crc32 = None;
        for info in [manifest.transfer_matrix.as_mut(), manifest.index.as_mut()].into_iter().flatten() {
            info.crc32 = None;
        }
        let bundle = Bundle { manifest, geometry, transfer, transfer_matrix, index };
        bundle.scene()?;
        Ok(bundle)
    }
}

fn read_blob(dir: &Path, info: &BlobInfo, shape: &[usize], elem: usize) -> Result<Vec<u8>> {
    if info.shape != shape {
        return Err(corrupt(format!(
            "{}: manifest shape {:?} does not match counts {:?}",
            info.file, info.shape, shape
        )));
    }
    let expected = (shape.iter().product::<usize>() * elem) as u64;
    if info.length != expected {
        return Err(corrupt(format!(
            "{}: manifest length {} but shape needs {} bytes",
            info.file, info.length, expected
        )));
    }
    if info.file.contains(['/', '\\']) || info.file.starts_with('.') {
        return Err(corrupt(format!("blob file name '{}' is not a plain name", info.file)));
    }
    let path: PathBuf = dir.join(&info.file);
    let bytes = fs::read(&path).map_err(|e| corrupt(format!("cannot read {}: {e}", info.file)))?;
    let end = info.offset.checked_add(info.length).ok_or_else(|| corrupt("blob range overflows"))?;
    if bytes.len() as u64 != end {
        return Err(corrupt(format!(
            "{}: file has {} bytes, manifest expects {}",
            info.file,
            bytes.len(),
            end
        )));
    }
    let blob = &bytes[info.offset as usize..];
    if let Some(expected) = info.crc32 {
        let actual = crc32fast::hash(blob);
        if actual != expected {
            return Err(corrupt(format!("{}: checksum {actual:08x} does not match manifest {expected:08x}", info.file)));
        }
    }
    Ok(blob.to_vec())
}
