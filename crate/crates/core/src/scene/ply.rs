//! Reader and writer for the usual 3DGS checkpoint PLY layout.
//!
//! Stored values are pre-activation: opacity is a logit, scales are logs and
//! the quaternion (`rot_0` = w) is unnormalized. `f_rest_*` is ignored.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{Scene, Splat, SplatFlags, MAX_CONDITION};
use crate::brdf::Material;
use crate::error::{Error, Result};

/// DC coefficient of the degree-0 SH basis, used to map `f_dc` to color.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const MIN_SCALE: f64 = 1e-7;

const REQUIRED: [&str; 11] = [
    "x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, PartialEq)]
enum Format {
    BinaryLe,
    Ascii,
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
}

fn header_err(msg: impl Into<String>) -> Error {
    Error::Parse { index: 0, message: format!("PLY header: {}", msg.into()) }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| header_err("missing end_header"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| header_err("not ASCII"))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(header_err("missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", _] => format = Some(Format::BinaryLe),
            ["format", "ascii", _] => format = Some(Format::Ascii),
            ["format", other, _] => return Err(header_err(format!("unsupported format '{other}'"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| header_err(format!("bad count '{count}'")))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => {
                let el = elements.last().ok_or_else(|| header_err("property before element"))?;
                if el.name == "vertex" {
                    return Err(header_err("list properties on vertices are not supported"));
                }
                // Lists are only allowed on elements after the vertices, which we never read.
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| header_err("property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| header_err(format!("unknown type '{ty}'")))?;
                el.props.push((name.to_string(), ty));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(header_err(format!("unexpected line '{line}'"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| header_err("missing format line"))?,
        elements,
        body_offset: end + 11,
    })
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<Scene> {
    let bytes = fs::read(path.as_ref())?;
    let mut scene = read_ply(&bytes)?;
    if scene.name.is_none() {
        scene.name = path.as_ref().file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    Ok(scene)
}

pub fn read_ply(bytes: &[u8]) -> Result<Scene> {
    let header = parse_header(bytes)?;
    let mut skip = 0usize;
    let mut vertex = None;
    for el in &header.elements {
        if el.name == "vertex" {
            vertex = Some(el);
            break;
        }
        if header.format == Format::BinaryLe {
            if el.props.is_empty() && el.count > 0 {
                return Err(header_err("cannot skip list-only element before vertices"));
            }
            skip += el.count * el.props.iter().map(|(_, t)| t.size()).sum::<usize>();
        } else {
            skip += el.count;
        }
    }
    let vertex = vertex.ok_or_else(|| header_err("no vertex element"))?;
    let col: HashMap<&str, usize> =
        vertex.props.iter().enumerate().map(|(i, (n, _))| (n.as_str(), i)).collect();
    let missing: Vec<String> =
        REQUIRED.iter().filter(|p| !col.contains_key(**p)).map(|p| p.to_string()).collect();
    if !missing.is_empty() {
        return Err(Error::Schema { missing });
    }

    let rows = read_rows(bytes, &header, vertex, skip)?;
    let get = |row: &[f64], name: &str| col.get(name).map(|&i| row[i]);
    let has_normals = ["nx", "ny", "nz"].iter().all(|p| col.contains_key(p));
    let has_dc = ["f_dc_0", "f_dc_1", "f_dc_2"].iter().all(|p| col.contains_key(p));

    let mut splats = Vec::with_capacity(vertex.count);
    for (index, row) in rows.chunks(vertex.props.len()).enumerate() {
        if let Some(k) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                index,
                message: format!("property '{}' is not finite", vertex.props[k].0),
            });
        }
        let r = |n: &str| get(row, n).unwrap();
        let mean = Vector3::new(r("x"), r("y"), r("z"));
        let opacity = 1.0 / (1.0 + (-r("opacity")).exp());
        let scale = Vector3::new(r("scale_0").exp(), r("scale_1").exp(), r("scale_2").exp());
        let q = Quaternion::new(r("rot_0"), r("rot_1"), r("rot_2"), r("rot_3"));
        if q.norm() == 0.0 {
            return Err(Error::Parse { index, message: "zero rotation quaternion".into() });
        }
        let rotation = UnitQuaternion::from_quaternion(q);

        let albedo = if has_dc {
            [r("f_dc_0"), r("f_dc_1"), r("f_dc_2")].map(|c| (0.5 + SH_C0 * c).clamp(0.0, 1.0))
        } else {
            [0.5; 3]
        };
        let mut flags = SplatFlags::default();
        let mut normal = Vector3::z();
        if has_normals {
            let n = Vector3::new(r("nx"), r("ny"), r("nz"));
            if n.norm() > 0.0 {
                normal = n.normalize();
            } else {
                flags.normal_placeholder = true;
            }
        } else {
            flags.normal_placeholder = true;
        }
        // exp() can underflow to zero for very negative stored scales
        let scale = scale.map(|s| s.max(f64::MIN_POSITIVE));
        let cond = (scale.max() / scale.min()).powi(2);
        flags.degenerate = scale.min() < MIN_SCALE || cond > MAX_CONDITION;
        splats.push(Splat {
            mean,
            rotation,
            scale,
            opacity,
            normal,
            material: Material { albedo, ..Material::default() },
            flags,
        });
    }
    Scene::new(splats)
}

fn read_rows(bytes: &[u8], header: &Header, vertex: &Element, skip: usize) -> Result<Vec<f64>> {
    let nprops = vertex.props.len();
    let mut out = Vec::with_capacity(vertex.count * nprops);
    let body = &bytes[header.body_offset..];
    match header.format {
        Format::BinaryLe => {
            let stride: usize = vertex.props.iter().map(|(_, t)| t.size()).sum();
            let needed = skip + stride * vertex.count;
            if body.len() < needed {
                let complete = body.len().saturating_sub(skip) / stride.max(1);
                return Err(Error::Parse {
                    index: complete,
                    message: format!("file truncated: {} of {} vertex bytes present", body.len(), needed),
                });
            }
            for row in body[skip..needed].chunks_exact(stride) {
                let mut off = 0;
                for (_, t) in &vertex.props {
                    out.push(t.read_le(&row[off..]));
                    off += t.size();
                }
            }
        }
        Format::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| header_err("ASCII body is not UTF-8"))?;
            let mut lines = text.lines().skip(skip);
            for index in 0..vertex.count {
                let line = lines.next().ok_or_else(|| Error::Parse {
                    index,
                    message: "file truncated".into(),
                })?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse { index, message: e.to_string() })?;
                if vals.len() != nprops {
                    return Err(Error::Parse {
                        index,
                        message: format!("expected {nprops} values, found {}", vals.len()),
                    });
                }
                out.extend(vals);
            }
        }
    }
    Ok(out)
}

/// Writes a binary little-endian PLY with stored (pre-activation) values.
pub fn write_ply(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let props = [
        "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0",
        "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
    ];
    let mut buf = Vec::new();
    write!(buf, "ply\nformat binary_little_endian 1.0\nelement vertex {}\n", scene.len())?;
    for p in props {
        writeln!(buf, "property float {p}")?;
    }
    buf.extend_from_slice(b"end_header\n");
    for s in scene.splats() {
        let o = s.opacity.clamp(1e-7, 1.0 - 1e-7);
        let q = s.rotation.quaternion();
        let dc = s.material.albedo.map(|a| (a - 0.5) / SH_C0);
        let vals = [
            s.mean.x,
            s.mean.y,
            s.mean.z,
            s.normal.x,
            s.normal.y,
            s.normal.z,
            dc[0],
            dc[1],
            dc[2],
            (o / (1.0 - o)).ln(),
            s.scale.x.ln(),
            s.scale.y.ln(),
            s.scale.z.ln(),
            q.w,
            q.i,
            q.j,
            q.k,
        ];
        for v in vals {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ply_bytes(props: &[&str], rows: &[Vec<f32>]) -> Vec<u8> {
        let mut b = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", rows.len());
        for p in props {
            b.push_str(&format!("property float {p}\n"));
        }
        b.push_str("end_header\n");
        let mut bytes = b.into_bytes();
        for r in rows {
            for v in r {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    const BASE: [&str; 11] = REQUIRED;

    #[test]
    fn activations() {
        let row = vec![1.0, 2.0, 3.0, 0.0, -20.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0];
        let scene = read_ply(&ply_bytes(&BASE, &[row])).unwrap();
        let s = &scene.splats()[0];
        assert_eq!(s.opacity, 0.5);
        assert!((s.scale.x - 2.061e-9).abs() < 1e-11);
        assert!(s.flags.degenerate);
        assert!(s.flags.normal_placeholder);
        assert_eq!(s.normal, Vector3::z());
        assert_eq!(s.material.albedo, [0.5; 3]);
        assert!((s.rotation.quaternion().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dc_zero_is_mid_gray_and_normals_normalized() {
        let mut props = BASE.to_vec();
        props.extend(["nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]);
        let row = vec![0.0, 0.0, 0.0, 1.0, -1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0];
        let scene = read_ply(&ply_bytes(&props, &[row])).unwrap();
        let s = &scene.splats()[0];
        assert_eq!(s.material.albedo, [0.5; 3]);
        assert!((s.normal - Vector3::new(0.0, 0.6, 0.8)).norm() < 1e-7);
        assert!(!s.flags.normal_placeholder);
        assert!(!s.flags.degenerate);
    }

    #[test]
    fn missing_property_is_named() {
        let props = ["x", "y", "z", "opacity", "scale_0", "scale_1", "rot_0", "rot_1", "rot_2", "rot_3"];
        match read_ply(&ply_bytes(&props, &[])) {
            Err(Error::Schema { missing }) => assert_eq!(missing, vec!["scale_2".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_reports_element_index() {
        let mut ok = vec![0.0f32; 11];
        ok[7] = 1.0;
        let mut bad = ok.clone();
        bad[1] = f32::NAN;
        match read_ply(&ply_bytes(&BASE, &[ok.clone(), ok, bad])) {
            Err(Error::Parse { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_body_is_an_error() {
        let row = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let mut bytes = ply_bytes(&BASE, &[row.clone(), row]);
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(read_ply(&bytes), Err(Error::Parse { index: 1, .. })));
    }

    #[test]
    fn ascii_is_accepted() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty float opacity\nproperty float scale_0\nproperty float scale_1\nproperty float scale_2\nproperty float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\nend_header\n1 2 3 0 0 0 0 1 0 0 0\n";
        let scene = read_ply(text.as_bytes()).unwrap();
        assert_eq!(scene.splats()[0].mean, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn write_then_read() {
        let s = Splat::new(
            Vector3::new(0.5, -1.0, 2.0),
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
            Vector3::new(0.1, 0.2, 0.3),
            0.7,
            Vector3::new(0.0, 1.0, 1.0),
            Material { albedo: [0.2, 0.4, 0.9], ..Material::default() },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ply");
        write_ply(&Scene::new(vec![s.clone()]).unwrap(), &path).unwrap();
        let back = load_ply(&path).unwrap();
        let b = &back.splats()[0];
        assert_eq!(back.name.as_deref(), Some("a"));
        assert!((b.mean - s.mean).norm() < 1e-6);
        assert!((b.opacity - s.opacity).abs() < 1e-6);
        assert!((b.scale - s.scale).norm() < 1e-6);
        assert!(b.rotation.angle_to(&s.rotation) < 1e-6);
        assert!((b.normal - s.normal).norm() < 1e-6);
        for (x, y) in b.material.albedo.iter().zip(s.material.albedo) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
