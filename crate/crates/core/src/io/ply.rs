//! Binary little-endian PLY in the common splat layout, with one extra
//! `uchar sh_order` property. Values are stored as 32-bit floats.

use std::path::Path;

use nalgebra::{Quaternion, Vector3};

use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;
use crate::sh::{coeff_count, MAX_SH_COEFFS, MAX_SH_ORDER};

const REST: usize = MAX_SH_COEFFS - 1;
/// Float properties per vertex.
pub const FLOATS_PER_VERTEX: usize = 3 + 3 + 3 + 3 * REST + 1 + 3 + 4;
pub const BYTES_PER_VERTEX: usize = FLOATS_PER_VERTEX * 4 + 1;

fn float_names() -> Vec<String> {
    let mut n: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    n.extend((0..3).map(|i| format!("f_dc_{i}")));
    n.extend((0..3 * REST).map(|i| format!("f_rest_{i}")));
    n.push("opacity".into());
    n.extend((0..3).map(|i| format!("scale_{i}")));
    n.extend((0..4).map(|i| format!("rot_{i}")));
    n
}

fn header(count: usize) -> String {
    let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {count}\n");
    for name in float_names() {
        h.push_str(&format!("property float {name}\n"));
    }
    h.push_str("property uchar sh_order\nend_header\n");
    h
}

/// The 62 stored floats of one Gaussian. Rest coefficients are
/// channel-major (`f_rest_{c * 15 + k}` holds band coefficient `k + 1` of
/// channel `c`).
fn vertex_floats(g: &GaussianPrimitive) -> [f32; FLOATS_PER_VERTEX] {
    let mut v = [0.0f32; FLOATS_PER_VERTEX];
    let sh = g.sh_full();
    for i in 0..3 {
        v[i] = g.mean[i] as f32;
        v[6 + i] = sh[0][i] as f32;
    }
    for c in 0..3 {
        for k in 0..REST {
            v[9 + c * REST + k] = sh[k + 1][c] as f32;
        }
    }
    let o = 9 + 3 * REST;
    v[o] = g.opacity_logit as f32;
    for i in 0..3 {
        v[o + 1 + i] = g.log_scale[i] as f32;
    }
    let q = [g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k];
    for i in 0..4 {
        v[o + 4 + i] = q[i] as f32;
    }
    v
}

pub fn encode_ply(gaussians: &[GaussianPrimitive]) -> Vec<u8> {
    let head = header(gaussians.len());
    let mut out = Vec::with_capacity(head.len() + gaussians.len() * BYTES_PER_VERTEX);
    out.extend_from_slice(head.as_bytes());
    for g in gaussians {
        for f in vertex_floats(g) {
            out.extend_from_slice(&f.to_le_bytes());
        }
        out.push(g.sh_order());
    }
    out
}

pub fn save_ply(gaussians: &[GaussianPrimitive], path: &Path) -> Result<()> {
    std::fs::write(path, encode_ply(gaussians)).map_err(|e| Error::io(path, e))
}

pub fn load_ply(path: &Path) -> Result<Vec<GaussianPrimitive>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ply(&bytes).map_err(|e| match e {
        Error::Ply(m) => Error::Ply(format!("{}: {m}", path.display())),
        other => other,
    })
}

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

    fn read(self, b: &[u8]) -> f64 {
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

struct Property {
    name: String,
    kind: Scalar,
    offset: usize,
}

pub fn decode_ply(bytes: &[u8]) -> Result<Vec<GaussianPrimitive>> {
    let err = |m: String| Error::Ply(m);
    let end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| err("missing end_header".into()))?;
    let body_start = end + 11;
    let head = std::str::from_utf8(&bytes[..end]).map_err(|_| err("header is not ASCII".into()))?;
    let mut lines = head.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    if lines.next().map(|l| l.1) != Some("ply") {
        return Err(err("missing `ply` magic".into()));
    }
    let mut count = None;
    let mut props: Vec<Property> = Vec::new();
    let mut stride = 0;
    let mut in_vertex = false;
    for (ln, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(err(format!("line {ln}: unsupported format `{fmt}`")));
                }
            }
            ["element", name, n] => {
                let n: usize = n.parse().map_err(|_| err(format!("line {ln}: bad element count `{n}`")))?;
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n);
                } else if n != 0 {
                    return Err(err(format!("line {ln}: unexpected element `{name}`")));
                }
            }
            ["property", ty, name] if in_vertex => {
                let kind = Scalar::parse(ty).ok_or_else(|| err(format!("line {ln}: unknown property type `{ty}`")))?;
                props.push(Property { name: name.to_string(), kind, offset: stride });
                stride += kind.size();
            }
            ["property", "list", ..] if in_vertex => {
                return Err(err(format!("line {ln}: list properties are not supported")));
            }
            ["property", ..] => {}
            _ => return Err(err(format!("line {ln}: malformed header line `{line}`"))),
        }
    }
    let count = count.ok_or_else(|| err("no vertex element".into()))?;
    let find = |name: &str| props.iter().find(|p| p.name == name);
    let required = |name: &str| find(name).ok_or_else(|| err(format!("missing required property `{name}`")));
    let mut base: Vec<&Property> = Vec::new();
    for name in ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity"] {
        base.push(required(name)?);
    }
    let scale: Vec<&Property> = (0..3).map(|i| required(&format!("scale_{i}"))).collect::<Result<_>>()?;
    let rot: Vec<&Property> = (0..4).map(|i| required(&format!("rot_{i}"))).collect::<Result<_>>()?;
    let rest: Vec<&Property> = (0..3 * REST).map_while(|i| find(&format!("f_rest_{i}"))).collect();
    let per_channel = rest.len() / 3;
    let file_order = match per_channel {
        0 if rest.is_empty() => 0,
        3 if rest.len() == 9 => 1,
        8 if rest.len() == 24 => 2,
        15 if rest.len() == 45 => 3,
        _ => return Err(err(format!("{} f_rest properties do not form whole SH bands", rest.len()))),
    };
    let order_prop = find("sh_order");

    let body = &bytes[body_start..];
    let need = count.checked_mul(stride).ok_or_else(|| err("vertex count overflows".into()))?;
    if body.len() < need {
        return Err(err(format!("truncated payload: {} of {need} bytes", body.len())));
    }
    if body.len() > need {
        return Err(err(format!("{} trailing bytes after vertex data", body.len() - need)));
    }
    let mut out = Vec::with_capacity(count);
    for v in 0..count {
        let rec = &body[v * stride..(v + 1) * stride];
        let get = |p: &Property| p.kind.read(&rec[p.offset..]);
        let order = match order_prop {
            Some(p) => {
                let o = get(p);
                if o > MAX_SH_ORDER as f64 || o < 0.0 || o.fract() != 0.0 {
                    return Err(err(format!("vertex {v}: invalid sh_order {o}")));
                }
                o as u8
            }
            None => file_order,
        };
        if coeff_count(order) > per_channel + 1 {
            return Err(err(format!("vertex {v}: sh_order {order} exceeds stored bands")));
        }
        let mut coeffs = vec![[0.0; 3]; coeff_count(order)];
        coeffs[0] = [get(base[3]), get(base[4]), get(base[5])];
        for (k, c) in coeffs.iter_mut().enumerate().skip(1) {
            for ch in 0..3 {
                c[ch] = get(rest[ch * per_channel + k - 1]);
            }
        }
        let mut g = GaussianPrimitive::new(
            Vector3::new(get(base[0]), get(base[1]), get(base[2])),
            Quaternion::new(get(rot[0]), get(rot[1]), get(rot[2]), get(rot[3])),
            Vector3::new(get(scale[0]), get(scale[1]), get(scale[2])),
            get(base[6]),
            [0.0; 3],
        );
        g.set_sh(order, &coeffs);
        out.push(g);
    }
    Ok(out)
}
