use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::fusion::PointCloud;

use super::{atomic_write, read_bytes};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    BinaryLittleEndian,
    Ascii,
}

impl std::str::FromStr for PlyFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "binary_little_endian" => Ok(Self::BinaryLittleEndian),
            "ascii" => Ok(Self::Ascii),
            other => Err(Error::InvalidConfig(format!("unknown PLY format '{other}'"))),
        }
    }
}

/// Vertices with `float x y z`, `uchar red green blue` and `uchar support`.
/// Support above 255 saturates.
pub fn encode_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let fmt = match format {
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::Ascii => "ascii",
    };
    let mut out = format!(
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar support\nend_header\n",
        cloud.len()
    )
    .into_bytes();
    for ((p, c), s) in cloud.points.iter().zip(&cloud.colors).zip(&cloud.support) {
        let s = (*s).min(255) as u8;
        let xyz = [p.x as f32, p.y as f32, p.z as f32];
        match format {
            PlyFormat::BinaryLittleEndian => {
                for v in xyz {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(c);
                out.push(s);
            }
            PlyFormat::Ascii => {
                out.extend_from_slice(
                    format!("{} {} {} {} {} {} {}\n", xyz[0], xyz[1], xyz[2], c[0], c[1], c[2], s).as_bytes(),
                );
            }
        }
    }
    out
}

pub fn write_ply(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    atomic_write(path, &encode_ply(cloud, format))
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    decode_ply(&read_bytes(path)?, path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Ascii,
    Little,
    Big,
}

#[derive(Debug, Clone, Copy)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    /// Parses at the declared precision so ASCII and binary files agree.
    fn parse_text(self, t: &str) -> Option<f64> {
        match self {
            Self::F32 => t.parse::<f32>().ok().map(f64::from),
            _ => t.parse().ok(),
        }
    }

    fn read(self, b: &[u8], enc: Encoding) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().unwrap();
                (if enc == Encoding::Big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => num!(i16, 2),
            Self::U16 => num!(u16, 2),
            Self::I32 => num!(i32, 4),
            Self::U32 => num!(u32, 4),
            Self::F32 => num!(f32, 4),
            Self::F64 => num!(f64, 8),
        }
    }
}

/// Reads the vertex element of an ASCII or binary PLY. Vertex positions are
/// required; `red green blue` and `support` are optional.
pub fn decode_ply(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let bad = |m: String| Error::format(path, m);
    let end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| bad("missing end_header".into()))?;
    let body_start = end + 11;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing PLY magic".into()));
    }
    let mut encoding = None;
    let mut vertices: Option<usize> = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    let mut seen_vertex = false;
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", f, _] => {
                encoding = Some(match *f {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Little,
                    "binary_big_endian" => Encoding::Big,
                    other => return Err(bad(format!("unsupported PLY format {other}"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                if seen_vertex {
                    // Elements after the vertices are not needed.
                    in_vertex = false;
                    continue;
                }
                if *name != "vertex" {
                    return Err(bad(format!("element '{name}' before the vertices is not supported")));
                }
                vertices = Some(count.parse().map_err(|_| bad("bad vertex count".into()))?);
                in_vertex = true;
                seen_vertex = true;
            }
            ["property", "list", ..] if in_vertex => return Err(bad("list properties on vertices are not supported".into())),
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| bad(format!("unknown property type {ty}")))?;
                props.push((name.to_string(), s));
            }
            ["property", ..] => {}
            _ => return Err(bad(format!("unexpected header line '{line}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| bad("missing format line".into()))?;
    let n = vertices.ok_or_else(|| bad("missing vertex element".into()))?;
    let index = |name: &str| props.iter().position(|(p, _)| p == name);
    let (ix, iy, iz) = match (index("x"), index("y"), index("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(bad("vertices need x, y and z".into())),
    };
    let rgb = [index("red"), index("green"), index("blue")];
    let isupport = index("support");

    let mut values = vec![0.0; props.len()];
    let mut cloud = PointCloud::default();
    let body = &bytes[body_start..];
    let mut ascii_lines = match encoding {
        Encoding::Ascii => Some(
            std::str::from_utf8(body)
                .map_err(|_| bad("ASCII body is not UTF-8".into()))?
                .lines()
                .filter(|l| !l.trim().is_empty()),
        ),
        _ => None,
    };
    let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
    for v in 0..n {
        match ascii_lines.as_mut() {
            Some(it) => {
                let line = it.next().ok_or_else(|| bad(format!("vertex {v} is missing")))?;
                let mut parts = line.split_whitespace();
                for (val, (_, s)) in values.iter_mut().zip(&props) {
                    *val = parts
                        .next()
                        .and_then(|t| s.parse_text(t))
                        .ok_or_else(|| bad(format!("vertex {v} is malformed")))?;
                }
            }
            None => {
                let start = v * stride;
                if body.len() < start + stride {
                    return Err(bad(format!("binary body ends before vertex {v}")));
                }
                let mut off = start;
                for (val, (_, s)) in values.iter_mut().zip(&props) {
                    *val = s.read(&body[off..], encoding);
                    off += s.size();
                }
            }
        }
        let color = |i: Option<usize>| i.map_or(0, |i| values[i].clamp(0.0, 255.0) as u8);
        cloud.push(
            Point3::new(values[ix], values[iy], values[iz]),
            [color(rgb[0]), color(rgb[1]), color(rgb[2])],
            isupport.map_or(0, |i| values[i].max(0.0) as u32),
        );
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PointCloud {
        let mut c = PointCloud::default();
        c.push(Point3::new(1.5, -2.0, 3.25), [10, 20, 30], 3);
        c.push(Point3::new(0.0, 0.5, 8.0), [255, 0, 7], 300);
        c
    }

    #[test]
    fn binary_and_ascii_round_trip() {
        for f in [PlyFormat::BinaryLittleEndian, PlyFormat::Ascii] {
            let back = decode_ply(&encode_ply(&sample(), f), Path::new("c.ply")).unwrap();
            assert_eq!(back.points, sample().points);
            assert_eq!(back.colors, sample().colors);
            assert_eq!(back.support, vec![3, 255]);
        }
    }

    #[test]
    fn big_endian_doubles_without_color() {
        let mut b = b"ply\nformat binary_big_endian 1.0\ncomment hi\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for v in [1.0f64, 2.0, 3.0] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        let c = decode_ply(&b, Path::new("c.ply")).unwrap();
        assert_eq!(c.points, vec![Point3::new(1.0, 2.0, 3.0)]);
        assert_eq!(c.colors, vec![[0, 0, 0]]);
    }

    #[test]
    fn missing_coordinates_rejected() {
        let b = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n";
        assert!(decode_ply(b, Path::new("c.ply")).is_err());
    }
}
