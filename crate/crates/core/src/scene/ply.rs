use std::io::{BufRead, Write};

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// A point with an optional normal and an integer material label
/// (negative for unlabeled).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlyVertex {
    pub p: Point3<f64>,
    pub n: Option<Vector3<f64>>,
    pub label: i32,
}

/// ASCII PLY with `x y z [nx ny nz] label` per vertex.
pub fn write_ply<W: Write>(out: &mut W, vertices: &[PlyVertex]) -> std::io::Result<()> {
    let normals = !vertices.is_empty() && vertices.iter().all(|v| v.n.is_some());
    writeln!(out, "ply\nformat ascii 1.0\nelement vertex {}", vertices.len())?;
    for c in ["x", "y", "z"] {
        writeln!(out, "property double {c}")?;
    }
    if normals {
        for c in ["nx", "ny", "nz"] {
            writeln!(out, "property double {c}")?;
        }
    }
    writeln!(out, "property int label\nend_header")?;
    for v in vertices {
        write!(out, "{} {} {}", v.p.x, v.p.y, v.p.z)?;
        if let (true, Some(n)) = (normals, v.n) {
            write!(out, " {} {} {}", n.x, n.y, n.z)?;
        }
        writeln!(out, " {}", v.label)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn decode_le(self, b: &[u8]) -> f64 {
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

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format("PLY", detail)
}

/// Read vertices from an ASCII or binary little-endian PLY. The vertex
/// element must carry `x y z` and `label`; `nx ny nz` are optional.
/// Elements before the vertices must have fixed-size properties.
pub fn read_ply<R: BufRead>(mut input: R) -> Result<Vec<PlyVertex>> {
    let mut line = String::new();
    let mut next_line = |input: &mut R| -> Result<String> {
        line.clear();
        if input.read_line(&mut line).map_err(|e| bad(e.to_string()))? == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim().to_string())
    };
    if next_line(&mut input)? != "ply" {
        return Err(bad("missing 'ply' magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next_line(&mut input)?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => return Err(bad(format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count '{count}'")))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => {
                let el = elements.last().ok_or_else(|| bad("property before element"))?;
                if el.name == "vertex" {
                    return Err(bad("list properties on vertices are not supported"));
                }
                // Lists make the element variable-sized; only allowed after vertices.
                elements.last_mut().unwrap().props.push(("<list>".into(), Scalar::U8));
            }
            ["property", ty, name] => {
                let s = Scalar::parse(ty).ok_or_else(|| bad(format!("unknown property type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| bad("property before element"))?
                    .props
                    .push((name.to_string(), s));
            }
            _ => return Err(bad(format!("unrecognized header line '{l}'"))),
        }
    }
    let binary = binary.ok_or_else(|| bad("missing format line"))?;
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| bad("no vertex element"))?;
    let col = |name: &str| elements[vi].props.iter().position(|(n, _)| n == name);
    let (x, y, z) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad("vertex element lacks x, y or z")),
    };
    let label = col("label").ok_or_else(|| bad("vertex element lacks a label property"))?;
    let normal = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };

    let mut ascii_lines = Vec::new();
    let mut raw = Vec::new();
    if binary {
        input.read_to_end(&mut raw).map_err(|e| bad(e.to_string()))?;
    } else {
        let mut rest = String::new();
        input.read_to_string(&mut rest).map_err(|e| bad(e.to_string()))?;
        ascii_lines = rest.lines().map(str::to_string).collect();
    }
    let mut line_at = 0;
    let mut byte_at = 0;
    for el in &elements[..vi] {
        if el.props.iter().any(|(n, _)| n == "<list>") {
            return Err(bad(format!("variable-size element '{}' precedes vertices", el.name)));
        }
        if binary {
            byte_at += el.count * el.props.iter().map(|(_, s)| s.size()).sum::<usize>();
        } else {
            line_at += el.count;
        }
    }
    let props = &elements[vi].props;
    let stride: usize = props.iter().map(|(_, s)| s.size()).sum();
    let mut out = Vec::with_capacity(elements[vi].count);
    let mut values = vec![0.0; props.len()];
    for k in 0..elements[vi].count {
        if binary {
            let start = byte_at + k * stride;
            let rec = raw
                .get(start..start + stride)
                .ok_or_else(|| bad("truncated binary vertex data"))?;
            let mut off = 0;
            for (v, (_, s)) in values.iter_mut().zip(props) {
                *v = s.decode_le(&rec[off..]);
                off += s.size();
            }
        } else {
            let l = ascii_lines
                .get(line_at + k)
                .ok_or_else(|| bad("truncated ASCII vertex data"))?;
            let mut it = l.split_whitespace();
            for v in values.iter_mut() {
                let t = it.next().ok_or_else(|| bad(format!("short vertex line {}", k + 1)))?;
                *v = t.parse().map_err(|_| bad(format!("bad number '{t}'")))?;
            }
        }
        out.push(PlyVertex {
            p: Point3::new(values[x], values[y], values[z]),
            n: normal.map(|(a, b, c)| Vector3::new(values[a], values[b], values[c])),
            label: values[label] as i32,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_roundtrip() {
        let verts = vec![
            PlyVertex { p: Point3::new(1.5, -2.0, 0.25), n: Some(Vector3::new(0.0, 0.0, -1.0)), label: 2 },
            PlyVertex { p: Point3::new(0.1, 0.2, 0.3), n: Some(Vector3::new(0.6, 0.0, -0.8)), label: -1 },
        ];
        let mut buf = Vec::new();
        write_ply(&mut buf, &verts).unwrap();
        assert_eq!(read_ply(buf.as_slice()).unwrap(), verts);
    }

    #[test]
    fn binary_with_extra_properties() {
        let mut buf = b"ply\nformat binary_little_endian 1.0\ncomment test\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty int label\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for (p, l) in [([1.0f32, 2.0, 3.0], 7i32), ([-1.0, 0.5, 2.0], 0)] {
            for c in p {
                buf.extend(c.to_le_bytes());
            }
            buf.push(200);
            buf.extend(l.to_le_bytes());
        }
        let v = read_ply(buf.as_slice()).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].p, Point3::new(1.0, 2.0, 3.0));
        assert_eq!(v[0].label, 7);
        assert_eq!(v[1].n, None);
    }

    #[test]
    fn rejects_missing_label() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        assert!(matches!(read_ply(text.as_bytes()), Err(Error::Format { .. })));
        assert!(read_ply("plx\n".as_bytes()).is_err());
    }
}
