use std::fs;
use std::path::Path;

use nalgebra::Point3;

use super::DatasetError;

/// CAD model reduced to what template rendering needs: vertices in
/// millimetres and a flat albedo colour.
#[derive(Clone, Debug, PartialEq)]
pub struct CadModel {
    pub object_id: u32,
    pub vertices: Vec<Point3<f64>>,
    pub color: [u8; 3],
}

impl CadModel {
    /// Largest distance between any two vertices.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                best = best.max((a - b).norm());
            }
        }
        best
    }
}

const DEFAULT_COLOR: [u8; 3] = [128, 128, 128];

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
    fn parse(s: &str) -> Option<Self> {
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
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Reads vertex positions (and colours when present) from an ASCII or
/// binary little-endian PLY file.
pub fn read_ply(path: &Path, object_id: u32) -> Result<CadModel, DatasetError> {
    let bytes = fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    let bad = |message: String| DatasetError::Format {
        path: path.to_path_buf(),
        message,
    };

    let header_end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| bad("missing end_header".into()))?;
    let header =
        std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut body_start = header_end + 10;
    while body_start < bytes.len() && bytes[body_start] != b'\n' {
        body_start += 1;
    }
    body_start += 1;

    let mut binary = false;
    let mut elements: Vec<Element> = Vec::new();
    for line in header.lines() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", ..] => binary = false,
            ["format", "binary_little_endian", ..] => binary = true,
            ["format", other, ..] => return Err(bad(format!("unsupported format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| bad(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, _name] => {
                let (ct, it) = Scalar::parse(ct)
                    .zip(Scalar::parse(it))
                    .ok_or_else(|| bad(format!("bad list property: {line}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| bad("property before element".into()))?
                    .props
                    .push(Property::List(ct, it));
            }
            ["property", ty, name] => {
                let ty =
                    Scalar::parse(ty).ok_or_else(|| bad(format!("bad property type: {line}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| bad("property before element".into()))?
                    .props
                    .push(Property::Scalar(name.to_string(), ty));
            }
            _ => {}
        }
    }

    let body = &bytes[body_start.min(bytes.len())..];
    let mut ascii_tokens = if binary {
        None
    } else {
        Some(
            std::str::from_utf8(body)
                .map_err(|_| bad("ascii body is not UTF-8".into()))?
                .split_whitespace(),
        )
    };
    let mut offset = 0usize;
    let mut next = |ty: Scalar| -> Result<f64, DatasetError> {
        match ascii_tokens.as_mut() {
            Some(tokens) => tokens
                .next()
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| bad("truncated or non-numeric ascii body".into())),
            None => {
                let n = ty.size();
                if offset + n > body.len() {
                    return Err(bad("truncated binary body".into()));
                }
                let v = ty.read_le(&body[offset..offset + n]);
                offset += n;
                Ok(v)
            }
        }
    };

    let mut vertices = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    for el in &elements {
        let is_vertex = el.name == "vertex";
        for _ in 0..el.count {
            let (mut xyz, mut rgb) = ([0.0; 3], [f64::NAN; 3]);
            for p in &el.props {
                match p {
                    Property::Scalar(name, ty) => {
                        let v = next(*ty)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            "red" => rgb[0] = v,
                            "green" => rgb[1] = v,
                            "blue" => rgb[2] = v,
                            _ => {}
                        }
                    }
                    Property::List(ct, it) => {
                        let n = next(*ct)? as usize;
                        for _ in 0..n {
                            next(*it)?;
                        }
                    }
                }
            }
            if is_vertex {
                vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
                if rgb.iter().all(|c| c.is_finite()) {
                    colors.push(rgb);
                }
            }
        }
        if is_vertex {
            break;
        }
    }

    if vertices.is_empty() {
        return Err(bad("model has no vertices".into()));
    }
    let color = if colors.len() == vertices.len() {
        let n = colors.len() as f64;
        let mut mean = [0.0; 3];
        for c in &colors {
            for k in 0..3 {
                mean[k] += c[k] / n;
            }
        }
        mean.map(|v| v.round().clamp(0.0, 255.0) as u8)
    } else {
        DEFAULT_COLOR
    };
    Ok(CadModel {
        object_id,
        vertices,
        color,
    })
}

/// Writes an ASCII PLY with per-vertex colour set to the model colour.
pub fn write_ply(model: &CadModel, path: &Path) -> Result<(), DatasetError> {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", model.vertices.len()));
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    s.push_str("end_header\n");
    let [r, g, b] = model.color;
    for v in &model.vertices {
        s.push_str(&format!("{} {} {} {r} {g} {b}\n", v.x, v.y, v.z));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DatasetError::io(parent, e))?;
    }
    fs::write(path, s).map_err(|e| DatasetError::io(path, e))
}

/// Loads every `obj_XXXXXX.ply` in a BOP models directory, ordered by id.
pub fn load_models(dir: &Path) -> Result<Vec<CadModel>, DatasetError> {
    let entries = fs::read_dir(dir).map_err(|e| DatasetError::io(dir, e))?;
    let mut found: Vec<(u32, std::path::PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_str()?.to_string();
            let id = name
                .strip_prefix("obj_")?
                .strip_suffix(".ply")?
                .parse()
                .ok()?;
            Some((id, e.path()))
        })
        .collect();
    found.sort();
    found.into_iter().map(|(id, p)| read_ply(&p, id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(color: [u8; 3]) -> CadModel {
        let mut vertices = Vec::new();
        for &x in &[-5.0, 5.0] {
            for &y in &[-5.0, 5.0] {
                for &z in &[-5.0, 5.0] {
                    vertices.push(Point3::new(x, y, z));
                }
            }
        }
        CadModel {
            object_id: 7,
            vertices,
            color,
        }
    }

    #[test]
    fn ascii_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obj_000007.ply");
        let m = cube([200, 10, 30]);
        write_ply(&m, &p).unwrap();
        assert_eq!(read_ply(&p, 7).unwrap(), m);
        let all = load_models(dir.path()).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].object_id, 7);
    }

    #[test]
    fn binary_with_faces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ply");
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for v in [[0.0f32, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]] {
            for c in v {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
        }
        bytes.push(3);
        for i in 0..3i32 {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
        fs::write(&p, bytes).unwrap();
        let m = read_ply(&p, 1).unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.vertices[2], Point3::new(0.0, 2.0, 0.0));
        assert_eq!(m.color, DEFAULT_COLOR);
        assert!((m.diameter() - 5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn truncated_body_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ply");
        fs::write(&p, "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n").unwrap();
        assert!(matches!(read_ply(&p, 1), Err(DatasetError::Format { .. })));
    }
}
