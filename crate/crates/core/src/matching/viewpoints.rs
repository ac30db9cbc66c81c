//! Template viewpoints on a subdivided icosahedron.

use std::collections::HashMap;

use nalgebra::{Matrix3, Rotation3, Vector3};

use super::MatchError;

pub const SUPPORTED_VIEW_COUNTS: [usize; 3] = [12, 42, 162];

const ICOSAHEDRON_FACES: [[usize; 3]; 20] = [
    [0, 11, 5],
    [0, 5, 1],
    [0, 1, 7],
    [0, 7, 10],
    [0, 10, 11],
    [1, 5, 9],
    [5, 11, 4],
    [11, 10, 2],
    [10, 7, 6],
    [7, 1, 8],
    [3, 9, 4],
    [3, 4, 2],
    [3, 2, 6],
    [3, 6, 8],
    [3, 8, 9],
    [4, 9, 5],
    [2, 4, 11],
    [6, 2, 10],
    [8, 6, 7],
    [9, 8, 1],
];

fn icosahedron() -> Vec<Vector3<f64>> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::new(v[0], v[1], v[2]).normalize())
    .collect()
}

/// Unit directions of an icosphere with the requested vertex count.
pub fn icosphere_directions(view_count: usize) -> Result<Vec<Vector3<f64>>, MatchError> {
    let levels = match view_count {
        12 => 0,
        42 => 1,
        162 => 2,
        other => {
            return Err(MatchError::Config(format!(
                "unsupported view_count {other}; valid counts are {SUPPORTED_VIEW_COUNTS:?}"
            )))
        }
    };
    let mut verts = icosahedron();
    let mut faces: Vec<[usize; 3]> = ICOSAHEDRON_FACES.to_vec();
    for _ in 0..levels {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Ok(verts)
}

/// Object-to-camera rotation for a camera placed along `direction` and
/// looking at the origin.
pub fn look_at_origin(direction: &Vector3<f64>) -> Rotation3<f64> {
    let z = -direction.normalize();
    let up = if z.z.abs() > 0.999 {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    Rotation3::from_matrix_unchecked(Matrix3::from_rows(&[
        x.transpose(),
        y.transpose(),
        z.transpose(),
    ]))
}

/// Rotations for every icosphere viewpoint.
pub fn sample_viewpoints(view_count: usize) -> Result<Vec<Rotation3<f64>>, MatchError> {
    Ok(icosphere_directions(view_count)?
        .iter()
        .map(look_at_origin)
        .collect())
}
