//! Procedural meshes used by fixtures, the simulator and the debug CLI.

use std::collections::HashMap;

use nalgebra::Point3;

use super::{weld_vertices, TriangleMesh};

/// Unit-radius icosphere: an icosahedron subdivided `levels` times, with
/// every new vertex pushed onto the sphere. Outward-facing winding.
pub fn icosphere(levels: u32) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Point3::from(nalgebra::Vector3::new(x, y, z).normalize()))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
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
    for _ in 0..levels {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Point3<f64>>| {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = (verts[a].coords + verts[b].coords).normalize();
                verts.push(Point3::from(m));
                verts.len() - 1
            })
        };
        for f in &faces {
            let ab = mid(f[0], f[1], &mut verts);
            let bc = mid(f[1], f[2], &mut verts);
            let ca = mid(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    TriangleMesh::new(verts, faces).expect("icosphere is valid")
}

/// Axis-aligned cube with corners at (±1, ±1, ±1); each face is an
/// `divisions`×`divisions` grid of quads split into two triangles.
pub fn cube(divisions: usize) -> TriangleMesh {
    let n = divisions.max(1);
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    // (normal axis, sign); the two in-plane axes are chosen so the winding faces outward
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let (u_axis, v_axis) = if sign > 0.0 {
                ((axis + 1) % 3, (axis + 2) % 3)
            } else {
                ((axis + 2) % 3, (axis + 1) % 3)
            };
            let base = verts.len();
            for j in 0..=n {
                for i in 0..=n {
                    let mut p = [0.0; 3];
                    p[axis] = sign;
                    p[u_axis] = -1.0 + 2.0 * i as f64 / n as f64;
                    p[v_axis] = -1.0 + 2.0 * j as f64 / n as f64;
                    verts.push(Point3::new(p[0], p[1], p[2]));
                }
            }
            let idx = |i: usize, j: usize| base + j * (n + 1) + i;
            for j in 0..n {
                for i in 0..n {
                    faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                    faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
                }
            }
        }
    }
    let soup = TriangleMesh::new(verts, faces).expect("cube grid is valid");
    weld_vertices(&soup, 1e-9)
}

/// Two-triangle square in the z=0 plane spanning [-half, half]², normal +z.
pub fn square(half: f64) -> TriangleMesh {
    TriangleMesh::new(
        vec![
            Point3::new(-half, -half, 0.0),
            Point3::new(half, -half, 0.0),
            Point3::new(half, half, 0.0),
            Point3::new(-half, half, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .expect("square is valid")
}
