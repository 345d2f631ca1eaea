//! Triangle meshes: isosurface extraction, cleanup, area-weighted sampling
//! and file I/O, plus the Chamfer metric.

mod chamfer;
mod io;
mod tables;

use std::collections::HashMap;

use log::warn;
use rand::Rng;
use rayon::prelude::*;

use crate::error::Result;
use tables::{EDGE_TABLE, TRIANGLE_TABLE};

pub use chamfer::{chamfer_distance, KdTree};
pub use io::{read_mesh, read_obj, read_ply, write_mesh, write_obj, write_ply};

pub type Point = [f64; 3];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[u32; 3]>,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: [u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|&t| self.triangle_area(t)).sum()
    }

    /// Drops triangles with repeated indices or area `<= 1e-12` and then
    /// every vertex no triangle references.
    pub fn cleanup(&mut self) {
        let vertices = &self.vertices;
        let area = |t: [u32; 3]| {
            let [a, b, c] = t.map(|i| vertices[i as usize]);
            0.5 * norm(cross(sub(b, a), sub(c, a)))
        };
        self.triangles
            .retain(|&t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && area(t) > 1e-12);
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for t in &mut self.triangles {
            for i in t.iter_mut() {
                let old = *i as usize;
                if remap[old] == u32::MAX {
                    remap[old] = kept.len() as u32;
                    kept.push(self.vertices[old]);
                }
                *i = remap[old];
            }
        }
        self.vertices = kept;
    }

    /// `count` points distributed uniformly over the surface area.
    pub fn sample_surface(&self, count: usize, rng: &mut impl Rng) -> Vec<Point> {
        if self.triangles.is_empty() {
            return Vec::new();
        }
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut acc = 0.0;
        for &t in &self.triangles {
            acc += self.triangle_area(t);
            cdf.push(acc);
        }
        (0..count)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let k = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
                let [a, b, c] = self.triangles[k].map(|i| self.vertices[i as usize]);
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                let s = r1.sqrt();
                let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
                [0, 1, 2].map(|d| wa * a[d] + wb * b[d] + wc * c[d])
            })
            .collect()
    }

    /// Axis-aligned cube `[-h, h]^3`, each face split into `n × n` quads.
    pub fn cube(half: f64, n: usize) -> Self {
        let mut mesh = Self::default();
        let n = n.max(1);
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let (u_axis, v_axis) = ((axis + 1) % 3, (axis + 2) % 3);
                let base = mesh.vertices.len() as u32;
                for j in 0..=n {
                    for i in 0..=n {
                        let mut p = [0.0; 3];
                        p[axis] = sign * half;
                        p[u_axis] = -half + 2.0 * half * i as f64 / n as f64;
                        p[v_axis] = -half + 2.0 * half * j as f64 / n as f64;
                        mesh.vertices.push(p);
                    }
                }
                let idx = |i: usize, j: usize| base + (j * (n + 1) + i) as u32;
                for j in 0..n {
                    for i in 0..n {
                        let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                        if sign > 0.0 {
                            mesh.triangles.push([a, b, c]);
                            mesh.triangles.push([a, c, d]);
                        } else {
                            mesh.triangles.push([a, c, b]);
                            mesh.triangles.push([a, d, c]);
                        }
                    }
                }
            }
        }
        mesh.weld();
        mesh
    }

    /// Sphere of `radius` from a subdivided icosahedron; every vertex lies on
    /// the sphere.
    pub fn icosphere(radius: f64, subdivisions: usize) -> Self {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Point> = vec![
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
        ];
        let mut triangles: Vec<[u32; 3]> = vec![
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
        for _ in 0..subdivisions {
            let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
            let mut next = Vec::with_capacity(triangles.len() * 4);
            let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Point>| {
                let key = (a.min(b), a.max(b));
                *midpoints.entry(key).or_insert_with(|| {
                    let (p, q) = (vertices[a as usize], vertices[b as usize]);
                    vertices.push([0, 1, 2].map(|d| 0.5 * (p[d] + q[d])));
                    vertices.len() as u32 - 1
                })
            };
            for [a, b, c] in triangles {
                let ab = midpoint(a, b, &mut vertices);
                let bc = midpoint(b, c, &mut vertices);
                let ca = midpoint(c, a, &mut vertices);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            triangles = next;
        }
        for v in &mut vertices {
            let len = norm(*v);
            *v = v.map(|x| x * radius / len);
        }
        Self { vertices, triangles }
    }

    /// Merges bit-identical vertices.
    fn weld(&mut self) {
        let mut seen: HashMap<[u64; 3], u32> = HashMap::new();
        let mut kept = Vec::new();
        let remap: Vec<u32> = self
            .vertices
            .iter()
            .map(|v| {
                *seen.entry(v.map(f64::to_bits)).or_insert_with(|| {
                    kept.push(*v);
                    kept.len() as u32 - 1
                })
            })
            .collect();
        self.vertices = kept;
        for t in &mut self.triangles {
            *t = t.map(|i| remap[i as usize]);
        }
    }
}

/// Axis-aligned box sampled by the marching-cubes grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridBounds {
    pub min: Point,
    pub max: Point,
}

impl Default for GridBounds {
    fn default() -> Self {
        Self {
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }
}

// corner offsets and edge endpoints in Bourke's numbering
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the `iso` level set of a field sampled on a grid of
/// `resolution` cells per axis over `bounds`.
///
/// `sampler` is called once per z-slice with that slice's grid points and
/// must return one value per point. Vertices on shared cell edges are
/// shared between triangles.
pub fn marching_cubes<F>(sampler: F, resolution: usize, iso: f64, bounds: GridBounds) -> Result<TriangleMesh>
where
    F: Fn(&[Point]) -> Result<Vec<f64>> + Sync,
{
    assert!(resolution >= 2, "marching cubes needs at least 2 cells per axis");
    let n = resolution + 1;
    let step: Point = [0, 1, 2].map(|d| (bounds.max[d] - bounds.min[d]) / resolution as f64);
    let position = |x: usize, y: usize, z: usize| -> Point {
        [
            bounds.min[0] + x as f64 * step[0],
            bounds.min[1] + y as f64 * step[1],
            bounds.min[2] + z as f64 * step[2],
        ]
    };
    let slices: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|z| {
            let points: Vec<Point> = (0..n)
                .flat_map(|y| (0..n).map(move |x| (x, y)))
                .map(|(x, y)| position(x, y, z))
                .collect();
            sampler(&points)
        })
        .collect::<Result<_>>()?;
    let value = |x: usize, y: usize, z: usize| slices[z][y * n + x];

    let mut mesh = TriangleMesh::default();
    let mut edge_vertex: HashMap<(usize, usize, usize, usize), u32> = HashMap::new();
    for z in 0..resolution {
        for y in 0..resolution {
            for x in 0..resolution {
                let corner = |c: usize| {
                    let o = CORNERS[c];
                    (x + o[0], y + o[1], z + o[2])
                };
                let mut case = 0usize;
                for c in 0..8 {
                    let (cx, cy, cz) = corner(c);
                    if value(cx, cy, cz) < iso {
                        case |= 1 << c;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut cell_vertices = [u32::MAX; 12];
                for (e, [a, b]) in EDGES.iter().enumerate() {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let (p, q) = (corner(*a), corner(*b));
                    let axis = (0..3)
                        .find(|&d| [p.0, p.1, p.2][d] != [q.0, q.1, q.2][d])
                        .expect("edge spans one axis");
                    let key = (p.0, p.1, p.2, axis);
                    cell_vertices[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let (vp, vq) = (value(p.0, p.1, p.2), value(q.0, q.1, q.2));
                        let t = if vq != vp { (iso - vp) / (vq - vp) } else { 0.5 };
                        let (pp, pq) = (position(p.0, p.1, p.2), position(q.0, q.1, q.2));
                        mesh.vertices.push([0, 1, 2].map(|d| pp[d] + t * (pq[d] - pp[d])));
                        mesh.vertices.len() as u32 - 1
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    mesh.triangles.push([0, 1, 2].map(|k| cell_vertices[tri[k] as usize]));
                }
            }
        }
    }
    mesh.cleanup();
    if mesh.is_empty() {
        warn!("marching cubes found no sign change at level {iso}; mesh is empty");
    }
    Ok(mesh)
}
