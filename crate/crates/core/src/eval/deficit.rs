//! Discrete Gaussian curvature by angle deficit.

use std::f64::consts::PI;

use crate::mesher::{edge_counts, TriangleMesh};
use crate::{Error, Point3, Result};

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross_norm(a: Point3, b: Point3) -> f64 {
    let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    dot(c, c).sqrt()
}

fn angle(u: Point3, v: Point3) -> f64 {
    cross_norm(u, v).atan2(dot(u, v))
}

/// Per-vertex `2π − Σθ` (interior) or `π − Σθ` (boundary). Vertices not
/// used by any triangle get 0.
///
/// With `area_normalized`, each deficit is divided by the vertex's mixed
/// Voronoi area (obtuse triangles split by halves and quarters).
pub fn angle_deficit(mesh: &TriangleMesh, area_normalized: bool) -> Result<Vec<f64>> {
    let counts = edge_counts(mesh);
    let bad: Vec<(usize, usize)> = counts.iter().filter(|(_, c)| *c > 2).map(|(e, _)| *e).collect();
    if !bad.is_empty() {
        return Err(Error::NonManifold(bad));
    }
    let n = mesh.vertices.len();
    let mut boundary = vec![false; n];
    for ((a, b), c) in &counts {
        if *c == 1 {
            boundary[*a] = true;
            boundary[*b] = true;
        }
    }
    let mut sum = vec![0.0; n];
    let mut used = vec![false; n];
    let mut area = vec![0.0; n];
    for t in &mesh.triangles {
        let p = t.map(|i| mesh.vertices[i]);
        let ang: [f64; 3] = std::array::from_fn(|k| angle(sub(p[(k + 1) % 3], p[k]), sub(p[(k + 2) % 3], p[k])));
        for k in 0..3 {
            sum[t[k]] += ang[k];
            used[t[k]] = true;
        }
        if area_normalized {
            let tri_area = 0.5 * cross_norm(sub(p[1], p[0]), sub(p[2], p[0]));
            let obtuse = (0..3).find(|&k| ang[k] > PI / 2.0);
            for k in 0..3 {
                area[t[k]] += match obtuse {
                    Some(o) if o == k => tri_area / 2.0,
                    Some(_) => tri_area / 4.0,
                    None => {
                        let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                        let eij = |a: usize, b: usize| dot(sub(p[a], p[b]), sub(p[a], p[b]));
                        (eij(k, i) / ang[j].tan() + eij(k, j) / ang[i].tan()) / 8.0
                    }
                };
            }
        }
    }
    Ok((0..n)
        .map(|v| {
            if !used[v] {
                return 0.0;
            }
            let d = if boundary[v] { PI } else { 2.0 * PI } - sum[v];
            if area_normalized && area[v] > 0.0 {
                d / area[v]
            } else {
                d
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tetrahedron_vertices_have_deficit_pi() {
        let s = 1.0 / 2f64.sqrt();
        let m = TriangleMesh {
            vertices: vec![[1.0, 0.0, -s], [-1.0, 0.0, -s], [0.0, 1.0, s], [0.0, -1.0, s]],
            triangles: vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
        };
        let d = angle_deficit(&m, false).unwrap();
        assert!(d.iter().all(|x| (x - PI).abs() < 1e-12));
        assert!((d.iter().sum::<f64>() - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn flat_grid_interior_is_zero() {
        let mut vertices = Vec::new();
        for j in 0..3 {
            for i in 0..3 {
                vertices.push([i as f64, j as f64, 0.0]);
            }
        }
        let mut triangles = Vec::new();
        for j in 0..2 {
            for i in 0..2 {
                let a = j * 3 + i;
                triangles.push([a, a + 1, a + 4]);
                triangles.push([a, a + 4, a + 3]);
            }
        }
        let d = angle_deficit(&TriangleMesh { vertices, triangles }, false).unwrap();
        assert!(d[4].abs() < 1e-12);
        assert!((d[0] - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn nonmanifold_edges_are_listed() {
        let m = TriangleMesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]],
            triangles: vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]],
        };
        match angle_deficit(&m, false) {
            Err(Error::NonManifold(e)) => assert_eq!(e, vec![(0, 1)]),
            other => panic!("{other:?}"),
        }
    }
}
