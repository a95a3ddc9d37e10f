#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapeflow::{Controls, DiscreteShape, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn circle(n: usize, r: f64, center: Vec3) -> DiscreteShape {
    let pts = (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            center + Vec3::new(r * t.cos(), r * t.sin(), 0.0)
        })
        .collect();
    DiscreteShape::polyline(pts, 2, true).unwrap()
}

pub fn ellipse(n: usize, a: f64, b: f64) -> DiscreteShape {
    let pts = (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            Vec3::new(a * t.cos(), b * t.sin(), 0.0)
        })
        .collect();
    DiscreteShape::polyline(pts, 2, true).unwrap()
}

/// Open square patch `[0, 1]²` with `n × n` quads, lifted by `height(x, y)`.
pub fn patch(n: usize, height: impl Fn(f64, f64) -> f64) -> DiscreteShape {
    let mut v = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
            v.push(Vec3::new(x, y, height(x, y)));
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut t = Vec::new();
    for j in 0..n {
        for i in 0..n {
            t.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            t.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    DiscreteShape::trimesh(v, t).unwrap()
}

/// Cube `[0, a]³` split into `n³` cells of six positively oriented tets.
pub fn cube(n: usize, a: f64) -> DiscreteShape {
    let h = a / n as f64;
    let id = |i: usize, j: usize, k: usize| (k * (n + 1) + j) * (n + 1) + i;
    let mut v = Vec::new();
    for k in 0..=n {
        for j in 0..=n {
            for i in 0..=n {
                v.push(Vec3::new(i as f64 * h, j as f64 * h, k as f64 * h));
            }
        }
    }
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::new();
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for p in perms {
                    let mut c = [i, j, k];
                    let mut tet = [id(c[0], c[1], c[2]); 4];
                    for (s, &axis) in p.iter().enumerate() {
                        c[axis] += 1;
                        tet[s + 1] = id(c[0], c[1], c[2]);
                    }
                    let e = |q: usize| v[tet[q]] - v[tet[0]];
                    if e(1).cross(&e(2)).dot(&e(3)) < 0.0 {
                        tet.swap(2, 3);
                    }
                    tets.push(tet);
                }
            }
        }
    }
    DiscreteShape::tetmesh(v, tets).unwrap()
}

pub fn random_controls(template: &Controls, dim: usize, amp: f64, seed: u64) -> Controls {
    let mut r = rng(seed);
    let flat: Vec<f64> = template.to_flat(dim).iter().map(|_| amp * r.random_range(-1.0..1.0)).collect();
    template.from_flat(&flat, dim)
}

pub fn random_direction(template: &Controls, dim: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    template.to_flat(dim).iter().map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Unit icosphere after `levels` midpoint subdivisions, outward oriented.
pub fn icosphere(levels: usize) -> DiscreteShape {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut cache = std::collections::HashMap::new();
        let mut mid = |a: usize, b: usize, v: &mut Vec<Vec3>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        let mut nf = Vec::with_capacity(4 * f.len());
        for [a, b, c] in f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            nf.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = nf;
    }
    DiscreteShape::trimesh(v, f).unwrap()
}

/// Cube tetmesh with flat layers normal to `e3`: `S = δ e3` per element,
/// layer index `z / a` per vertex.
pub fn layered_cube(n: usize, a: f64) -> DiscreteShape {
    let c = cube(n, a);
    let layers = shapeflow::LayeredStructure {
        transverse: vec![Vec3::z() * a; c.n_elements()],
        layer_index: c.vertices().iter().map(|p| p.z / a).collect(),
        normal: vec![Vec3::z(); c.n_elements()],
    };
    c.with_layers(layers).unwrap()
}
