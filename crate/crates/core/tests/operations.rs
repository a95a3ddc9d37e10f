//! Per-operation checks against hand-derived values and refinement studies.

mod common;

use approx::assert_relative_eq;
use common::*;
use nalgebra::{Matrix3, Rotation3};
use rand::Rng;
use shapeflow::elastic::{
    elastic_norm_sq, implicit_module_norm_sq, isotropic_density, laminar_density, LaminarParams,
};
use shapeflow::flow::{integrate, RunningCost};
use shapeflow::geometry::{advect, build_frames, curve_strain, extrude_shell, tet_strain, triangle_strain_components};
use shapeflow::growth::{
    compatibility_residual, growth_norm_sq, growth_relative_energy, reduced_elastic_norm_sq, scalar_yank_from_rho,
    yank_of_growth, yank_to_velocity, YankField,
};
use shapeflow::hybrid::{hybrid_norm_sq, hybrid_quadratic_form};
use shapeflow::kernels::{eval_jacobian, eval_velocity};
use shapeflow::matching::{growth_distance_equivalence_check, objective, varifold_distance_sq, varifold_norm_sq, FidelitySpec};
use shapeflow::{
    AdmissibleSet, Controls, DiscreteShape, ElasticModel, GrowthField, GrowthMode, HybridMetric, KernelFamily,
    KernelSpec, KernelVelocity, MatchProblem, Scheme, Vec3,
};

fn random_vec(r: &mut impl Rng, amp: f64) -> Vec3 {
    Vec3::new(r.random_range(-amp..amp), r.random_range(-amp..amp), r.random_range(-amp..amp))
}

fn random_matrix(r: &mut impl Rng) -> Matrix3<f64> {
    Matrix3::from_fn(|_, _| r.random_range(-1.0..1.0))
}

fn random_velocity(spec: KernelSpec, n: usize, seed: u64) -> KernelVelocity {
    let mut r = rng(seed);
    let pts = (0..n).map(|_| random_vec(&mut r, 1.0)).collect();
    let coeffs = (0..n).map(|_| random_vec(&mut r, 1.0)).collect();
    KernelVelocity::new(spec, pts, coeffs).unwrap()
}

fn iso() -> ElasticModel {
    ElasticModel::Isotropic { lambda: 1.0, mu: 1.0 }
}

#[test]
fn gaussian_velocity_matches_direct_sum() {
    let sigma = 0.7;
    let v = random_velocity(KernelSpec::gaussian(sigma, 3).unwrap(), 6, 1);
    let mut r = rng(2);
    let queries: Vec<Vec3> = (0..5).map(|_| random_vec(&mut r, 1.5)).collect();
    let got = eval_velocity(&v, &queries).unwrap();
    for (q, g) in queries.iter().zip(&got) {
        let mut expected = Vec3::zeros();
        for (x, a) in v.control_points.iter().zip(&v.coefficients) {
            expected += a * (-(q - x).norm_squared() / (2.0 * sigma * sigma)).exp();
        }
        assert!((g - expected).norm() <= 1e-14 * expected.norm().max(1.0));
    }
}

#[test]
fn jacobian_matches_central_differences() {
    for (i, fam) in [KernelFamily::Gaussian, KernelFamily::Matern32, KernelFamily::Matern52].into_iter().enumerate() {
        let v = random_velocity(KernelSpec::new(fam, 0.8, 3).unwrap(), 5, 10 + i as u64);
        let mut r = rng(20 + i as u64);
        let queries: Vec<Vec3> = (0..4).map(|_| random_vec(&mut r, 1.5)).collect();
        let jac = eval_jacobian(&v, &queries).unwrap();
        let h = 1e-5;
        for (q, j) in queries.iter().zip(&jac) {
            for b in 0..3 {
                let mut e = Vec3::zeros();
                e[b] = h;
                let plus = eval_velocity(&v, &[q + e]).unwrap()[0];
                let minus = eval_velocity(&v, &[q - e]).unwrap()[0];
                let fd = (plus - minus) / (2.0 * h);
                let col = j.column(b).into_owned();
                assert!((fd - col).norm() <= 1e-6 * j.norm().max(1.0), "{fam:?} column {b}: {fd} vs {col}");
            }
        }
    }
}

#[test]
fn surface_frames_are_orthonormal_and_normal() {
    let sphere = icosphere(2);
    let frames = build_frames(&sphere).unwrap();
    for (e, f) in frames.iter().enumerate() {
        for a in 0..3 {
            assert_relative_eq!(f.axes[a].norm(), 1.0, epsilon = 1e-12);
            for b in 0..a {
                assert!(f.axes[a].dot(&f.axes[b]).abs() <= 1e-12);
            }
        }
        let idx = sphere.element(e);
        let x = sphere.vertices();
        for k in 0..3 {
            assert!(f.axes[2].dot(&(x[idx[(k + 1) % 3]] - x[idx[k]])).abs() <= 1e-12);
        }
    }
}

#[test]
fn curve_strain_converges_to_arclength_derivative() {
    // v(x, y) = (x y, x² − y²): ∂_s v = Dv τ.
    let field = |p: &Vec3| Vec3::new(p.x * p.y, p.x * p.x - p.y * p.y, 0.0);
    let jac = |p: &Vec3| Matrix3::new(p.y, p.x, 0.0, 2.0 * p.x, -2.0 * p.y, 0.0, 0.0, 0.0, 0.0);
    let err = |n: usize| {
        let c = circle(n, 1.0, Vec3::zeros());
        let v: Vec<Vec3> = c.vertices().iter().map(field).collect();
        let w = curve_strain(&c, &v).unwrap();
        let x = c.vertices();
        (0..c.n_elements())
            .map(|e| {
                let idx = c.element(e);
                let (a, b) = (x[idx[0]], x[idx[1]]);
                // Exact ∂_s v at the arc point above the chord midpoint.
                let m = ((a + b) * 0.5).normalize();
                let tau = Vec3::new(-m.y, m.x, 0.0) * (b - a).dot(&Vec3::new(-m.y, m.x, 0.0)).signum();
                (w[e] - jac(&m) * tau).norm()
            })
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (err(32), err(64));
    assert!(fine < 0.05, "error {fine}");
    assert!((coarse / fine).log2() >= 0.9, "order {}", (coarse / fine).log2());
}

#[test]
fn triangle_strain_exact_on_affine_fields() {
    let mut r = rng(3);
    for _ in 0..5 {
        let x: Vec<Vec3> = (0..3).map(|_| random_vec(&mut r, 1.0)).collect();
        let tri = DiscreteShape::trimesh(x.clone(), vec![[0, 1, 2]]).unwrap();
        let a = random_matrix(&mut r);
        let b = random_vec(&mut r, 1.0);
        let v: Vec<Vec3> = x.iter().map(|p| a * p + b).collect();
        let s = triangle_strain_components(&tri, &v).unwrap()[0];
        let t1 = (x[1] - x[0]).normalize();
        let nu = (x[1] - x[0]).cross(&(x[2] - x[0])).normalize();
        let t2 = nu.cross(&t1);
        let p = |u: &Vec3, w: &Vec3| u.dot(&(a * w));
        assert_relative_eq!(s.a11, p(&t1, &t1), epsilon = 1e-10);
        assert_relative_eq!(s.a22, p(&t2, &t2), epsilon = 1e-10);
        assert_relative_eq!(s.a12_plus_a21, p(&t1, &t2) + p(&t2, &t1), epsilon = 1e-10);
        assert_relative_eq!(s.a12_minus_a21, p(&t1, &t2) - p(&t2, &t1), epsilon = 1e-10);
        assert_relative_eq!(s.a13, p(&nu, &t1), epsilon = 1e-10);
        assert_relative_eq!(s.a23, p(&nu, &t2), epsilon = 1e-10);
    }
}

#[test]
fn tet_strain_exact_on_affine_fields() {
    let c = jittered(3);
    let mut r = rng(4);
    let a = random_matrix(&mut r);
    let b = random_vec(&mut r, 1.0);
    let v: Vec<Vec3> = c.vertices().iter().map(|p| a * p + b).collect();
    for dv in tet_strain(&c, &v).unwrap() {
        assert!((dv - a).norm() <= 1e-10);
    }
}

fn jittered(seed: u64) -> DiscreteShape {
    let c = cube(2, 1.0);
    let mut r = rng(seed);
    let v = c.vertices().iter().map(|p| p + random_vec(&mut r, 0.05)).collect();
    c.with_vertices(v).unwrap()
}

#[test]
fn thin_extrusion_volume_tends_to_area() {
    // Extrusion follows vertex normals, so volume / δ tends to the area up to
    // an O(h²) offset that shrinks fourfold per subdivision.
    let rel = |levels: usize, delta: f64| {
        let sphere = icosphere(levels);
        let area = sphere.total_measure();
        (extrude_shell(&sphere, delta, 2).unwrap().total_measure() / delta - area).abs() / area
    };
    for delta in [1e-2, 1e-3] {
        assert!(rel(4, delta) <= delta + 2e-3, "δ = {delta}: rel {}", rel(4, delta));
    }
    let order = (rel(3, 1e-5) / rel(4, 1e-5)).log2() / 2.0;
    assert!(order >= 0.9, "offset order {order}");
}

#[test]
fn advected_layers_rotate_with_the_shape() {
    let c = layered_cube(2, 1.0);
    let rot = Rotation3::from_euler_angles(0.3, -0.5, 0.9).into_inner();
    let disp: Vec<Vec3> = c.vertices().iter().map(|p| rot * p - p).collect();
    let moved = advect(&c, &disp).unwrap();
    assert!(moved.warnings.is_empty());
    let before = c.layered().unwrap();
    let after = moved.shape.layered().unwrap();
    for e in 0..c.n_elements() {
        assert!((after.transverse[e] - rot * before.transverse[e]).norm() <= 1e-12);
        assert!((after.normal[e] - rot * before.normal[e]).norm() <= 1e-12);
    }
    let f0 = build_frames(&icosphere(1)).unwrap();
    let sphere = icosphere(1);
    let sd: Vec<Vec3> = sphere.vertices().iter().map(|p| rot * p - p).collect();
    let f1 = build_frames(&advect(&sphere, &sd).unwrap().shape).unwrap();
    for (a, b) in f0.iter().zip(&f1) {
        assert!((b.axes[2] - rot * a.axes[2]).norm() <= 1e-12);
        assert_relative_eq!(a.measure, b.measure, epsilon = 1e-12);
    }
}

#[test]
fn isotropic_density_componentwise() {
    let mut r = rng(5);
    for _ in 0..10 {
        let m = random_matrix(&mut r);
        let eps = (m + m.transpose()) * 0.5;
        let (lambda, mu) = (r.random_range(0.0..3.0), r.random_range(0.1..3.0));
        let mut sq = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                sq += eps[(i, j)] * eps[(i, j)];
            }
        }
        let tr = eps[(0, 0)] + eps[(1, 1)] + eps[(2, 2)];
        let expected = 0.5 * lambda * tr * tr + mu * sq;
        assert_relative_eq!(isotropic_density(lambda, mu, &eps).unwrap(), expected, max_relative = 1e-12);
    }
}

#[test]
fn laminar_density_in_adapted_frame() {
    let mut r = rng(6);
    let p = LaminarParams { lambda_tan: 0.7, mu_tan: 1.3, mu_tsv: 0.4, mu_ang: 0.9 };
    for _ in 0..10 {
        let m = random_matrix(&mut r);
        let eps = (m + m.transpose()) * 0.5;
        let q = Rotation3::from_scaled_axis(random_vec(&mut r, 2.0)).into_inner();
        let (t1, t2, n) = (q.column(0).into_owned(), q.column(1).into_owned(), q.column(2).into_owned());
        let s = t1 * r.random_range(-1.0..1.0) + t2 * r.random_range(-1.0..1.0) + n * r.random_range(0.2..1.0);
        // Components in the (t1, t2, n) frame.
        let e = q.transpose() * eps * q;
        let sf = q.transpose() * s;
        let es = e * sf;
        let tan = e[(0, 0)] + e[(1, 1)];
        let tan_sq = e[(0, 0)].powi(2) + e[(1, 1)].powi(2) + 2.0 * e[(0, 1)].powi(2);
        let expected = p.lambda_tan * tan * tan
            + p.mu_tan * tan_sq
            + p.mu_tsv * sf.dot(&es).powi(2)
            + 2.0 * p.mu_ang * (es[0].powi(2) + es[1].powi(2));
        assert_relative_eq!(laminar_density(&p, &eps, &s, &n).unwrap(), expected, max_relative = 1e-10);
    }
}

#[test]
fn identity_field_on_circle_has_circumference_norm() {
    let c = circle(512, 1.0, Vec3::zeros());
    let model = ElasticModel::Curve { mu_tan: 1.0, mu_tsv: 1.0 };
    let v = c.vertices().to_vec();
    let norm = elastic_norm_sq(&c, &model, &v).unwrap();
    assert!((norm - 2.0 * std::f64::consts::PI).abs() <= 0.01 * 2.0 * std::f64::consts::PI, "{norm}");
}

#[test]
fn hybrid_quadratic_form_matches_norm() {
    let c = jittered(7);
    let spec = KernelSpec::gaussian(0.6, 3).unwrap();
    let metric = HybridMetric::new(0.3, spec, iso()).unwrap();
    let mut r = rng(8);
    let coeffs: Vec<Vec3> = c.vertices().iter().map(|_| random_vec(&mut r, 1.0)).collect();
    let v = KernelVelocity::new(spec, c.vertices().to_vec(), coeffs.clone()).unwrap();
    let q = hybrid_quadratic_form(&metric, &c, c.vertices()).unwrap();
    let flat: Vec<f64> = coeffs.iter().flat_map(|a| [a.x, a.y, a.z]).collect();
    let a = nalgebra::DVector::from_vec(flat);
    let form = a.dot(&(&q * &a));
    assert_relative_eq!(form, hybrid_norm_sq(&metric, &c, &v).unwrap(), max_relative = 1e-10);
}

#[test]
fn implicit_module_limits() {
    let spec = KernelSpec::gaussian(0.5, 3).unwrap();
    let basis = random_velocity(spec, 8, 9);
    let zero = vec![(Vec3::zeros(), Matrix3::zeros()), (Vec3::x(), Matrix3::zeros())];
    let (value, v) = implicit_module_norm_sq(&basis, &zero, 1e-3).unwrap();
    assert!(value.abs() <= 1e-14 && v.coefficients.iter().all(|a| a.norm() <= 1e-12));
    let s = Matrix3::new(1.0, 0.2, 0.0, 0.2, -0.5, 0.1, 0.0, 0.1, 0.3);
    let targets = vec![(Vec3::zeros(), s), (Vec3::new(0.5, 0.1, -0.2), s * 2.0)];
    let fit: f64 = targets.iter().map(|(_, t)| t.norm_squared()).sum();
    let (value, _) = implicit_module_norm_sq(&basis, &targets, 1e8).unwrap();
    assert_relative_eq!(value, fit, max_relative = 1e-4);
}

#[test]
fn growth_energies_reduce_to_elastic_norm() {
    let c = jittered(11);
    let mut r = rng(12);
    let v: Vec<Vec3> = c.vertices().iter().map(|p| Vec3::new(p.y * p.z, p.x.sin(), p.x * p.y) + random_vec(&mut r, 0.01)).collect();
    let plain = elastic_norm_sq(&c, &iso(), &v).unwrap();
    let zero = GrowthField::zero(c.n_elements());
    assert_relative_eq!(growth_relative_energy(&c, &iso(), &v, &zero).unwrap(), plain, max_relative = 1e-12);
    let (reduced, g) = reduced_elastic_norm_sq(&c, &iso(), &v, AdmissibleSet::Zero).unwrap();
    assert_relative_eq!(reduced, plain, max_relative = 1e-12);
    assert!((0..g.len()).all(|e| g.tensor(e).norm() == 0.0));
    let (full, g) = reduced_elastic_norm_sq(&c, &iso(), &v, AdmissibleSet::Full).unwrap();
    assert!(full <= 1e-12 * plain);
    for (e, dv) in tet_strain(&c, &v).unwrap().iter().enumerate() {
        assert!((g.tensor(e) - (dv + dv.transpose()) * 0.5).norm() <= 1e-10);
    }
}

#[test]
fn yank_response_matches_growth_velocity() {
    let c = jittered(13);
    let spec = KernelSpec::gaussian(0.5, 3).unwrap();
    let mut r = rng(14);
    let g = GrowthField::full(
        (0..c.n_elements())
            .map(|_| {
                let m = random_matrix(&mut r);
                (m + m.transpose()) * 0.5
            })
            .collect(),
    )
    .unwrap();
    let kappa = 0.2;
    let norm = growth_norm_sq(&c, kappa, &spec, &iso(), &g).unwrap();
    let j = yank_of_growth(&c, &iso(), &g).unwrap();
    let v = yank_to_velocity(&c, kappa, &spec, &iso(), &j).unwrap();
    let scale = norm.velocity.coefficients.iter().map(|a| a.norm()).fold(0.0, f64::max);
    for (a, b) in v.coefficients.iter().zip(&norm.velocity.coefficients) {
        assert!((a - b).norm() <= 1e-9 * scale);
    }
    // Without an elastic term the response is the yank divided by κ.
    let eta = YankField { coefficients: (0..c.n_vertices()).map(|_| random_vec(&mut r, 1.0)).collect() };
    let v = yank_to_velocity(&c, 2.0, &spec, &ElasticModel::None, &eta).unwrap();
    for (a, b) in v.coefficients.iter().zip(&eta.coefficients) {
        assert!((a - b * 0.5).norm() <= 1e-8);
    }
}

/// Bump vanishing on the boundary of the unit cube.
fn bump(p: &Vec3) -> f64 {
    use std::f64::consts::PI;
    (PI * p.x).sin() * (PI * p.y).sin() * (PI * p.z).sin()
}

#[test]
fn scalar_yank_tracks_growth_yank() {
    let model = iso();
    let spec = KernelSpec::gaussian(0.4, 3).unwrap();
    let mut errs = Vec::new();
    for n in [4, 8] {
        let c = cube(n, 1.0);
        let zero = scalar_yank_from_rho(&c, &model, &vec![0.0; c.n_vertices()]).unwrap();
        assert!(zero.coefficients.iter().all(|a| a.norm() == 0.0));
        let rho: Vec<f64> = c.vertices().iter().map(bump).collect();
        let j = scalar_yank_from_rho(&c, &model, &rho).unwrap();
        let per_tet: Vec<f64> = (0..c.n_elements())
            .map(|e| c.element(e).iter().map(|&i| rho[i]).sum::<f64>() / 4.0)
            .collect();
        let reference = yank_of_growth(&c, &model, &GrowthField::scalar(per_tet).unwrap()).unwrap();
        let test = KernelVelocity::new(
            spec,
            c.vertices().to_vec(),
            c.vertices().iter().map(|p| Vec3::new(p.x, p.y * p.y, -p.z) * 0.1).collect(),
        )
        .unwrap();
        let a = j.pairing(&test).unwrap();
        let b = reference.pairing(&test).unwrap();
        errs.push((a - b).abs() / b.abs());
    }
    assert!(errs[1] < errs[0] && errs[1] < 0.1, "{errs:?}");
}

#[test]
fn compatibility_residual_separates_compatible_growth() {
    let c = cube(3, 1.0);
    let spec = KernelSpec::gaussian(0.5, 3).unwrap();
    let kappa = 1e-6;
    let constant = GrowthField::scalar(vec![0.3; c.n_elements()]).unwrap();
    assert!(compatibility_residual(&c, &constant, &spec, kappa).unwrap() <= 1e-2);
    let w: Vec<Vec3> = c.vertices().iter().map(|p| Vec3::new(p.y * p.y, p.x * p.z, (p.x).sin())).collect();
    let strains: Vec<Matrix3<f64>> = tet_strain(&c, &w).unwrap().iter().map(|d| (d + d.transpose()) * 0.5).collect();
    let compatible = GrowthField::full(strains).unwrap();
    assert!(compatibility_residual(&c, &compatible, &spec, kappa).unwrap() <= 5e-2);
    let centers: Vec<f64> = (0..c.n_elements())
        .map(|e| bump(&(c.element(e).iter().map(|&i| c.vertices()[i]).sum::<Vec3>() / 4.0)))
        .collect();
    let incompatible = GrowthField::scalar(centers).unwrap();
    assert!(compatibility_residual(&c, &incompatible, &spec, kappa).unwrap() >= 0.1);
}

#[test]
fn rk4_beats_euler_on_a_rotating_pair() {
    // Two antipodal landmarks pushed tangentially circle about the origin.
    let spec = KernelSpec::gaussian(1.0, 2).unwrap();
    let shape = DiscreteShape::landmarks(vec![Vec3::x(), -Vec3::x()], 2).unwrap();
    let cost = RunningCost { metric: HybridMetric::lddmm(1.0, spec).unwrap(), growth: GrowthMode::Off };
    let run = |n: usize, scheme: Scheme| {
        let mut c = Controls::zeros(n, 2, 0);
        for step in c.alpha.iter_mut() {
            *step = vec![Vec3::y(), -Vec3::y()];
        }
        integrate(&shape, &c, &cost, scheme).unwrap().final_shape().vertices()[0]
    };
    let reference = run(4096, Scheme::Rk4);
    let euler = (run(32, Scheme::Euler) - reference).norm();
    let rk4 = (run(32, Scheme::Rk4) - reference).norm();
    assert!(rk4 * 100.0 <= euler, "euler {euler} rk4 {rk4}");
    let halved = (run(64, Scheme::Euler) - reference).norm();
    assert!(((euler / halved).log2() - 1.0).abs() <= 0.5);
    let rk_halved = (run(16, Scheme::Rk4) - reference).norm() / rk4;
    assert!((rk_halved.log2() - 4.0).abs() <= 0.5, "rk4 order {}", rk_halved.log2());
}

fn polyline_split(c: &DiscreteShape) -> DiscreteShape {
    let x = c.vertices();
    let mut pts = Vec::new();
    for i in 0..x.len() {
        pts.push(x[i]);
        pts.push((x[i] + x[(i + 1) % x.len()]) * 0.5);
    }
    DiscreteShape::polyline(pts, 2, true).unwrap()
}

#[test]
fn varifold_subdivision_and_separation() {
    let a = ellipse(24, 1.0, 0.6);
    let spec = FidelitySpec::varifold(0.5);
    let split = polyline_split(&a);
    let norm_a = varifold_norm_sq(&a, &spec).unwrap();
    assert!(varifold_distance_sq(&a, &split, &spec).unwrap() <= 1e-3 * norm_a);

    let b = circle(24, 1.0, Vec3::new(40.0, 0.0, 0.0));
    let c = circle(24, 1.0, Vec3::zeros());
    let d = varifold_distance_sq(&c, &b, &spec).unwrap();
    let sum = varifold_norm_sq(&c, &spec).unwrap() + varifold_norm_sq(&b, &spec).unwrap();
    assert!((d - sum).abs() <= 1e-8);
}

#[test]
fn zero_controls_cost_only_the_initial_fidelity() {
    let s = DiscreteShape::landmarks(vec![Vec3::zeros(), Vec3::x()], 2).unwrap();
    let t = DiscreteShape::landmarks(vec![Vec3::new(0.1, 0.2, 0.0), Vec3::new(1.3, -0.1, 0.0)], 2).unwrap();
    let spec = KernelSpec::gaussian(0.5, 2).unwrap();
    let p = MatchProblem::new(s, t, HybridMetric::lddmm(1.0, spec).unwrap(), FidelitySpec::landmark());
    let o = objective(&p, &p.zero_controls()).unwrap();
    let u = 0.1f64.powi(2) + 0.2f64.powi(2) + 0.3f64.powi(2) + 0.1f64.powi(2);
    assert_relative_eq!(o.fidelity, u, max_relative = 1e-14);
    assert_relative_eq!(o.total, o.weight * u, max_relative = 1e-14);
    assert_relative_eq!(o.total, 1000.0, max_relative = 1e-12);
}

#[test]
fn empty_growth_set_matches_hybrid_cost() {
    let s = cube(1, 1.0);
    let t = s.with_vertices(s.vertices().iter().map(|p| p * 1.1).collect()).unwrap();
    let spec = KernelSpec::gaussian(0.8, 3).unwrap();
    let mut p = MatchProblem::new(s, t, HybridMetric::new(0.5, spec, iso()).unwrap(), FidelitySpec::landmark());
    p.n_steps = 3;
    p.growth = GrowthMode::Joint(AdmissibleSet::Zero);
    let c = random_controls(&p.zero_controls(), 3, 0.2, 15);
    let eq = growth_distance_equivalence_check(&p, &c).unwrap();
    assert_relative_eq!(eq.reduced, eq.joint, max_relative = 1e-10);
    let mut off = p.clone();
    off.growth = GrowthMode::Off;
    let o = objective(&off, &Controls { growth: vec![vec![]; 3], ..c.clone() }).unwrap();
    assert_relative_eq!(eq.joint, o.rkhs + o.elastic, max_relative = 1e-10);
    assert!(eq.pure_lddmm <= eq.joint);
}
