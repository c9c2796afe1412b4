use cmcsweep::energy::{
    cmc_residual, dirichlet, fit_mean_curvature, gradient, hopf_residual, perturbed_energy, tracked_energy,
    volume_increment, Hessian,
};
use cmcsweep::flow::{descend, energy_trace, FlowConfig, FlowStatus};
use cmcsweep::maps;
use cmcsweep::mesh::{build_icosphere, SphereMesh};
use cmcsweep::metric::MetricModel;
use cmcsweep::{Vec3, Vec4};
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

fn mesh(level: usize) -> Arc<SphereMesh> {
    static MESHES: OnceLock<Vec<Arc<SphereMesh>>> = OnceLock::new();
    MESHES.get_or_init(|| (0..=5).map(|l| Arc::new(build_icosphere(l).unwrap())).collect())[level].clone()
}

fn round() -> Arc<MetricModel> {
    Arc::new(MetricModel::round_s3())
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

#[test]
fn dirichlet_examples() {
    let (m, g) = (mesh(5), round());
    let c = maps::constant(&m, &g, Vec4::new(0.0, 0.6, 0.0, 0.8)).unwrap();
    assert_eq!(dirichlet(&c), 0.0);
    assert!(rel(dirichlet(&maps::equator(&m, &g).unwrap()), 4.0 * PI) < 0.01);
    // t = 0.25, c = −0.5: D = 4π(1 − c²) = 3π.
    assert!(rel(dirichlet(&maps::latitude(&m, &g, -0.5).unwrap()), 3.0 * PI) < 0.01);
}

#[test]
fn perturbed_energy_examples() {
    let (m, g) = (mesh(5), round());
    let eq = maps::equator(&m, &g).unwrap();
    assert_eq!(perturbed_energy(&eq, 0.0), dirichlet(&eq));
    assert!(rel(perturbed_energy(&eq, 0.5), 6.0 * PI) < 0.02);
    let c = maps::constant(&m, &g, Vec4::w()).unwrap();
    assert_eq!(perturbed_energy(&c, 0.7), 0.0);
}

#[test]
fn volume_increment_examples() {
    let (m, g) = (mesh(3), round());
    let u = maps::random_smooth(&m, &g, 3, 0.4).unwrap();
    assert_eq!(volume_increment(&u, &u).unwrap(), 0.0);
    let v = u.displaced(&maps::random_tangent(&u, 4), 0.05).unwrap();
    let (a, b) = (volume_increment(&u, &v).unwrap(), volume_increment(&v, &u).unwrap());
    assert!((a + b).abs() < 1e-10);
    assert!(a.abs() > 1e-4);
}

#[test]
fn tracked_energy_examples() {
    let (m, g) = (mesh(5), round());
    let c = maps::constant(&m, &g, Vec4::x()).unwrap();
    assert_eq!(tracked_energy(&c, 0.0, 3.0, 0.1).total, 0.0);
    let eq = maps::equator(&m, &g).unwrap();
    let e = tracked_energy(&eq, PI * PI, 2.0, 0.0);
    assert!(rel(e.total, 4.0 * PI + 2.0 * PI * PI) < 0.01);
    // The hemisphere volume by accumulation from the pole.
    let sw = cmcsweep::minmax::latitude_sweepout(&mesh(4), &g, 64).unwrap();
    let mid = sw.volumes()[sw.len() / 2 - 1] + volume_increment(&sw.slices()[sw.len() / 2 - 1], &maps::equator(&mesh(4), &g).unwrap()).unwrap();
    assert!(rel(mid, PI * PI) < 0.005, "{mid}");
    assert_eq!(tracked_energy(&eq, 123.0, 0.0, 0.2).total, perturbed_energy(&eq, 0.2));
}

#[test]
fn gradient_vanishes_on_constants_and_nearly_on_the_equator() {
    let (m, g) = (mesh(3), round());
    let c = maps::constant(&m, &g, Vec4::new(0.5, 0.5, 0.5, 0.5)).unwrap();
    for &(h, eps) in &[(0.0, 0.0), (2.0, 0.3)] {
        assert!(gradient(&c, h, eps).tangent.iter().all(|v| *v == Vec4::zeros()));
    }
    let m5 = mesh(5);
    let eq = maps::equator(&m5, &g).unwrap();
    let gr = gradient(&eq, 0.0, 0.0);
    let norm = |f: &[Vec4]| {
        f.iter()
            .zip(m5.vertex_areas())
            .map(|(v, w)| v.norm_squared() / w)
            .sum::<f64>()
            .sqrt()
    };
    assert!(norm(&gr.tangent) / norm(&gr.ambient) < 1e-2);
}

#[test]
fn hessian_at_constant_is_nonnegative() {
    let (m, g) = (mesh(3), round());
    let c = maps::constant(&m, &g, Vec4::new(0.0, 0.0, 0.6, 0.8)).unwrap();
    let hess = Hessian::new(&c, 1.5, 0.1);
    for seed in 0..10 {
        let psi = maps::random_rough_tangent(&c, seed, 1.0);
        assert!(hess.form(&psi, &psi) >= 0.0);
    }
}

#[test]
fn residual_examples() {
    let g = round();
    let c = maps::constant(&mesh(3), &g, Vec4::w()).unwrap();
    assert_eq!(cmc_residual(&c, 0.0).norm, 0.0);
    let h = hopf_residual(&c);
    assert!(h.degenerate && h.value == 0.0);
    let (r4, r5) = (
        cmc_residual(&maps::equator(&mesh(4), &g).unwrap(), 0.0).norm,
        cmc_residual(&maps::equator(&mesh(5), &g).unwrap(), 0.0).norm,
    );
    assert!(r5 < 5e-2 && r5 < r4, "{r4} {r5}");
    let m5 = mesh(5);
    assert!(hopf_residual(&maps::equator(&m5, &g).unwrap()).value < 2e-2);
    for r in [PI / 6.0, PI / 4.0, PI / 3.0] {
        let u = maps::geodesic_sphere(&m5, &g, r).unwrap();
        let hs = fit_mean_curvature(&u);
        assert!(rel(hs, 2.0 / r.tan()) < 0.02);
        assert!(cmc_residual(&u, hs).norm < 5e-2);
        assert!(hopf_residual(&u).value < 2e-2);
    }
    let pi4 = maps::geodesic_sphere(&m5, &g, PI / 4.0).unwrap();
    assert!((fit_mean_curvature(&pi4) - 2.0).abs() < 0.04);
    assert!(hopf_residual(&maps::anisotropic(&mesh(3), &g).unwrap()).value > 0.05);
}

#[test]
fn residual_minimizer_is_the_least_squares_h() {
    let g = round();
    let u = maps::geodesic_sphere(&mesh(3), &g, 1.0).unwrap();
    let hs = fit_mean_curvature(&u);
    let r0 = cmc_residual(&u, hs).norm;
    assert!(cmc_residual(&u, hs + 1e-3).norm > r0 && cmc_residual(&u, hs - 1e-3).norm > r0);
}

#[test]
fn dirichlet_is_nearly_conformally_invariant() {
    let (m, g) = (mesh(5), round());
    let eq = |x: &Vec3| Vec4::new(x[0], x[1], x[2], 0.0);
    let u = maps::reparametrized(&m, &g, eq, &Vec3::new(0.2, -0.3, 0.9).normalize(), 2.0).unwrap();
    assert!(rel(dirichlet(&u), dirichlet(&maps::equator(&m, &g).unwrap())) < 0.02);
}

#[test]
fn volume_of_loops_is_a_multiple_of_the_total() {
    // Rotating the equator in the (e₃, e₄) plane by a full turn sweeps S³ twice
    // with opposite orientations: the loop is contractible.
    let (m, g) = (mesh(3), round());
    let n = 40;
    let at = |k: usize| {
        let th = 2.0 * PI * k as f64 / n as f64;
        maps::from_fn(&m, &g, |x| Vec4::new(x[0], x[1], x[2] * th.cos(), x[2] * th.sin())).unwrap()
    };
    let mut total = 0.0;
    for k in 0..n {
        total += volume_increment(&at(k), &at(k + 1)).unwrap();
    }
    let q = total / g.total_volume();
    assert!((q - q.round()).abs() < 1e-6, "{q}");
}

#[test]
fn flow_from_a_constant_stops_immediately() {
    let (m, g) = (mesh(2), round());
    let c = maps::constant(&m, &g, Vec4::z()).unwrap();
    let rec = descend(&c, 0.0, 1.0, 0.1, &FlowConfig::default()).unwrap();
    assert_eq!(rec.summary.iterations, 0);
    assert_eq!(rec.summary.grad_norm, 0.0);
    assert_eq!(rec.summary.status, FlowStatus::Converged);
    let csv = energy_trace(&rec).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "iteration,dirichlet,d_eps,volume,energy,grad_norm");
    assert!(lines[1].starts_with("0,0.0,0.0,0.0,0.0,"));
}

#[test]
fn flow_returns_a_perturbed_equator() {
    let (m, g) = (mesh(3), round());
    let eq = maps::equator(&m, &g).unwrap();
    // Noise inside the equatorial S²: a normal component would excite the
    // unstable latitude mode.
    let noise: Vec<Vec4> = maps::random_rough_tangent(&eq, 9, 0.01)
        .into_iter()
        .map(|v| Vec4::new(v[0], v[1], v[2], 0.0))
        .collect();
    let u0 = eq.displaced(&noise, 1.0).unwrap();
    let v0 = 0.7;
    let rec = descend(&u0, v0, 0.0, 0.1, &FlowConfig::default()).unwrap();
    let s = &rec.summary;
    assert_eq!(s.status, FlowStatus::Converged);
    assert!(s.grad_norm <= FlowConfig::default().tolerance);
    assert!(rel(s.energy.d_eps, perturbed_energy(&eq, 0.1)) < 0.02);
    assert!(s.cmc_residual < 0.1 && s.hopf_residual < 0.05);
    assert!(rec.trace.windows(2).all(|w| w[1].energy < w[0].energy));
    // Tracked volume against a direct increment over the same (short) loop.
    let direct = volume_increment(&u0, &rec.map).unwrap();
    assert!((s.energy.volume - v0 - direct).abs() < 1e-9);
    assert_eq!(rec.trace.last().unwrap().volume, s.energy.volume);
}

#[test]
fn small_maps_collapse() {
    let (m, g) = (mesh(3), round());
    let c = maps::constant(&m, &g, Vec4::new(0.6, 0.0, 0.0, 0.8)).unwrap();
    let u = c.displaced(&maps::random_tangent(&c, 3), 0.02).unwrap();
    assert!(perturbed_energy(&u, 0.1) < 0.1);
    let rec = descend(&u, 0.0, 1.0, 0.1, &FlowConfig::default()).unwrap();
    assert_eq!(rec.summary.status, FlowStatus::CollapsedToConstant);
}

#[test]
fn nonconstant_critical_points_stay_above_the_collapse_threshold() {
    use cmcsweep::minmax::{extract_critical_point, latitude_sweepout, mountain_pass, MinMaxConfig};
    use rand::{Rng, SeedableRng};
    let (h, eps) = (1.0, 0.1);
    let mm = MinMaxConfig::default();
    let sw = latitude_sweepout(&mesh(2), &round(), 16).unwrap();
    let (out, rec) = mountain_pass(&sw, h, eps, &mm).unwrap();
    let crit = extract_critical_point(&out, &rec, &mm).unwrap();
    assert_eq!(crit.summary.status, FlowStatus::Converged);
    let base = crit.map;
    let tol = mm.tolerance.max(mm.flow.tolerance);
    let mut min_d: f64 = f64::INFINITY;
    for seed in 0..20u64 {
        // Random rotation of R⁴ from the QR factor of a random matrix.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = cmcsweep::Mat4::from_fn(|_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let mut q = a.qr().q();
        if q.determinant() < 0.0 {
            q.column_mut(0).neg_mut();
        }
        let u = base.with_values(base.values().iter().map(|y| q * y).collect()).unwrap();
        let check = FlowConfig {
            max_iterations: 0,
            tolerance: tol,
            ..mm.flow
        };
        let r = descend(&u, 0.0, h, eps, &check).unwrap();
        assert_eq!(r.summary.status, FlowStatus::Converged, "seed {seed}: {}", r.summary.grad_norm);
        min_d = min_d.min(r.summary.energy.d_eps);
    }
    assert!(min_d > 10.0 * mm.flow.collapse_threshold, "{min_d}");
}

fn map_strategy() -> impl Strategy<Value = (u64, f64)> {
    (0u64..1000, 0.1f64..0.8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_breakdown_invariants((seed, amp) in map_strategy(), e1 in 0.0f64..0.3, e2 in 0.0f64..0.3, h in -3.0f64..3.0, v in -20.0f64..20.0) {
        let u = maps::random_smooth(&mesh(2), &round(), seed, amp).unwrap();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(perturbed_energy(&u, lo) <= perturbed_energy(&u, hi));
        let e = tracked_energy(&u, v, h, hi);
        prop_assert!((e.d_eps - (e.dirichlet + e.biharmonic)).abs() < 1e-12 * e.d_eps.max(1.0));
        prop_assert!((e.total - (e.d_eps + h * v)).abs() < 1e-12 * e.total.abs().max(1.0));
        prop_assert!(e.d_eps >= e.dirichlet && e.dirichlet >= 0.0);
        // Affine in H with slope V.
        let e0 = tracked_energy(&u, v, 0.0, hi).total;
        let e1 = tracked_energy(&u, v, 1.0, hi).total;
        prop_assert!((e.total - (e0 + h * (e1 - e0))).abs() < 1e-10 * e.total.abs().max(1.0));
        prop_assert!((e1 - e0 - v).abs() < 1e-10 * v.abs().max(1.0));
    }

    #[test]
    fn volume_increment_is_antisymmetric((seed, amp) in map_strategy(), t in 0.01f64..0.3) {
        let u = maps::random_smooth(&mesh(2), &round(), seed, amp).unwrap();
        let w = u.displaced(&maps::random_tangent(&u, seed + 1), t).unwrap();
        if u.max_distance(&w).unwrap() < u.metric().locality() {
            let a = volume_increment(&u, &w).unwrap();
            let b = volume_increment(&w, &u).unwrap();
            prop_assert!((a + b).abs() < 1e-10);
        }
    }

    #[test]
    fn projected_maps_stay_on_target((seed, amp) in map_strategy(), t in -0.4f64..0.4) {
        let u = maps::random_smooth(&mesh(2), &round(), seed, amp).unwrap();
        let w = u.displaced(&maps::random_rough_tangent(&u, seed, 0.3), t).unwrap();
        prop_assert!(w.values().iter().all(|y| (y.norm() - 1.0).abs() < 1e-10));
        let psi = maps::random_tangent(&w, seed);
        prop_assert!(w.tangency_defect(&psi) < 1e-10);
    }
}
