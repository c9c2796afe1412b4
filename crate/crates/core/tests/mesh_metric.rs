use cmcsweep::mesh::build_icosphere;
use cmcsweep::metric::{total_volume_quadrature, LinearFactor, MetricModel, MobiusFactor};
use cmcsweep::{Error, Vec3, Vec4};
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

fn coordinate(mesh: &cmcsweep::mesh::SphereMesh, f: impl Fn(&Vec3) -> f64) -> Vec<f64> {
    mesh.vertices().iter().map(f).collect()
}

#[test]
fn icosphere_counts_and_invariants() {
    let m0 = build_icosphere(0).unwrap();
    assert_eq!((m0.num_vertices(), m0.num_faces()), (12, 20));
    for level in 0..=4 {
        let m = build_icosphere(level).unwrap();
        let k = 4usize.pow(level as u32);
        assert_eq!(m.num_vertices(), 10 * k + 2);
        assert_eq!(m.num_faces(), 20 * k);
        assert_eq!(m.num_vertices() + m.num_faces() - m.num_edges(), 2);
        assert!(m.vertices().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        assert_eq!(m.stiffness().max_asymmetry(), 0.0);
    }
    let m3 = build_icosphere(3).unwrap();
    assert_eq!((m3.num_vertices(), m3.num_faces()), (642, 1280));
    assert!(matches!(build_icosphere(9), Err(Error::Capacity { .. })));
}

#[test]
fn icosphere_is_deterministic() {
    let a = build_icosphere(3).unwrap();
    let b = build_icosphere(3).unwrap();
    assert_eq!(a.vertices(), b.vertices());
    assert_eq!(a.faces(), b.faces());
}

#[test]
fn faces_are_counterclockwise_from_outside() {
    let m = build_icosphere(2).unwrap();
    for f in m.faces() {
        let [a, b, c] = f.map(|i| m.vertices()[i]);
        assert!((b - a).cross(&(c - a)).dot(&(a + b + c)) > 0.0);
    }
}

#[test]
fn total_area_converges_to_sphere() {
    let m = build_icosphere(4).unwrap();
    assert!((m.total_area() / (4.0 * PI) - 1.0).abs() < 2e-3);
}

#[test]
fn stiffness_kernel_and_positivity() {
    let m = build_icosphere(3).unwrap();
    let ones = vec![1.0; m.num_vertices()];
    assert!(m.stiffness().mul_vec(&ones).iter().all(|x| x.abs() < 1e-12));
    let f = coordinate(&m, |v| v[0] * v[1] + 0.3 * v[2]);
    assert!(m.dirichlet_pairing(&f, &f) > 0.0);
}

#[test]
fn coordinate_function_energy_and_laplacian() {
    let m = build_icosphere(5).unwrap();
    let z = coordinate(&m, |v| v[2]);
    let e = m.dirichlet_pairing(&z, &z);
    assert!((e / (8.0 * PI / 3.0) - 1.0).abs() < 0.01, "{e}");
    let lap = m.laplacian(&z);
    let w = m.vertex_areas();
    let num: f64 = (0..z.len()).map(|i| w[i] * (lap[i] + 2.0 * z[i]).powi(2)).sum();
    let den: f64 = (0..z.len()).map(|i| w[i] * (2.0 * z[i]).powi(2)).sum();
    assert!((num / den).sqrt() < 0.02);
}

#[test]
fn galerkin_energies_converge_quadratically() {
    let fields: [(fn(&Vec3) -> f64, f64); 4] = [
        (|v| v[0], 8.0 * PI / 3.0),
        (|v| v[1], 8.0 * PI / 3.0),
        (|v| v[2], 8.0 * PI / 3.0),
        (|v| v[2] * v[2] - 1.0 / 3.0, 32.0 * PI / 15.0),
    ];
    let meshes: Vec<_> = (2..=5).map(|l| build_icosphere(l).unwrap()).collect();
    for (f, exact) in fields {
        let errs: Vec<f64> = meshes
            .iter()
            .map(|m| {
                let v = coordinate(m, f);
                (m.dirichlet_pairing(&v, &v) - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.0..=5.0).contains(&ratio), "error ratio {ratio} ({errs:?})");
        }
    }
    let m = &meshes[3];
    let one = vec![1.0; m.num_vertices()];
    assert!(m.dirichlet_pairing(&one, &one).abs() < 1e-12);
}

#[test]
fn bochner_identity_for_coordinate_function() {
    // ∫|∇²z|² = ∫|Δz|² − ∫|∇z|² = 8π/3 on the unit sphere.
    let exact = 8.0 * PI / 3.0;
    let errs: Vec<f64> = [4, 5]
        .iter()
        .map(|&l| {
            let m = build_icosphere(l).unwrap();
            let z = coordinate(&m, |v| v[2]);
            let lap = m.laplacian(&z);
            let bi: f64 = lap.iter().zip(m.vertex_areas()).map(|(d, w)| w * d * d).sum();
            (bi - m.dirichlet_pairing(&z, &z) - exact).abs() / exact
        })
        .collect();
    assert!(errs[1] < 0.05 && errs[1] < errs[0], "{errs:?}");
}

#[test]
fn ball_queries() {
    let m = build_icosphere(4).unwrap();
    assert_eq!(m.local_ball_indices(&Vec3::z(), PI - 1e-9).len(), m.num_vertices());
    let v = m.vertices()[17];
    assert_eq!(m.local_ball_indices(&v, 1e-12), vec![17]);
    let half = m.local_ball_indices(&Vec3::z(), PI / 2.0).len() as f64 / m.num_vertices() as f64;
    assert!((half - 0.5).abs() < 0.05 * 0.5);
}

#[test]
fn round_model_examples() {
    let g = MetricModel::round_s3();
    let e = |i| Vec4::ith(i, 1.0);
    // Orientation Vol_y(X, Y, Z) = det[y, X, Y, Z].
    assert!((g.cross(&e(3), &e(0), &e(1)) + e(2)).norm() < 1e-15);
    assert!((g.second_fundamental(&e(3), &e(0), &e(0)) + e(3)).norm() < 1e-15);
    assert_eq!(g.project(&Vec4::new(0.0, 0.0, 0.0, 2.0)).unwrap(), e(3));
    assert!((g.tangent_projector(&e(3)) * e(3)).norm() < 1e-15);
    assert!(matches!(g.project(&Vec4::zeros()), Err(Error::OutsideTube { .. })));
    assert!((g.total_volume() - 2.0 * PI * PI).abs() < 1e-12);
    assert_eq!(g.ambient_dim(), 4);
}

#[test]
fn constant_conformal_factor_scales() {
    let c = 0.3;
    let g = MetricModel::conformal_round(Arc::new(LinearFactor { a: [0.0; 4], b: c }));
    let r = MetricModel::round_s3();
    let y = Vec4::new(0.1, 0.7, -0.3, 0.5).normalize();
    let x = r.project_tangent(&y, &Vec4::new(1.0, 0.2, 0.0, -0.4));
    let z = r.project_tangent(&y, &Vec4::new(0.0, 1.0, 0.5, 0.2));
    let w = r.project_tangent(&y, &Vec4::new(0.3, -0.1, 1.0, 0.0));
    let ratio = g.volume_form(&y, &x, &z, &w) / r.volume_form(&y, &x, &z, &w);
    assert!((ratio - (3.0 * c).exp()).abs() < 1e-12);
    assert!((g.cross(&y, &x, &z) - r.cross(&y, &x, &z) * c.exp()).norm() < 1e-12);
}

#[test]
fn linear_factor_volume_matches_independent_quadrature() {
    let g = MetricModel::conformal_round(Arc::new(LinearFactor {
        a: [0.0, 0.0, 0.0, 0.1],
        b: 0.0,
    }));
    // Hopf coordinates: y = (cos η e^{iξ₁}, sin η e^{iξ₂}), dVol = sin η cos η.
    let (n, n2) = (4000, 64);
    let mut acc = 0.0;
    for i in 0..n {
        let eta = (i as f64 + 0.5) / n as f64 * PI / 2.0;
        for k in 0..n2 {
            let xi2 = (k as f64 + 0.5) / n2 as f64 * 2.0 * PI;
            let y4 = eta.sin() * xi2.sin();
            acc += (0.3 * y4).exp() * eta.sin() * eta.cos();
        }
    }
    let oracle = acc * (PI / 2.0 / n as f64) * (2.0 * PI / n2 as f64) * 2.0 * PI;
    assert!((g.total_volume() / oracle - 1.0).abs() < 1e-6, "{} vs {oracle}", g.total_volume());
    let q = total_volume_quadrature(|y| (0.3 * y[3]).exp(), 64);
    assert!((q / oracle - 1.0).abs() < 1e-6);
}

fn unit4() -> impl Strategy<Value = Vec4> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("nonzero", |a| a.iter().map(|x| x * x).sum::<f64>() > 0.05)
        .prop_map(|a| Vec4::from(a).normalize())
}

fn vec4() -> impl Strategy<Value = Vec4> {
    prop::array::uniform4(-2.0f64..2.0).prop_map(Vec4::from)
}

fn models() -> &'static [MetricModel] {
    static MODELS: std::sync::OnceLock<Vec<MetricModel>> = std::sync::OnceLock::new();
    MODELS.get_or_init(|| vec![
        MetricModel::round_s3(),
        MetricModel::conformal_round(Arc::new(MobiusFactor { t: 0.6 })),
        MetricModel::conformal_round(Arc::new(LinearFactor {
            a: [0.2, -0.1, 0.3, 0.1],
            b: 0.05,
        })),
        MetricModel::conformal_round(Arc::new(LinearFactor { a: [0.0; 4], b: 0.0 })),
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metric_invariants(y in unit4(), a in vec4(), b in vec4(), c in vec4()) {
        for g in &models()[..3] {
            let p = g.tangent_projector(&y);
            prop_assert!((p * p - p).abs().max() < 1e-10);
            prop_assert!((p * y).norm() < 1e-10);
            let (x, z, w) = (p * a, p * b, p * c);
            let q = g.cross(&y, &x, &z);
            prop_assert!((q + g.cross(&y, &z, &x)).norm() < 1e-10 * (1.0 + q.norm()));
            let scale = 1.0 + x.norm() * z.norm() * w.norm();
            prop_assert!(g.inner(&y, &q, &x).abs() < 1e-10 * scale);
            prop_assert!(g.inner(&y, &q, &z).abs() < 1e-10 * scale);
            prop_assert!((g.volume_form(&y, &x, &z, &w) - g.inner(&y, &q, &w)).abs() < 1e-10 * scale);
            // Lagrange identity in the metric: g(Q, Q) = g(X,X) g(Z,Z) − g(X,Z)².
            let lag = g.inner(&y, &x, &x) * g.inner(&y, &z, &z) - g.inner(&y, &x, &z).powi(2);
            prop_assert!((g.inner(&y, &q, &q) - lag).abs() < 1e-10 * (1.0 + lag.abs()));
            let s = g.second_fundamental(&y, &x, &z);
            prop_assert!((s - g.second_fundamental(&y, &z, &x)).norm() < 1e-12 * (1.0 + s.norm()));
            prop_assert!((p * s).norm() < 1e-10 * (1.0 + s.norm()));
        }
    }

    #[test]
    fn zero_factor_agrees_with_round(y in unit4(), a in vec4(), b in vec4(), c in vec4()) {
        let r = MetricModel::round_s3();
        let g = &models()[3];
        let p = r.tangent_projector(&y);
        let (x, z, w) = (p * a, p * b, p * c);
        prop_assert!((g.cross(&y, &x, &z) - r.cross(&y, &x, &z)).norm() < 1e-12);
        prop_assert!((g.volume_form(&y, &x, &z, &w) - r.volume_form(&y, &x, &z, &w)).abs() < 1e-12);
        prop_assert!((g.ricci(&y, &x, &z) - r.ricci(&y, &x, &z)).abs() < 1e-12);
        prop_assert!((r.ricci(&y, &x, &z) - 2.0 * x.dot(&z)).abs() < 1e-12);
    }
}
