use std::sync::OnceLock;

use delaysync_core::analysis::{estimate_dsr, max_delay_bound_capped, vertex_verdict, DsrEstimate};
use delaysync_core::geometry::Point;
use delaysync_core::graph::{build_pinned_laplacian, check_assumption1, pinned_spectrum, PinnedDigraph};
use delaysync_core::lmi::{realify, realify_matrix, stability_lmi, stability_matrix, AgentModel, CMatrix};
use delaysync_core::oracle::{rightmost_root_adaptive, true_delay_margin};
use delaysync_core::sdp::{check_feasible, verify_witness, SolverOptions};
use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn oscillator() -> AgentModel {
    AgentModel::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
        .unwrap()
}

fn example_gain() -> DMatrix<f64> {
    DMatrix::from_row_slice(1, 2, &[0.134, 1.34 * 0.6403])
}

/// Random digraph with a spanning tree rooted at a pinned node: every node
/// past the first picks a parent among the earlier ones.
fn rooted_digraph() -> impl Strategy<Value = PinnedDigraph> {
    (2usize..=8)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec((0.0f64..1.0, 0.1f64..3.0), n - 1),
                proptest::collection::vec(proptest::option::weighted(0.25, 0.1f64..3.0), n * n),
                proptest::collection::vec(proptest::option::weighted(0.3, 0.1f64..3.0), n),
                0.1f64..3.0,
            )
        })
        .prop_map(|(n, parents, extra, pins, root_pin)| {
            let mut adj = DMatrix::zeros(n, n);
            for (k, (u, w)) in parents.into_iter().enumerate() {
                let child = k + 1;
                let parent = ((u * child as f64) as usize).min(child - 1);
                adj[(child, parent)] = w;
            }
            for (idx, w) in extra.into_iter().enumerate() {
                let (i, j) = (idx / n, idx % n);
                if let (Some(w), true) = (w, i != j) {
                    adj[(i, j)] += w;
                }
            }
            let mut pinning: Vec<f64> = pins.into_iter().map(|p| p.unwrap_or(0.0)).collect();
            pinning[0] = root_pin;
            PinnedDigraph::new(adj, pinning).unwrap()
        })
}

fn hermitian(max_n: usize) -> impl Strategy<Value = CMatrix> {
    (1..=max_n).prop_flat_map(|n| {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n).prop_map(move |v| {
            let a = CMatrix::from_iterator(n, n, v.into_iter().map(|(re, im)| Complex::new(re, im)));
            (&a + a.adjoint()) * Complex::new(0.5, 0.0)
        })
    })
}

fn sorted(v: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = v.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn simpson(h: f64, panels: usize, f: impl Fn(f64) -> DVector<f64>) -> DVector<f64> {
    let k = 2 * panels;
    let step = h / k as f64;
    let mut acc = f(0.0) + f(h);
    for i in 1..k {
        acc += f(i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * (step / 3.0)
}

fn example_region() -> &'static DsrEstimate {
    static REGION: OnceLock<DsrEstimate> = OnceLock::new();
    REGION.get_or_init(|| estimate_dsr(&oscillator(), &example_gain(), 0.419, 0.05, &SolverOptions::default()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pinned_laplacian_spectrum_is_in_open_right_half_plane(g in rooted_digraph()) {
        prop_assert!(check_assumption1(&g));
        let s = pinned_spectrum(&build_pinned_laplacian(&g)).unwrap();
        prop_assert!(s.min_real() > 0.0, "{:?}", s.eigenvalues());
        for z in s.eigenvalues() {
            prop_assert!(s.eigenvalues().iter().any(|w| (w - z.conj()).norm() < 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn realification_duplicates_spectrum(m in hermitian(5)) {
        let expected = sorted(SymmetricEigen::new(m.clone()).eigenvalues.iter().flat_map(|&l| [l, l]));
        let got = sorted(SymmetricEigen::new(realify_matrix(&m)).eigenvalues.iter().copied());
        for (a, b) in expected.iter().zip(&got) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn realification_preserves_definiteness(q in hermitian(5), negative in any::<bool>()) {
        let n = q.nrows();
        let sign = if negative { -1.0 } else { 1.0 };
        let m = (&q * &q + CMatrix::identity(n, n) * Complex::new(0.05, 0.0)) * Complex::new(sign, 0.0);
        let r = realify_matrix(&m) * sign;
        prop_assert!(r.clone().cholesky().is_some());
        prop_assert!((&r - r.transpose()).abs().max() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn jensen_bound_holds(
        h in 0.05f64..3.0,
        n in 1usize..=4,
        entries in proptest::collection::vec(-1.0f64..1.0, 16),
        coef in proptest::collection::vec(-2.0f64..2.0, 16),
        freq in 0.5f64..6.0,
    ) {
        let q = DMatrix::from_fn(n, n, |i, j| entries[i * 4 + j]);
        let r = &q * q.transpose() + DMatrix::identity(n, n) * 0.05;
        let phi = |s: f64| DVector::from_fn(n, |i, _| {
            let c = &coef[4 * i..4 * i + 4];
            c[0] + c[1] * s + c[2] * (freq * s).sin() + c[3] * (2.0 * freq * s).cos()
        });
        let int_phi = simpson(h, 400, phi);
        let int_quad = simpson(h, 400, |s| {
            let p = phi(s);
            DVector::from_element(1, (p.transpose() * &r * &p)[0])
        })[0];
        let lhs = (int_phi.transpose() * &r * &int_phi)[0];
        prop_assert!(lhs <= h * int_quad * (1.0 + 1e-10) + 1e-12, "{} > {}", lhs, h * int_quad);

        let c = DVector::from_fn(n, |i, _| coef[4 * i]);
        let int_c = &c * h;
        let lhs = (int_c.transpose() * &r * &int_c)[0];
        let rhs = h * h * (c.transpose() * &r * &c)[0];
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn stability_constraint_is_symmetric_and_affine(
        k0 in -1.0f64..1.0, k1 in -1.0f64..1.0,
        s1 in (0.0f64..3.0, -2.0f64..2.0), s2 in (0.0f64..3.0, -2.0f64..2.0),
        h in 0.0f64..2.0,
        t in 0.0f64..1.0,
        seed in proptest::collection::vec(-1.0f64..1.0, 64),
    ) {
        let model = oscillator();
        let a_d = model.delay_matrix(&DMatrix::from_row_slice(1, 2, &[k0, k1])).unwrap();
        let z1 = Complex::new(s1.0, s1.1);
        let z2 = Complex::new(s2.0, s2.1);
        let zt = z1 * (1.0 - t) + z2 * t;
        let p1 = stability_lmi(&model, &a_d, z1, h).unwrap();
        let p2 = stability_lmi(&model, &a_d, z2, h).unwrap();
        let pt = stability_lmi(&model, &a_d, zt, h).unwrap();
        let x: Vec<f64> = seed.iter().cycle().take(p1.n_vars()).copied().collect();
        let y: Vec<f64> = seed.iter().rev().cycle().take(p1.n_vars()).copied().collect();

        let m = pt.constraint_matrix(&x);
        prop_assert!((&m - m.transpose()).abs().max() < 1e-12);
        // Affine in the coupling point.
        let mix = p1.constraint_matrix(&x) * (1.0 - t) + p2.constraint_matrix(&x) * t;
        prop_assert!((&mix - &m).abs().max() < 1e-10 * (1.0 + m.abs().max()));
        // Affine in the decision variables.
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * (1.0 - t) + b * t).collect();
        let lhs = pt.constraint_matrix(&xy) - pt.constraint_matrix(&vec![0.0; x.len()]);
        let rhs = (pt.constraint_matrix(&x) - pt.constraint_matrix(&vec![0.0; x.len()])) * (1.0 - t)
            + (pt.constraint_matrix(&y) - pt.constraint_matrix(&vec![0.0; x.len()])) * t;
        prop_assert!((&lhs - &rhs).abs().max() < 1e-10 * (1.0 + lhs.abs().max()));
        // The realified constraint agrees with the realified Hermitian form.
        let herm = stability_matrix(&model, &a_d, zt, h).unwrap();
        let real = realify(&herm);
        prop_assert!((real.eval(&x) - realify_matrix(&herm.eval(&x))).abs().max() < 1e-12);
    }

    #[test]
    fn feasible_verdicts_carry_verified_witnesses(
        k0 in -0.5f64..0.5, k1 in 0.0f64..1.5,
        re in 0.05f64..3.0, im in -1.5f64..1.5,
        h in 0.0f64..1.0,
    ) {
        let model = oscillator();
        let a_d = model.delay_matrix(&DMatrix::from_row_slice(1, 2, &[k0, k1])).unwrap();
        let p = stability_lmi(&model, &a_d, Complex::new(re, im), h).unwrap();
        let opts = SolverOptions::default();
        let v = check_feasible(&p, &opts);
        if v.is_feasible() {
            let w = v.witness.as_ref().unwrap();
            prop_assert!(verify_witness(&p, w, &opts));
            prop_assert!(v.slack > 0.0);
        } else {
            prop_assert!(v.witness.is_none());
        }
    }

    #[test]
    fn region_interior_is_feasible_and_stable(weights in proptest::collection::vec(1e-6f64..1.0, 64)) {
        let region = example_region();
        let w = &weights[..region.hull.len()];
        let total: f64 = w.iter().sum();
        let z: Point = region.hull.iter().zip(w).map(|(v, wi)| v * (wi / total)).sum();
        prop_assert!(region.contains(z));
        let model = oscillator();
        let a_d = model.delay_matrix(&example_gain()).unwrap();
        let verdict = vertex_verdict(&model, &a_d, z, region.h, &SolverOptions::default()).unwrap();
        prop_assert!(verdict.is_feasible(), "{} {:?}", z, verdict.status);
        let root = rightmost_root_adaptive(&model, &a_d, z, region.h).unwrap().rightmost_root;
        prop_assert!(root.re < 0.0, "{} {}", z, root);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn certified_bound_never_exceeds_spectral_margin(
        k0 in 0.05f64..0.6, k1 in 0.3f64..1.5,
        sigma in 0.3f64..3.0,
    ) {
        let model = oscillator();
        let k = DMatrix::from_row_slice(1, 2, &[k0, k1]);
        let a_d = model.delay_matrix(&k).unwrap();
        let s = Complex::new(sigma, 0.0);
        prop_assume!(rightmost_root_adaptive(&model, &a_d, s, 0.0).unwrap().rightmost_root.re < 0.0);
        let tol = 1e-3;
        let bound = max_delay_bound_capped(&model, &k, &[s], tol, 10.0, &SolverOptions::default()).unwrap();
        let margin = true_delay_margin(&model, &a_d, &[s], tol).unwrap();
        prop_assert!(bound.h_max <= margin.margin + 2.0 * tol, "{} > {}", bound.h_max, margin.margin);
    }
}
