mod common;

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use serde_json::json;

use stabopt_core::certify::{
    invariant_set_contains, sector_respected, w_min_bruteforce_rows, w_min_closed_form, w_min_rows, wdot_value,
};
use stabopt_core::fault::{closed_form_cleared, taylor_cleared, FaultScenario};
use stabopt_core::optimize::{level_bounds, HullParams, Variant};
use stabopt_core::pipeline::{certify_scenario, Certified};
use stabopt_core::powerflow::{injection_p, pf_jacobian, pf_residual, solve_pf, solve_pf_from, PfOptions};
use stabopt_core::{build_admittance, Injections, NetworkVariant, PowerCase, ScenarioSpec, SteadyState};

use common::{fixture, FIXTURES};

/// Random connected network: a tree given by `parents` plus `extra` edges.
fn random_case(parents: &[usize], extra: &[(usize, usize)], lines: &[(f64, f64)], loads: &[f64]) -> PowerCase {
    let n = parents.len() + 1;
    let buses: Vec<_> = (0..n)
        .map(|i| json!({"id": i + 1, "kind": if i == 0 { "generator" } else { "load" }, "damping": 0.1}))
        .collect();
    let mut pairs: Vec<(usize, usize)> = parents.iter().enumerate().map(|(k, &p)| (p % (k + 1), k + 1)).collect();
    pairs.extend(extra.iter().map(|&(a, b)| (a % n, b % n)).filter(|(a, b)| a != b));
    let branches: Vec<_> = pairs
        .iter()
        .zip(lines.iter().cycle())
        .map(|(&(a, b), &(g, x))| json!({"from": a + 1, "to": b + 1, "g": g, "b": -x}))
        .collect();
    let text = json!({
        "name": "random",
        "buses": buses,
        "branches": branches,
        "generators": [{"bus": 1, "p_min": 0, "p_max": 10, "q_min": -10, "q_max": 10,
                        "cost_quadratic": 1, "cost_linear": 1, "inertia": 0.2, "damping": 1.0}],
        "loads": (1..n).map(|i| json!({"bus": i + 1, "p": loads[i % loads.len()], "q": 0.1 * loads[i % loads.len()]})).collect::<Vec<_>>(),
        "limits": {"v_min": 0.9, "v_max": 1.1, "angle_diff_min": -1, "angle_diff_max": 1}
    });
    PowerCase::from_json_str(&text.to_string()).unwrap()
}

fn network() -> impl Strategy<Value = PowerCase> {
    (2usize..7)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(0usize..100, n - 1),
                proptest::collection::vec((0usize..10, 0usize..10), 0..3),
                proptest::collection::vec((prop_oneof![Just(0.0), 0.0..2.0], 1.0..15.0), 1..4),
                proptest::collection::vec(0.0..0.4, 1..4),
            )
        })
        .prop_map(|(p, e, l, d)| random_case(&p, &e, &l, &d))
}

fn certified(k: usize) -> &'static Certified {
    static CERTS: OnceLock<Vec<(PowerCase, Certified)>> = OnceLock::new();
    let all = CERTS.get_or_init(|| {
        FIXTURES
            .iter()
            .map(|(c, s)| {
                let (case, spec) = fixture(c, s);
                let cz = certify_scenario(&case, &spec, stabopt_core::lure::DEFAULT_XI).unwrap();
                (case, cz)
            })
            .collect()
    });
    &all[k].1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn admittance_is_symmetric_with_branch_sparsity(case in network()) {
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        prop_assert!(y.is_symmetric());
        let n = case.n_bus();
        for i in 0..n {
            for j in 0..n {
                if i == j { continue; }
                let adjacent = case.branches.iter().any(|b| (b.from, b.to) == (i, j) || (b.from, b.to) == (j, i));
                prop_assert_eq!(y.get(i, j).norm() > 0.0, adjacent);
            }
        }
    }

    #[test]
    fn branch_removal_round_trips(case in network(), pick in 0usize..100) {
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let br = &case.branches[pick % case.branches.len()];
        let back = y.with_branch_removed(br).with_branch_added(br);
        prop_assert!(back.max_abs_diff(&y) < 1e-12);
    }

    #[test]
    fn admittance_angles_are_in_range(case in network()) {
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        for (i, j) in y.edges() {
            let a = y.alpha(i, j);
            prop_assert!(a > -PI / 2.0 && a <= PI / 2.0);
            if y.g(i, j) == 0.0 {
                prop_assert_eq!(a, 0.0);
            }
        }
    }

    #[test]
    fn lossless_injections_sum_to_zero(case in network(), seed in 0u64..1000) {
        let mut lossless = case.clone();
        lossless.branches.iter_mut().for_each(|b| { b.g = 0.0; b.shunt_b = 0.0; });
        let y = build_admittance(&lossless, NetworkVariant::Base, None).unwrap();
        let n = lossless.n_bus();
        let s = SteadyState {
            v: (0..n).map(|i| 0.9 + 0.2 * (((seed + i as u64) * 7919) % 100) as f64 / 100.0).collect(),
            theta: (0..n).map(|i| (((seed * 31 + i as u64) * 104729) % 200) as f64 / 100.0 - 1.0).collect(),
        };
        let total: f64 = (0..n).map(|i| injection_p(&s, &y, i)).sum();
        prop_assert!(total.abs() < 1e-10, "{}", total);
    }

    #[test]
    fn jacobian_matches_central_differences(case in network(), v in proptest::collection::vec(0.9..1.1f64, 7), th in proptest::collection::vec(-0.5..0.5f64, 7)) {
        let n = case.n_bus();
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let s = SteadyState { v: v[..n].to_vec(), theta: th[..n].to_vec() };
        let inj = Injections::zeros(n);
        let jac = pf_jacobian(&s, &case, &y);
        let layout = stabopt_core::powerflow::PfLayout::new(&case);
        let cols: Vec<(bool, usize)> = layout.angle_buses.iter().map(|&i| (true, i)).chain(layout.pq_buses.iter().map(|&i| (false, i))).collect();
        for (c, &(is_angle, i)) in cols.iter().enumerate() {
            let h = 1e-6;
            let (mut a, mut b) = (s.clone(), s.clone());
            if is_angle { a.theta[i] += h; b.theta[i] -= h; } else { a.v[i] += h; b.v[i] -= h; }
            let ra = pf_residual(&a, &case, &y, &inj);
            let rb = pf_residual(&b, &case, &y, &inj);
            for r in 0..ra.len() {
                let fd = (ra[r] - rb[r]) / (2.0 * h);
                prop_assert!((jac[(r, c)] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "row {} col {}: {} vs {}", r, c, jac[(r, c)], fd);
            }
        }
    }

    #[test]
    fn power_flow_solution_is_a_fixed_point(case in network()) {
        let y = build_admittance(&case, NetworkVariant::Base, None).unwrap();
        let inj = Injections::from_dispatch(&case, &[0.0], &[0.0]);
        if let Ok(s) = solve_pf(&case, &inj, &y) {
            let again = solve_pf_from(&case, &inj, &y, s, PfOptions::default()).unwrap();
            prop_assert!(again.iterations <= 1);
        }
    }

    #[test]
    fn closed_form_level_matches_kkt_oracle(seed in any::<u64>(), dim in 2usize..7, rows in 1usize..4) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let p = &m * m.transpose() + DMatrix::identity(dim, dim) * 0.05;
        let c = DMatrix::from_fn(rows, dim, |_, _| rng.gen_range(-1.0..1.0));
        let half = vec![PI; rows];
        let centers: Vec<f64> = (0..rows).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let closed = w_min_rows(&p, &c, &centers, &half).unwrap();
        let brute = w_min_bruteforce_rows(&p, &c, &centers, &half).unwrap();
        prop_assert!((closed.w_min - brute).abs() <= 1e-6 * brute.abs().max(1e-12));
        // each face minimizer sits on its face with the reported value
        for i in 0..rows {
            let x = DVector::from_vec(closed.minimizers[i].clone());
            let on_face = (c.row(i) * &x)[0];
            let face = [centers[i] + PI, centers[i] - PI];
            prop_assert!(face.iter().any(|f| (on_face - f).abs() < 1e-9));
            prop_assert!((x.dot(&(&p * &x)) - closed.per_row[i]).abs() < 1e-9 * closed.per_row[i].max(1.0));
        }
    }

    #[test]
    fn certificate_scaling_preserves_the_invariant_set(k in 0usize..3, c in 0.05..20.0f64, u in proptest::collection::vec(-1.0..1.0f64, 16)) {
        let cz = certified(k);
        let scaled = cz.cert.scaled(c);
        let a = w_min_closed_form(&cz.cert, &cz.sys).unwrap();
        let b = w_min_closed_form(&scaled, &cz.sys).unwrap();
        prop_assert!((b.w_min - c * a.w_min).abs() <= 1e-9 * b.w_min);
        prop_assert_eq!(a.argmin, b.argmin);
        let x = DVector::from_fn(cz.sys.dim(), |i, _| 2.0 * u[i % u.len()]);
        prop_assert_eq!(invariant_set_contains(&cz.cert, &a, &cz.sys, &x), invariant_set_contains(&scaled, &b, &cz.sys, &x));
    }

    #[test]
    fn lyapunov_derivative_is_negative_in_the_sector(k in 0usize..3, u in proptest::collection::vec(-1.0..1.0f64, 16), r in 0.01..1.0f64) {
        let cz = certified(k);
        let na = cz.sys.n_angles();
        let x = DVector::from_fn(cz.sys.dim(), |i, _| r * u[i % u.len()] * if i < na { PI } else { 2.0 });
        prop_assume!(cz.sys.in_polytope(&x) && sector_respected(&cz.sys, &cz.sectors, &x));
        prop_assert!(wdot_value(&cz.cert, &cz.sys, &x) < 0.0);
    }

    #[test]
    fn undisturbed_fault_leaves_the_state_at_rest(k in 0usize..3, tc in 0.001..0.3f64) {
        let (case, _) = fixture(FIXTURES[k].0, FIXTURES[k].1);
        let fs = FaultScenario::new(&case, &ScenarioSpec::null(tc)).unwrap();
        let y = &fs.y_pre;
        let pre = solve_pf(&case, &Injections::from_dispatch(&case, &case.nominal_dispatch(), &vec![0.0; case.generators.len()]), y).unwrap();
        for order in 1..=4 {
            let (d, w) = taylor_cleared(&fs, &pre.v, &pre.theta, order, tc);
            prop_assert!(d.iter().zip(&pre.theta).all(|(a, b)| (a - b).abs() < 1e-9));
            prop_assert!(w.iter().all(|x| x.abs() < 1e-9));
        }
        let (d, w) = closed_form_cleared(&fs, &pre.v, &pre.theta, tc);
        prop_assert!(d.iter().zip(&pre.theta).all(|(a, b)| (a - b).abs() < 1e-9));
        prop_assert!(w.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn series_and_closed_form_share_the_leading_speed_term(k in 0usize..3, tc in 0.001..0.3f64) {
        let (case, spec) = fixture(FIXTURES[k].0, FIXTURES[k].1);
        let fs = FaultScenario::new(&case, &spec).unwrap();
        let pre = solve_pf(&case, &Injections::from_dispatch(&case, &case.nominal_dispatch(), &vec![0.0; case.generators.len()]), &fs.y_pre).unwrap();
        let (_, first) = taylor_cleared(&fs, &pre.v, &pre.theta, 1, tc);
        let (_, closed) = closed_form_cleared(&fs, &pre.v, &pre.theta, tc);
        for (s, &bus) in fs.model.speed_buses.iter().enumerate() {
            let (m, d) = (fs.model.inertia[bus], fs.model.damping[bus]);
            // first-order term is -t K / m, closed form adds d t² K / (2 m²)
            let kf = -first[s] * m / tc;
            let expect = first[s] + d * tc * tc * kf / (2.0 * m * m);
            prop_assert!((closed[s] - expect).abs() <= 1e-12 * (1.0 + expect.abs()), "{} vs {}", closed[s], expect);
        }
    }

    #[test]
    fn equilibrium_is_a_fixed_point_of_the_swing_model(k in 0usize..3, factor in 0.5..1.0f64) {
        let (case, spec) = fixture(FIXTURES[k].0, FIXTURES[k].1);
        let case = case.with_load_factor(factor);
        let fs = FaultScenario::new(&case, &spec).unwrap();
        let p: Vec<f64> = case.nominal_dispatch().iter().map(|p| p * factor).collect();
        let inj = Injections::from_dispatch(&case, &p, &vec![0.0; p.len()]);
        let eq = solve_pf(&case, &inj, &fs.y_post);
        prop_assume!(eq.is_ok());
        let eq = eq.unwrap();
        let phase = stabopt_core::simulate::Phase::around(fs.y_post.clone(), &eq);
        let omega = vec![1.0; fs.model.speed_buses.len()];
        let (dd, dw) = fs.model.rhs(&phase.y, &phase.v, &phase.p, &eq.theta, &omega);
        prop_assert!(dd.iter().chain(&dw).all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn level_regions_are_nested(lo in 0.0..1.0f64, hi in 0.0..1.0f64, dl in 0.5..4.0f64, lambda in 0.01..10.0f64, t in 0.0..1.0f64, s in 0.0..1.0f64) {
        let p = HullParams::new(-2.0 * dl * lo, 2.0 * dl * hi, dl, lambda).unwrap();
        let x = p.x_lo + t * (p.x_hi - p.x_lo);
        let top = |v: Variant| { let [a, b] = level_bounds(v, &p, x); a.min(b) };
        let (inner, psi, hull) = (top(Variant::Inner), top(Variant::Concave), top(Variant::Hull));
        let tol = 1e-9 * lambda * dl * dl;
        prop_assert!(inner <= psi + tol && psi <= hull + tol);
        prop_assert!((psi - p.psi_value(x)).abs() <= tol);
        // a sampled level feasible for the tighter set is feasible for the looser
        let w = s * hull.max(0.0);
        if w <= inner { prop_assert!(w <= psi + tol); }
        if w <= psi { prop_assert!(w <= hull + tol); }
    }
}
