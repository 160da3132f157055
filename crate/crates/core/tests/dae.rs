mod common;

use common::{benign, equilibrium, system_from, two_bus_json};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use qssdiag::dae::*;
use qssdiag::fixtures::LinearFixture;
use qssdiag::netmodel::{EventKind, LtcParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[test]
fn residuals_vanish_at_initial_equilibrium() {
    let (model, s) = equilibrium(&benign().0);
    let net = model.network(&model.base_topology(), &s.zd);
    let f = model.eval_f(&net, &s).amax();
    let g = model.eval_g(&net, &s).amax();
    let h = model.eval_hc(&net, &s).amax();
    assert!(f <= 1e-12 && g <= 1e-12 && h <= 1e-12, "|f|={f:e} |g|={g:e} |h|={h:e}");
}

#[test]
fn rotor_angle_rate_is_speed_deviation() {
    let (model, mut s) = equilibrium(&benign().0);
    let net = model.network(&model.base_topology(), &s.zd);
    s.x[1] = 1.01;
    let f = model.eval_f(&net, &s);
    let omega_s = model.system().generators()[0].omega_s;
    assert!((f[0] - omega_s * 0.01).abs() <= 1e-12 * omega_s);
}

#[test]
fn field_voltage_is_clamped_at_ceiling() {
    let (model, mut s) = equilibrium(&benign().0);
    let net = model.network(&model.base_topology(), &s.zd);
    let avr = model.system().avr(0).clone();
    s.x[3] = avr.efd_max;
    // Drive the AVR hard: terminal voltage far below its reference.
    s.y[1] = 0.5;
    assert!(avr.ka * (model.setpoints().v_ref[0] - 0.5) > avr.efd_max);
    assert_eq!(model.eval_f(&net, &s)[3], 0.0);
}

#[test]
fn oxl_lowers_the_ceiling_once_active() {
    let (model, mut s) = equilibrium(&benign().0);
    let net = model.network(&model.base_topology(), &s.zd);
    let limit = model.system().oxl(0).unwrap().efd_limit;
    s.x[3] = limit;
    s.y[1] = 0.5;
    assert!(model.eval_f(&net, &s)[3] > 0.0);
    s.zd.oxl[0].active = true;
    assert_eq!(model.eval_f(&net, &s)[3], 0.0);
}

#[test]
fn unloaded_network_mismatch_is_the_branch_flow() {
    let sys = system_from(&two_bus_json(0.1, 0.0, 0.0));
    let (model, mut s) = equilibrium(&sys);
    let net = model.network(&model.base_topology(), &s.zd);
    let (v2, th2) = (0.95, -0.1);
    s.y[1] = v2;
    s.y[3] = th2;
    let g = model.eval_g(&net, &s);
    let p_flow = v2 * 10.0 * th2.sin();
    let q_flow = 10.0 * v2 * v2 - 10.0 * v2 * th2.cos();
    assert!((g[1] + p_flow).abs() < 1e-12);
    assert!((g[3] + q_flow).abs() < 1e-12);
}

#[test]
fn isolated_unloaded_bus_has_zero_mismatch() {
    let mut v = two_bus_json(0.1, 0.0, 0.0);
    v["buses"]
        .as_array_mut()
        .unwrap()
        .push(json!({"id": "B3", "base_kv": 100.0, "kind": "PQ"}));
    v["branches"]
        .as_array_mut()
        .unwrap()
        .push(json!({"id": "L23", "from": "B2", "to": "B3", "x": 0.2}));
    let (model, mut s) = equilibrium(&system_from(&v));
    let topo = model
        .apply_event(&model.base_topology(), &EventKind::OpenBranch { branch: "L23".into() })
        .unwrap();
    let net = model.network(&topo, &s.zd);
    s.y[2] = 0.7;
    s.y[5] = 0.3;
    let g = model.eval_g(&net, &s);
    assert_eq!((g[2], g[5]), (0.0, 0.0));
}

fn erl_two_bus(v0: f64) -> serde_json::Value {
    let mut v = two_bus_json(0.1, 0.0, 0.0);
    v["erl_loads"] = json!([{"id": "LD", "bus": "B2", "p0": 1.0, "q0": 0.5, "v0": v0, "alpha_s": 0.0,
        "alpha_t": 2.0, "beta_s": 0.0, "beta_t": 2.0, "tp": 10.0, "tq": 10.0}]);
    v
}

#[test]
fn load_recovery_rate_formula() {
    let (model, mut s) = equilibrium(&system_from(&erl_two_bus(1.0)));
    let net = model.network(&model.base_topology(), &s.zd);
    s.y[1] = 0.9;
    s.zc[0] = 0.0;
    let h = model.eval_hc(&net, &s);
    assert!((h[0] - 0.019).abs() < 1e-15, "{}", h[0]);

    s.y[1] = 1.0;
    s.zc[0] = 0.0;
    assert_eq!(model.eval_hc(&net, &s)[0], 0.0);
}

#[test]
fn governor_rests_at_nominal_speed() {
    let (model, s) = equilibrium(&benign().0);
    let net = model.network(&model.base_topology(), &s.zd);
    let k = model.gov_slot(0).unwrap();
    assert_eq!(s.x[1], 1.0);
    assert_eq!(s.zc[k], model.setpoints().pm0[0]);
    assert_eq!(model.eval_hc(&net, &s)[k], 0.0);
}

fn ltc(v_ref: f64, deadband: f64, delta_m: f64, m_min: f64, m_max: f64) -> LtcParams {
    LtcParams {
        id: "T".into(),
        branch: "T".into(),
        m0: 1.0,
        delta_m,
        m_min,
        m_max,
        v_ref,
        deadband,
        controlled_bus: "B".into(),
        period_s: 10.0,
    }
}

#[test]
fn ltc_rule_examples() {
    let p = ltc(1.0, 0.02, 0.01, 0.9, 1.10);
    assert!((ltc_rule(&p, 1.00, 1.05) - 1.01).abs() < 1e-15);
    assert_eq!(ltc_rule(&p, 1.00, 1.01), 1.00);
    assert_eq!(ltc_rule(&p, 1.10, 1.05), 1.10);
    assert!((ltc_rule(&p, 1.00, 0.95) - 0.99).abs() < 1e-15);
    assert_eq!(ltc_rule(&p, 0.90, 0.95), 0.90);
}

fn arb_ltc() -> impl Strategy<Value = LtcParams> {
    (0.9..1.1f64, 0.0..0.05f64, 0.001..0.05f64, 0.7..0.99f64, 1.01..1.3f64)
        .prop_map(|(v, d, dm, lo, hi)| ltc(v, d, dm, lo, hi))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ltc_law_properties(p in arb_ltc(), m_frac in 0.0..=1.0f64, vs in prop::collection::vec(0.7..1.3f64, 1..40)) {
        let mut m = p.m_min + m_frac * (p.m_max - p.m_min);
        for v in vs {
            let next = ltc_rule(&p, m, v);
            prop_assert!(next >= p.m_min && next <= p.m_max);
            if (p.v_ref - p.deadband..=p.v_ref + p.deadband).contains(&v) {
                prop_assert_eq!(next, m);
            }
            prop_assert!((next - m).abs() <= p.delta_m * (1.0 + 1e-12));
            m = next;
        }
    }
}

#[test]
fn discrete_map_is_idempotent_inside_the_deadband() {
    let (model, s) = equilibrium(&benign().0);
    let ltc = &model.system().ltcs()[0];
    let bus = model.system().ltc_controlled_bus(0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let mut p = s.clone();
        p.y[bus] = ltc.v_ref + rng.random_range(-1.0..=1.0) * ltc.deadband;
        let once = model.step_hd(&p, ltc.period_s);
        let mut q = p.clone();
        q.zd = once.clone();
        assert_eq!(model.step_hd(&q, ltc.period_s), once);
        assert_eq!(once.taps, p.zd.taps);
    }
}

#[test]
fn discrete_map_acts_only_at_sampling_instants() {
    let (model, mut s) = equilibrium(&benign().0);
    let ltc = model.system().ltcs()[0].clone();
    s.y[model.system().ltc_controlled_bus(0)] = ltc.v_ref - 2.0 * ltc.deadband;
    assert_eq!(model.step_hd(&s, 0.5 * ltc.period_s).taps, s.zd.taps);
    let after = model.step_hd(&s, 2.0 * ltc.period_s);
    assert!((after.taps[0] - (ltc.m0 - ltc.delta_m)).abs() < 1e-15);
    assert_eq!(model.next_discrete_instant(ltc.period_s), Some(2.0 * ltc.period_s));
}

#[test]
fn oxl_latches_after_its_delay() {
    let (model, mut s) = equilibrium(&benign().0);
    let o = model.system().oxl(0).unwrap().clone();
    s.x[3] = o.efd_limit + 0.1;
    let mut t = 0.0;
    while t < o.delay_s + 0.5 {
        t += 0.5;
        s.zd = model.step_hd(&s, t);
        if t < 0.5 + o.delay_s - 1e-9 {
            assert!(!s.zd.oxl[0].active, "latched early at t={t}");
        }
    }
    assert!(s.zd.oxl[0].active);
}

/// Central-difference column of a residual family.
fn central_column<F: Fn(&PartitionedState) -> DVector<f64>>(
    r: F,
    s: &PartitionedState,
    bump: impl Fn(&mut PartitionedState, f64),
) -> DVector<f64> {
    let h = 1e-6;
    let (mut a, mut b) = (s.clone(), s.clone());
    bump(&mut a, h);
    bump(&mut b, -h);
    (r(&a) - r(&b)) / (2.0 * h)
}

fn columns_agree(fd: &DMatrix<f64>, oracle: &DVector<f64>, j: usize, what: &str) {
    let scale = oracle.amax().max(fd.column(j).amax()).max(1.0);
    let diff = (fd.column(j) - oracle).amax();
    assert!(diff <= 1e-3 * scale, "{what} column {j}: diff {diff:e} scale {scale:e}");
}

#[test]
fn finite_difference_blocks_match_central_differences() {
    let (model, s0) = equilibrium(&benign().0);
    let topo = model
        .apply_event(&model.base_topology(), &EventKind::OpenBranch { branch: "L12h".into() })
        .unwrap();
    let net = model.network(&topo, &s0.zd);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mut s = s0.clone();
        for v in s.x.iter_mut().chain(s.y.iter_mut()).chain(s.zc.iter_mut()) {
            *v += rng.random_range(-0.02..0.02);
        }
        let b = jacobian_blocks(&model, &net, &s);
        let f = |p: &PartitionedState| model.eval_f(&net, p);
        let g = |p: &PartitionedState| model.eval_g(&net, p);
        let hc = |p: &PartitionedState| model.eval_hc(&net, p);
        for j in 0..s.x.len() {
            let bump = |p: &mut PartitionedState, h: f64| p.x[j] += h;
            columns_agree(&b.f_x, &central_column(f, &s, bump), j, "f_x");
            columns_agree(&b.g_x, &central_column(g, &s, bump), j, "g_x");
            columns_agree(&b.h_x, &central_column(hc, &s, bump), j, "h_x");
        }
        for j in 0..s.y.len() {
            let bump = |p: &mut PartitionedState, h: f64| p.y[j] += h;
            columns_agree(&b.f_y, &central_column(f, &s, bump), j, "f_y");
            columns_agree(&b.g_y, &central_column(g, &s, bump), j, "g_y");
            columns_agree(&b.h_y, &central_column(hc, &s, bump), j, "h_y");
        }
        for j in 0..s.zc.len() {
            let bump = |p: &mut PartitionedState, h: f64| p.zc[j] += h;
            columns_agree(&b.h_zc, &central_column(hc, &s, bump), j, "h_zc");
        }
    }
}

#[test]
fn linear_fixture_blocks_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut m = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-5.0..5.0));
    let (nz, nx, ny) = (2, 3, 2);
    let fx = LinearFixture::new(
        [m(nz, nz), m(nz, nx), m(nz, ny)],
        [m(nx, nz), m(nx, nx), m(nx, ny)],
        [m(ny, nz), m(ny, nx), m(ny, ny)],
    );
    let s = fx.state(&[0.3, -0.2], &[1.0, 2.0, -1.0], &[0.5, 0.1]);
    let b = jacobian_blocks(&fx, &(), &s);
    let close = |a: &DMatrix<f64>, e: &DMatrix<f64>| (a - e).amax() <= 1e-5;
    assert!(close(&b.f_x, &fx.f[1]) && close(&b.f_y, &fx.f[2]));
    assert!(close(&b.g_x, &fx.g[1]) && close(&b.g_y, &fx.g[2]));
    assert!(close(&b.h_x, &fx.h[1]) && close(&b.h_y, &fx.h[2]) && close(&b.h_zc, &fx.h[0]));
    assert_eq!(jacobian_blocks(&fx, &(), &s), b);
}

#[test]
fn empty_slow_partition_gives_empty_h_blocks() {
    let fx = LinearFixture::oscillator();
    let b = jacobian_blocks(&fx, &(), &fx.state(&[], &[1.0, 0.0], &[]));
    assert_eq!((b.h_x.nrows(), b.h_y.nrows(), b.h_zc.nrows()), (0, 0, 0));
    assert_eq!(b.f_x.shape(), (2, 2));
}

/// Characteristic polynomial coefficients (monic, highest first) by
/// Faddeev–LeVerrier.
fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut c = vec![1.0];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + DMatrix::identity(n, n) * c[k - 1];
        c.push(-(a * &m).trace() / k as f64);
    }
    c
}

/// Durand–Kerner iteration for all roots of a monic polynomial.
fn poly_roots(c: &[f64]) -> Vec<Complex64> {
    let n = c.len() - 1;
    let eval = |z: Complex64| c.iter().fold(Complex64::new(0.0, 0.0), |acc, &k| acc * z + k);
    let seed = Complex64::new(0.4, 0.9);
    let mut z: Vec<Complex64> = (0..n).map(|k| seed.powu(k as u32) * 3.0).collect();
    for _ in 0..5000 {
        for i in 0..n {
            let den: Complex64 = (0..n).filter(|&j| j != i).map(|j| z[i] - z[j]).product();
            let step = eval(z[i]) / den;
            z[i] -= step;
        }
    }
    z
}

#[test]
fn eigenvalues_match_characteristic_polynomial_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-2.0..2.0));
        let sp = eigenvalues(&a).unwrap();
        let roots = poly_roots(&char_poly(&a));
        assert_eq!(sp.eigenvalues.len(), 5);
        let mut used = [false; 5];
        for ev in &sp.eigenvalues {
            let (k, d) = roots
                .iter()
                .enumerate()
                .filter(|(k, _)| !used[*k])
                .map(|(k, r)| (k, (r - ev).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            used[k] = true;
            assert!(d <= 1e-6, "eigenvalue {ev} has no root within 1e-6 ({d:e})");
        }
        let max_re = sp.eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(sp.max_real_part, max_re);
    }
}

#[test]
fn gamma_s_matches_reduced_eigenvalue_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut checked = 0;
    while checked < 100 {
        let (fx, fy, gx, gy) = (
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        let reduced: f64 = fx - fy * gx / gy;
        if gy.abs() < 0.05 || reduced.abs() < 1e-3 {
            continue;
        }
        let m = LinearFixture::scalar([-1.0, 0.0, 0.0], [0.0, fx, fy], [0.0, gx, gy]);
        let s = m.state(&[0.0], &[0.0], &[0.0]);
        let got = gamma_s_membership(&m, &(), &s, 1e-8).unwrap();
        if reduced < 0.0 {
            assert_eq!(got, GammaS::InGammaS, "reduced {reduced}");
        } else {
            match got {
                GammaS::UnstableFast { max_real_part } => assert!((max_real_part - reduced).abs() < 1e-5),
                other => panic!("reduced {reduced} classified {other:?}"),
            }
        }
        checked += 1;
    }
}

#[test]
fn gamma_s_examples() {
    let stable = LinearFixture::scalar([0.0; 3], [0.0, -1.0, 1.0], [0.0, 2.0, 1.0]);
    assert_eq!(
        gamma_s_membership(&stable, &(), &stable.state(&[0.0], &[0.0], &[0.0]), 1e-8).unwrap(),
        GammaS::InGammaS
    );
    let unstable = LinearFixture::scalar([0.0; 3], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
    let r = gamma_s_membership(&unstable, &(), &unstable.state(&[0.0], &[0.0], &[0.0]), 1e-8).unwrap();
    assert!(matches!(r, GammaS::UnstableFast { max_real_part } if (max_real_part - 1.0).abs() < 1e-6));
    let singular = LinearFixture::scalar([0.0; 3], [0.0, -1.0, 1.0], [0.0, 1.0, 0.0]);
    assert_eq!(
        gamma_s_membership(&singular, &(), &singular.state(&[0.0], &[0.0], &[0.0]), 1e-8).unwrap(),
        GammaS::SingularAlgebraic
    );
    let off = stable.state(&[0.0], &[1.0], &[0.0]);
    assert!(matches!(
        gamma_s_membership(&stable, &(), &off, 1e-8),
        Err(DaeError::NotOnManifold { .. })
    ));
}

#[test]
fn benign_equilibrium_is_in_the_stable_subset() {
    let (model, s) = equilibrium(&benign().0);
    let net = model.network(&model.base_topology(), &s.zd);
    assert_eq!(gamma_s_membership(&model, &net, &s, 1e-8).unwrap(), GammaS::InGammaS);
}

#[test]
fn variable_names_are_qualified() {
    let (model, _) = equilibrium(&benign().0);
    let n = model.names();
    assert_eq!(n.zc, vec!["zc.G1.pm", "zc.LD3.xp", "zc.LD3.xq"]);
    assert_eq!(n.x, vec!["x.G1.delta", "x.G1.omega", "x.G1.eqp", "x.G1.efd"]);
    assert_eq!(n.y[0], "y.B1.v");
    assert_eq!(n.y[3], "y.B1.theta");
    assert_eq!(n.zd, vec!["zd.T23.m", "zd.G1.oxl_active"]);
}
