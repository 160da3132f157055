//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DVector;
use qssdiag::dae::{gamma_s_membership, ltc_rule, residual_norms, GammaS, HybridModel, PartitionedState, PowerModel};
use qssdiag::diagnose::compare_runs;
use qssdiag::fixtures::{FoldFixture, LinearFixture};
use qssdiag::netmodel::{parse_scenario, parse_system, LtcParams, ScenarioSpec, SystemSpec};
use qssdiag::sim::{
    project_to_manifold, run_complete, run_qss, run_qss_with_handoff, stability_region_membership, step_trapezoidal,
    topology_at, Membership, SimConfig, Termination,
};
use qssdiag::solvers::initialize_equilibrium;
use qssdiag_cli::{cmd_diagnose, CommonArgs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn load(name: &str) -> (SystemSpec, ScenarioSpec) {
    let sys = parse_system(&std::fs::read(fixture(&format!("{name}_system.json"))).unwrap()).unwrap();
    let sc = parse_scenario(&std::fs::read(fixture(&format!("{name}_scenario.json"))).unwrap()).unwrap();
    (sys, sc)
}

fn benign_model() -> (PowerModel, PartitionedState, ScenarioSpec) {
    let (sys, sc) = load("benign");
    let (m, s) = initialize_equilibrium(&sys).unwrap();
    (m, s, sc)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn no_sep(cfg: SimConfig) -> SimConfig {
    SimConfig {
        stop_at_sep: false,
        ..cfg
    }
}

fn persistence() -> Outcome {
    let (m, s, _) = benign_model();
    let sc = ScenarioSpec::quiet(100.0);
    let cfg = no_sep(SimConfig::default());
    let t0 = Instant::now();
    let c = run_complete(&m, &sc, &cfg, &s);
    let q = run_qss(&m, &sc, &cfg, &s, 0.0);
    let secs = t0.elapsed().as_secs_f64();
    let drift = c.max_drift().max(q.max_drift());
    ensure(
        c.termination == Termination::ReachedTend && q.termination == Termination::ReachedTend,
        || {
            format!(
                "runs ended early: {} / {}",
                c.termination.label(),
                q.termination.label()
            )
        },
    )?;
    ensure(drift < 1e-6, || format!("drift {drift:e}"))?;
    ensure(secs < 5.0, || format!("runtime {secs:.2} s"))?;
    Ok(format!("drift {drift:.1e}, {secs:.2} s"))
}

/// Exact `(z, x)` for `ż = −z + x`, `ẋ = (z/2 − x)/ε` by the 2×2 matrix exponential.
fn two_timescale_exact(eps: f64, z0: f64, x0: f64, t: f64) -> (f64, f64) {
    let (a, b, c, d) = (-1.0, 1.0, 0.5 / eps, -1.0 / eps);
    let (tr, det) = (a + d, a * d - b * c);
    let disc = (tr * tr / 4.0 - det).sqrt();
    let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
    let (e1, e2) = ((l1 * t).exp(), (l2 * t).exp());
    let k = 1.0 / (l1 - l2);
    (
        k * ((e1 * (a - l2) - e2 * (a - l1)) * z0 + (e1 - e2) * b * x0),
        k * ((e1 - e2) * c * z0 + (e1 * (d - l2) - e2 * (d - l1)) * x0),
    )
}

fn integrator_order() -> Outcome {
    let m = LinearFixture::two_timescale(0.1);
    let s0 = m.state(&[1.0], &[0.0], &[0.5]);
    let errs: Vec<f64> = [0.1, 0.05, 0.025, 0.0125]
        .iter()
        .map(|&h| {
            let tr = run_complete(&m, &ScenarioSpec::quiet(1.0), &no_sep(SimConfig::uniform(h)), &s0);
            let last = tr.last();
            let (z, x) = two_timescale_exact(0.1, 1.0, 0.0, last.t);
            (last.zc[0] - z).abs().max((last.x[0] - x).abs())
        })
        .collect();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    ensure(ratios.iter().all(|r| (3.5..=4.5).contains(r)), || {
        format!("ratios {ratios:.3?}")
    })?;
    Ok(format!("ratios {ratios:.3?}"))
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(", ")
}

fn tikhonov() -> Outcome {
    let devs: Vec<f64> = [0.1, 0.01, 0.001]
        .iter()
        .map(|&eps| {
            let m = LinearFixture::two_timescale(eps);
            let s0 = m.state(&[1.0], &[0.5], &[0.5]);
            let cfg = no_sep(SimConfig::uniform(1e-3));
            let sc = ScenarioSpec::quiet(5.0);
            let c = run_complete(&m, &sc, &cfg, &s0);
            let q = run_qss(&m, &sc, &cfg, &s0, 0.0);
            compare_runs(&c, &q).unwrap()[0]
        })
        .collect();
    ensure(devs.windows(2).all(|w| w[1] < w[0]), || {
        format!("deviations {}", sci(&devs))
    })?;
    Ok(format!("deviations {}", sci(&devs)))
}

fn shared_equilibria() -> Outcome {
    let (m, s, sc) = benign_model();
    let cfg = SimConfig::default();
    let topo = topology_at(&m, &sc, sc.t_end).unwrap();
    let mut worst = 0.0f64;
    for tr in [run_complete(&m, &sc, &cfg, &s), run_qss_with_handoff(&m, &sc, &cfg, &s)] {
        let sep = tr
            .termination
            .sep()
            .ok_or_else(|| format!("no SEP: {}", tr.termination.label()))?;
        let net = m.network(&topo, &sep.zd);
        let (f, g, h) = residual_norms(&m, &net, sep);
        worst = worst.max(f.max(g).max(h));
        ensure(m.hd_fixed_point(sep), || "SEP is not a step_hd fixed point".into())?;
        let next = step_trapezoidal(&m, &net, sep, cfg.h_long, &cfg.newton).map_err(|e| format!("{e:?}"))?;
        ensure((next.continuous() - sep.continuous()).amax() <= 1e-8, || {
            "SEP moves under one step".into()
        })?;
    }
    ensure(worst <= 1e-8, || format!("residual {worst:e}"))?;
    Ok(format!("max residual {worst:.1e}"))
}

fn gamma_consistency() -> Outcome {
    let (m, s, sc) = benign_model();
    let cfg = SimConfig::default();
    let q = run_qss(&m, &sc, &cfg, &s, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut n, mut inside) = (0, 0);
    for _ in 0..24 {
        let p = &q.samples[rng.random_range(0..q.samples.len())];
        let topo = topology_at(&m, &sc, p.t).unwrap();
        let net = m.network(&topo, &p.zd);
        let on = project_to_manifold(&m, &net, p, &cfg.newton).map_err(|e| format!("{e:?}"))?;
        let gamma = gamma_s_membership(&m, &net, &on, cfg.manifold_tol).map_err(|e| e.to_string())?;
        let mut bumped = on.clone();
        let dx = DVector::from_fn(bumped.x.len(), |_, _| rng.random_range(-1e-6..1e-6));
        bumped.x += dx;
        let (mem, _) = stability_region_membership(&m, &topo, &bumped, &cfg);
        ensure((gamma == GammaS::InGammaS) == (mem == Membership::Inside), || {
            format!("disagreement at t={}: {gamma:?} vs {mem:?}", p.t)
        })?;
        n += 1;
        inside += usize::from(mem == Membership::Inside);
    }
    // Scalar linear fixtures give manifold points on both sides of the stability boundary.
    for _ in 0..40 {
        let (lin, p) = random_linear_point(&mut rng);
        let gamma = gamma_s_membership(&lin, &(), &p, cfg.manifold_tol).map_err(|e| e.to_string())?;
        let mut bumped = p.clone();
        bumped.x[0] += rng.random_range(-1e-6..1e-6);
        let (mem, _) = stability_region_membership(&lin, &(), &bumped, &cfg);
        ensure((gamma == GammaS::InGammaS) == (mem == Membership::Inside), || {
            format!("linear fixture disagreement: {gamma:?} vs {mem:?}")
        })?;
        n += 1;
        inside += usize::from(mem == Membership::Inside);
    }
    Ok(format!("{n} perturbations, {inside} inside, 0 disagreements"))
}

fn random_linear_point(rng: &mut ChaCha8Rng) -> (LinearFixture, PartitionedState) {
    loop {
        let f = [
            rng.random_range(-2.0..2.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-2.0..2.0),
        ];
        let g = [
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ];
        let reduced: f64 = f[1] - f[2] * g[1] / g[2];
        if g[2].abs() < 0.2 || reduced.abs() < 0.05 {
            continue;
        }
        let z: f64 = rng.random_range(-1.0..1.0);
        let a = nalgebra::Matrix2::new(f[1], f[2], g[1], g[2]);
        let Some(xy) = a.lu().solve(&nalgebra::Vector2::new(-f[0] * z, -g[0] * z)) else {
            continue;
        };
        let lin = LinearFixture::scalar([-1.0, 0.0, 0.0], f, g);
        let p = lin.state(&[z], &[xy[0]], &[xy[1]]);
        return (lin, p);
    }
}

fn run_diagnose(name: &str) -> Result<(Value, f64), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let args = CommonArgs {
        system: fixture(&format!("{name}_system.json")),
        scenario: fixture(&format!("{name}_scenario.json")),
        out: dir.path().to_path_buf(),
        step: None,
        qss_start: None,
    };
    let t0 = Instant::now();
    cmd_diagnose(&args).map_err(|e| format!("{e:#}"))?;
    let secs = t0.elapsed().as_secs_f64();
    let text = std::fs::read_to_string(dir.path().join("diagnosis.json")).map_err(|e| e.to_string())?;
    Ok((serde_json::from_str(&text).map_err(|e| e.to_string())?, secs))
}

fn counter_example() -> Outcome {
    let (d, secs) = run_diagnose("counter")?;
    let verdict = d["verdict"].as_str().unwrap_or("");
    let kinds: Vec<&str> = d["audits"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["membership"]["kind"].as_str().unwrap())
        .collect();
    ensure(verdict == "CounterExampleQssStableCompleteUnstable", || {
        format!("verdict {verdict}")
    })?;
    let first_out = kinds.iter().position(|k| *k == "Outside");
    ensure(
        first_out.is_some_and(|i| kinds[..i].iter().all(|k| *k == "Inside")),
        || format!("audit pattern {kinds:?}"),
    )?;
    ensure(secs < 30.0, || format!("runtime {secs:.1} s"))?;
    Ok(format!("audits {kinds:?}, {secs:.1} s"))
}

fn benign_agreement() -> Outcome {
    let (d, _) = run_diagnose("benign")?;
    let verdict = d["verdict"].as_str().unwrap_or("");
    let worst = d["max_deviation"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_f64().unwrap())
        .fold(0.0, f64::max);
    ensure(verdict == "AgreeStableSameSEP", || format!("verdict {verdict}"))?;
    ensure(worst <= 0.02, || format!("max deviation {worst}"))?;
    Ok(format!("max deviation {worst:.4} pu"))
}

fn ltc_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..10_000 {
        let p = LtcParams {
            id: "T".into(),
            branch: "T".into(),
            m0: 1.0,
            delta_m: rng.random_range(0.001..0.05),
            m_min: rng.random_range(0.7..0.99),
            m_max: rng.random_range(1.01..1.3),
            v_ref: rng.random_range(0.9..1.1),
            deadband: rng.random_range(0.0..0.05),
            controlled_bus: "B".into(),
            period_s: 10.0,
        };
        let mut m = rng.random_range(p.m_min..=p.m_max);
        for _ in 0..rng.random_range(1..40) {
            let v = rng.random_range(0.7..1.3);
            let next = ltc_rule(&p, m, v);
            let quiet = (p.v_ref - p.deadband..=p.v_ref + p.deadband).contains(&v);
            ensure(next >= p.m_min && next <= p.m_max, || {
                format!("case {case}: tap {next} out of range")
            })?;
            ensure(!quiet || next == m, || {
                format!("case {case}: moved inside the deadband")
            })?;
            ensure((next - m).abs() <= p.delta_m * (1.0 + 1e-12), || {
                format!("case {case}: multi-step move")
            })?;
            m = next;
        }
    }
    Ok("10000 sequences".into())
}

fn singularity() -> Outcome {
    let f = FoldFixture { rate: 0.1 };
    let s = f.start(1.0);
    let sc = ScenarioSpec::quiet(20.0);
    let cfg = SimConfig::default();
    let c = run_complete(&f, &sc, &cfg, &s);
    let q = run_qss(&f, &sc, &cfg, &s, 0.0);
    for tr in [&c, &q] {
        ensure(matches!(tr.termination, Termination::SingularityLikely { .. }), || {
            format!("terminated with {}", tr.termination.label())
        })?;
    }
    let near = f.start(1e-9);
    qssdiag::sim::qss_step(&f, &(), &near, 0.05, &cfg.newton)
        .err()
        .ok_or_else(|| "qss_step succeeded across the fold".to_string())?;
    Ok(format!("complete at t={:.3}, qss at t={:.3}", c.t_final(), q.t_final()))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("equilibrium persistence", persistence),
        ("integrator order", integrator_order),
        ("timescale limit", tikhonov),
        ("shared equilibria", shared_equilibria),
        ("stable-subset consistency", gamma_consistency),
        ("counter-example reproduction", counter_example),
        ("benign-scenario agreement", benign_agreement),
        ("LTC law", ltc_law),
        ("singularity detection", singularity),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({detail})", i + 1),
            Err(detail) => {
                println!("criterion {}: FAIL {name} ({detail})", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
