//! Acceptance suite: one PASS/FAIL line per criterion; any failure fails the target.

use std::path::PathBuf;
use std::time::Instant;

use dd4dvar::analysis::{fit_order, refine, stability_sweep};
use dd4dvar::assimilation::{solve_global_4dvar, AssimilationState, DdSolver};
use dd4dvar::config::{ExperimentConfig, ModelKindConfig};
use dd4dvar::domain::{build_domain, build_stacked_domain, decompose, extend, gather, restrict};
use dd4dvar::experiment::Experiment;
use dd4dvar::model::{build_swe_model, run_background, swe_analytic};
use dd4dvar::report::{self, OutputDir};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(name: &str) -> ExperimentConfig {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&p).unwrap()
}

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn monotone(h: &[f64]) -> bool {
    h.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0))
}

/// 64-node, 5-instant advection instance.
fn advection64() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.model.kind = ModelKindConfig::Advection;
    c.domain.n_p = 64;
    c.domain.n = 5;
    c.domain.t_max = 0.1;
    c.truth.bump_width = 0.15;
    c.observations.n_obs = 16;
    c.decomposition.n_sub = 1;
    c.decomposition.n_t = 1;
    c.decomposition.delta = 0;
    c
}

/// 8 nodes, 2 subdomains, δ = 2.
fn toy8() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.model.kind = ModelKindConfig::Advection;
    c.domain.n_p = 8;
    c.domain.n = 5;
    c.domain.t_max = 0.4;
    c.truth.bump_width = 0.2;
    c.observations.n_obs = 3;
    c.decomposition.n_sub = 2;
    c.decomposition.n_t = 2;
    c.decomposition.delta = 2;
    c
}

fn c1(histories: &mut Vec<(String, Vec<f64>)>) -> Outcome {
    let t = Instant::now();
    let exp = Experiment::build(&advection64()).unwrap();
    let g = solve_global_4dvar(&exp.problem).unwrap();
    let s = exp.solver().unwrap().solve(None).unwrap();
    let rel = (&g.u - &s.field).norm() / g.u.norm();
    let secs = t.elapsed().as_secs_f64();
    histories.push(("advection64".into(), s.j_history.clone()));
    Outcome { id: 1, name: "oracle equivalence, degenerate DD", pass: rel < 1e-8 && secs < 1.0, detail: format!("relative error {rel:.3e} (< 1e-8), {secs:.3}s (< 1s)") }
}

fn c2(histories: &mut Vec<(String, Vec<f64>)>) -> Outcome {
    let t = Instant::now();
    let exp = Experiment::build(&config("section4.toml")).unwrap();
    let g = solve_global_4dvar(&exp.problem).unwrap();
    let s = exp.solver().unwrap().solve(None).unwrap();
    let j_dd = exp.problem.evaluate_j(&s.field);
    let gap = (g.j - j_dd).abs() / g.j;
    let secs = t.elapsed().as_secs_f64();
    histories.push(("section4".into(), s.j_history.clone()));
    Outcome { id: 2, name: "Theorem 1 minimum equality", pass: gap <= 1e-2 && secs < 120.0, detail: format!("J_DA {:.6e}, J_DD {j_dd:.6e}, gap {gap:.3e} (<= 1e-2), {secs:.1}s", g.j) }
}

fn c3(histories: &mut Vec<(String, Vec<f64>)>) -> Outcome {
    let base = config("consistency.toml");
    let mut refinement = Vec::new();
    let mut e = Vec::new();
    for d in [1, 2, 4] {
        let exp = Experiment::build(&refine(&base, d).unwrap()).unwrap();
        let g = solve_global_4dvar(&exp.problem).unwrap();
        let s = exp.solver().unwrap().solve(None).unwrap();
        refinement.push((exp.domain.n_p / 2 + 1) as f64 / (base.domain.n_p / 2 + 1) as f64);
        e.push((&g.u - &s.field).norm());
        histories.push((format!("consistency d={d}"), s.j_history.clone()));
    }
    let p = fit_order(&refinement, &e);
    Outcome {
        id: 3,
        name: "consistency order",
        pass: p.is_some_and(|p| (1.5..=2.5).contains(&p)),
        detail: format!("e_p = {:.3e}, {:.3e}, {:.3e}; slope {:.3} (in [1.5, 2.5])", e[0], e[1], e[2], p.unwrap_or(f64::NAN)),
    }
}

fn c4(histories: &mut Vec<(String, Vec<f64>)>) -> Outcome {
    let cfg = config("section4.toml");
    let exp = Experiment::build(&cfg).unwrap();
    let rep = stability_sweep(&exp, &cfg.stability.perturbations, cfg.stability.slab - 1).unwrap();
    let c: Vec<f64> = rep.rows.iter().map(|r| r.c_k).collect();
    let (lo, hi) = (c.iter().copied().fold(f64::INFINITY, f64::min), c.iter().copied().fold(0.0, f64::max));
    histories.push(("stability base".into(), exp.solver().unwrap().solve(None).unwrap().j_history));
    Outcome {
        id: 4,
        name: "stability linearity",
        pass: c.len() == 4 && hi.is_finite() && lo > 0.0 && hi / lo <= 1.1,
        detail: format!("C_k in [{lo:.5e}, {hi:.5e}], spread {:.3e} (<= 10%)", hi / lo - 1.0),
    }
}

fn c5(histories: &[(String, Vec<f64>)]) -> Outcome {
    let bad: Vec<&str> = histories.iter().filter(|(_, h)| !monotone(h)).map(|(n, _)| n.as_str()).collect();
    Outcome {
        id: 5,
        name: "outer-loop monotonicity",
        pass: bad.is_empty() && !histories.is_empty(),
        detail: format!("{} runs checked, non-monotone: {:?}", histories.len(), bad),
    }
}

fn c6() -> Outcome {
    let exp = Experiment::build(&toy8()).unwrap();
    let solver = exp.solver().unwrap();
    let state = solver.solve(None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let i = rng.gen_range(0..exp.decomp.n_sub);
        let k = rng.gen_range(0..exp.decomp.n_t);
        let lp = solver.local_problem(i, k, &state.first_guess, &state.anchor);
        let rand_like = |m: &DMatrix<f64>, rng: &mut ChaCha8Rng| DMatrix::from_fn(m.nrows(), m.ncols(), |_, _| rng.gen_range(-1.0..1.0));
        let w = rand_like(&state.w[i][k], &mut rng);
        let wn: Vec<DMatrix<f64>> = solver.subs[i].overlaps.iter().map(|o| rand_like(&state.w[o.j][k], &mut rng)).collect();
        let refs: Vec<&DMatrix<f64>> = wn.iter().collect();
        let g = lp.gradient(&w, &refs) * 2.0;
        let h = 1e-5;
        let fd = DMatrix::from_fn(w.nrows(), w.ncols(), |a, b| {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[(a, b)] += h;
            m[(a, b)] -= h;
            (lp.j_of_w(&p, &refs).unwrap() - lp.j_of_w(&m, &refs).unwrap()) / (2.0 * h)
        });
        worst = worst.max((&g - &fd).norm() / g.norm());
    }
    Outcome { id: 6, name: "gradient vs central differences", pass: worst < 1e-5, detail: format!("worst relative error over 20 probes {worst:.3e} (< 1e-5)") }
}

/// Dense optimality system of the ASM fixed point, probed from J_ik alone:
/// every (i,k) requires ∇_{w_ik} J_ik = 0 with its neighbours' increments live.
fn monolithic(solver: &DdSolver, state: &AssimilationState) -> Vec<Vec<DMatrix<f64>>> {
    let dec = solver.decomp;
    let shapes: Vec<Vec<(usize, usize)>> = state.w.iter().map(|r| r.iter().map(|m| m.shape()).collect()).collect();
    let mut offset = vec![vec![0; dec.n_t]; dec.n_sub];
    let mut n = 0;
    for i in 0..dec.n_sub {
        for k in 0..dec.n_t {
            offset[i][k] = n;
            n += shapes[i][k].0 * shapes[i][k].1;
        }
    }
    let unpack = |x: &DVector<f64>| -> Vec<Vec<DMatrix<f64>>> {
        (0..dec.n_sub)
            .map(|i| (0..dec.n_t).map(|k| DMatrix::from_column_slice(shapes[i][k].0, shapes[i][k].1, &x.as_slice()[offset[i][k]..offset[i][k] + shapes[i][k].0 * shapes[i][k].1])).collect())
            .collect()
    };
    let problems: Vec<Vec<_>> = (0..dec.n_sub).map(|i| (0..dec.n_t).map(|k| solver.local_problem(i, k, &state.first_guess, &state.anchor)).collect()).collect();
    // stacked ½-gradients of every J_ik w.r.t. its own unknowns, by exact central differences
    let residual = |x: &DVector<f64>| -> DVector<f64> {
        let w = unpack(x);
        let mut r = DVector::zeros(n);
        for i in 0..dec.n_sub {
            for k in 0..dec.n_t {
                let wn: Vec<&DMatrix<f64>> = solver.subs[i].overlaps.iter().map(|o| &w[o.j][k]).collect();
                let lp = &problems[i][k];
                let (rows, cols) = shapes[i][k];
                for b in 0..cols {
                    for a in 0..rows {
                        let (mut p, mut m) = (w[i][k].clone(), w[i][k].clone());
                        p[(a, b)] += 1.0;
                        m[(a, b)] -= 1.0;
                        r[offset[i][k] + b * rows + a] = (lp.j_of_w(&p, &wn).unwrap() - lp.j_of_w(&m, &wn).unwrap()) / 4.0;
                    }
                }
            }
        }
        r
    };
    let r0 = residual(&DVector::zeros(n));
    let mut m = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut e = DVector::zeros(n);
        e[c] = 1.0;
        m.set_column(c, &(residual(&e) - &r0));
    }
    let x = m.lu().solve(&(-r0)).unwrap();
    unpack(&x)
}

fn c7(histories: &mut Vec<(String, Vec<f64>)>) -> Outcome {
    let exp = Experiment::build(&toy8()).unwrap();
    let solver = exp.solver().unwrap();
    let state = solver.solve(None).unwrap();
    let oracle = monolithic(&solver, &state);
    let mut diff = 0.0f64;
    let mut scale = 1.0f64;
    for (a, b) in state.w.iter().flatten().zip(oracle.iter().flatten()) {
        diff = diff.max((a - b).amax());
        scale = scale.max(b.amax());
    }
    histories.push(("toy8".into(), state.j_history.clone()));
    Outcome { id: 7, name: "ASM fixed point vs monolithic solve", pass: diff / scale < 1e-8, detail: format!("max |w_ASM - w_mono| {diff:.3e}, scale {scale:.3e} (< 1e-8 relative)") }
}

fn c8() -> Outcome {
    let (g, h) = (0.008, 0.008);
    let eta0 = |x: f64| (-((x - 0.5) / 0.1f64).powi(2)).exp();
    let mut dx = Vec::new();
    let mut err = Vec::new();
    for s in [1usize, 2, 4, 8] {
        let (m, n) = (100 * s - 1, 20 * s + 1);
        let d = build_stacked_domain(0.0, 1.0, 0.0, 1.5, 2 * m, n, 2).unwrap();
        let model = build_swe_model(&d, g, h, 0.0).unwrap();
        let traj = run_background(&model, &swe_analytic(&d, g, h, &eta0, 0.0), n).unwrap();
        let e = traj.column(n - 1) - swe_analytic(&d, g, h, &eta0, 1.5);
        dx.push(d.dx);
        err.push(e.amax());
    }
    let r: Vec<f64> = dx.iter().map(|x| dx[0] / x).collect();
    let p = fit_order(&r, &err).unwrap_or(f64::NAN);
    Outcome { id: 8, name: "Lax-Wendroff order", pass: p >= 1.9, detail: format!("max errors {:?}, slope {p:.3} (>= 1.9)", err.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()) }
}

fn c9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();
    let mut checked = 0;
    for (n_p, n, n_sub, n_t, delta) in [(8, 5, 2, 2, 2), (8, 5, 1, 1, 0), (16, 3, 2, 2, 2), (16, 5, 4, 4, 2), (24, 7, 3, 3, 4), (48, 5, 3, 2, 4), (64, 5, 1, 1, 0), (64, 9, 4, 4, 2), (64, 9, 8, 2, 6), (640, 9, 4, 4, 2)] {
        checked += 1;
        let tag = format!("({n_p},{n},{n_sub},{n_t},{delta})");
        let d = build_domain(0.0, 1.0, 0.0, 1.0, n_p, n).unwrap();
        let dec = decompose(&d, n_sub, n_t, delta).unwrap();
        for i in 0..n_sub {
            let map = dec.map(i);
            let v = DVector::from_fn(map.len(), |_, _| rng.gen::<f64>());
            if restrict(&map, &extend(&map, &v).unwrap()).unwrap() != v {
                failures.push(format!("{tag} restrict∘extend, i={i}"));
            }
            for &j in &dec.adjacency[i] {
                if dec.overlap(i, j).len() != delta {
                    failures.push(format!("{tag} |I_{i}{j}| != δ"));
                }
            }
        }
        // every node covered, and owned by exactly one subdomain containing it
        for g in 0..n_p {
            let (owner, _) = dec.gather_owner(g, 0);
            if !dec.subdomains[owner].contains(&g) {
                failures.push(format!("{tag} node {g} not owned"));
            }
        }
        let covered: usize = (0..n_p).filter(|g| dec.subdomains.iter().any(|s| s.contains(g))).count();
        if covered != n_p {
            failures.push(format!("{tag} union of I_i misses nodes"));
        }
        let u = DMatrix::from_fn(n_p, n, |_, _| rng.gen::<f64>());
        let back = gather(&dec, &dec.restrict_all(&u)).unwrap();
        if back.field != u || back.max_discrepancy != 0.0 {
            failures.push(format!("{tag} gather∘restrict_all"));
        }
    }
    // local Hessians on every acceptance toy of size <= 64
    let mut min_eig = f64::INFINITY;
    let mut asym = 0.0f64;
    for cfg in [toy8(), advection64(), {
        let mut c = advection64();
        c.decomposition.n_sub = 4;
        c.decomposition.n_t = 2;
        c.decomposition.delta = 2;
        c
    }] {
        let exp = Experiment::build(&cfg).unwrap();
        for sub in &exp.solver().unwrap().subs {
            asym = asym.max((&sub.a - sub.a.transpose()).amax());
            min_eig = min_eig.min(sub.a.clone().symmetric_eigenvalues().min());
        }
    }
    if asym != 0.0 || min_eig < 1.0 - 1e-12 {
        failures.push(format!("A_ik asymmetry {asym:.1e}, min eigenvalue {min_eig:.6}"));
    }
    Outcome {
        id: 9,
        name: "machinery identities",
        pass: failures.is_empty(),
        detail: format!("{checked} decompositions, A_ik min eigenvalue {min_eig:.6}; failures: {failures:?}"),
    }
}

fn c10() -> Outcome {
    let cfg = config("section4.toml");
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path(), false).unwrap();
        report::assimilate(&cfg, &out).unwrap();
        report::stability(&cfg, &cfg.stability.perturbations, &out).unwrap();
        report::condition(&cfg, &out).unwrap();
        report::consistency(&config("consistency.toml"), &[1, 2], &out).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let (a, b) = (run(), run());
    let csv = a.iter().filter(|(n, _)| n.ends_with(".csv")).count();
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    Outcome {
        id: 10,
        name: "determinism",
        pass: a.len() == b.len() && differing.is_empty() && csv == 7,
        detail: format!("{} artifacts ({csv} CSV) compared byte for byte, differing: {differing:?}", a.len()),
    }
}

fn main() {
    let mut histories = Vec::new();
    let mut results = vec![c1(&mut histories), c2(&mut histories), c3(&mut histories), c4(&mut histories)];
    let r6 = c6();
    let r7 = c7(&mut histories);
    results.push(c5(&histories));
    results.extend([r6, r7, c8(), c9(), c10()]);
    results.sort_by_key(|r| r.id);
    println!();
    for r in &results {
        println!("{} [{}] {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.id, r.name, r.detail);
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.pass).map(|r| r.id).collect();
    println!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        eprintln!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
