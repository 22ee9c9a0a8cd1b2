//! Artifact emission for the four analyses. CSV floats use six significant
//! digits in scientific notation; every file starts with a header row.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{condition_numbers, consistency_sweep, stability_sweep, verify_minimum_equality, ConditionReport, ConsistencyReport, EqualityReport, StabilityReport};
use crate::assimilation::{solve_global_4dvar, AssimilationState};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::Experiment;

/// Relative J gap accepted by the minimum-equality check.
pub const EQUALITY_TOLERANCE: f64 = 1e-2;

pub fn fmt(x: f64) -> String {
    format!("{x:.5e}")
}

pub struct OutputDir {
    root: PathBuf,
    overwrite: bool,
}

impl OutputDir {
    pub fn create(root: &Path, overwrite: bool) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), overwrite })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Fails before any work is done if an artifact would be clobbered.
    pub fn claim(&self, names: &[&str]) -> Result<()> {
        if self.overwrite {
            return Ok(());
        }
        for n in names {
            let p = self.root.join(n);
            if p.exists() {
                return Err(Error::Config(format!("{} exists; pass --overwrite to replace it", p.display())));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut s = header.join(",");
        s.push('\n');
        for r in rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.write(name, &s)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        self.claim(&[name])?;
        let p = self.root.join(name);
        fs::write(&p, text)?;
        Ok(p)
    }
}

pub const ASSIMILATE_ARTIFACTS: [&str; 5] = ["analysis.csv", "j_history.csv", "diagnostics.csv", "observations.csv", "equality.json"];

pub struct AssimilateOutcome {
    pub equality: EqualityReport,
    pub state: AssimilationState,
}

pub fn assimilate(cfg: &ExperimentConfig, out: &OutputDir) -> Result<AssimilateOutcome> {
    out.claim(&ASSIMILATE_ARTIFACTS)?;
    let exp = Experiment::build(cfg)?;
    let oracle = solve_global_4dvar(&exp.problem)?;
    let state = exp.solver()?.solve(None)?;
    let equality = verify_minimum_equality(&exp.problem, &oracle, &state, EQUALITY_TOLERANCE);

    let (times, bg) = (exp.domain.times(), &exp.problem.background);
    let mut rows = Vec::with_capacity(exp.domain.n_p * exp.domain.n);
    for (l, &t) in times.iter().enumerate() {
        for m in 0..exp.domain.n_p {
            rows.push(vec![
                l.to_string(),
                fmt(t),
                m.to_string(),
                fmt(exp.domain.coord(m)),
                fmt(exp.truth[(m, l)]),
                fmt(bg[(m, l)]),
                fmt(oracle.u[(m, l)]),
                fmt(state.field[(m, l)]),
            ]);
        }
    }
    out.write_csv("analysis.csv", &["instant", "t", "index", "x", "truth", "background", "u_da", "u_dd"], &rows)?;

    let mut rows = vec![vec!["0".into(), fmt(state.j_history[0]), String::new(), "0".into()]];
    for o in &state.outer {
        rows.push(vec![(o.n + 1).to_string(), fmt(o.j), fmt(o.step), o.sweeps.to_string()]);
    }
    out.write_csv("j_history.csv", &["n", "J", "step", "sweeps"], &rows)?;

    let rows: Vec<Vec<String>> = state
        .sweeps
        .iter()
        .map(|s| {
            let j = state.outer.iter().find(|o| o.n == s.n).map(|o| o.j).unwrap_or(f64::NAN);
            vec![(s.n + 1).to_string(), s.r.to_string(), fmt(j), fmt(s.max_dw), fmt(s.cg_residual), s.cg_iters.to_string()]
        })
        .collect();
    out.write_csv("diagnostics.csv", &["n", "r", "J", "max_dw", "cg_residual", "cg_iters"], &rows)?;

    let obs = &exp.problem.obs;
    let mut rows = Vec::new();
    for l in 0..obs.values.ncols() {
        for (o, &x) in obs.locations.iter().enumerate() {
            rows.push(vec![l.to_string(), fmt(x), fmt(obs.values[(o, l)])]);
        }
    }
    out.write_csv("observations.csv", &["instant", "location", "value"], &rows)?;
    out.write_json("equality.json", &equality)?;
    Ok(AssimilateOutcome { equality, state })
}

pub fn consistency(cfg: &ExperimentConfig, d_list: &[usize], out: &OutputDir) -> Result<ConsistencyReport> {
    out.claim(&["consistency.csv", "consistency.json"])?;
    cfg.validate()?;
    let rep = consistency_sweep(cfg, d_list)?;
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| vec![r.d.to_string(), fmt(r.dx), fmt(r.dt), fmt(r.e_p), fmt(r.e_p_pred), r.n_p.to_string(), r.n.to_string(), fmt(r.refinement)])
        .collect();
    out.write_csv("consistency.csv", &["d", "dx", "dt", "e_p", "e_p_pred", "n_p", "n", "refinement"], &rows)?;
    out.write_json("consistency.json", &rep)?;
    Ok(rep)
}

pub fn stability(cfg: &ExperimentConfig, perturbations: &[f64], out: &OutputDir) -> Result<StabilityReport> {
    if perturbations.is_empty() {
        return Err(Error::Config("perturbation list is empty".into()));
    }
    out.claim(&["stability.csv", "stability.json"])?;
    let exp = Experiment::build(cfg)?;
    let rep = stability_sweep(&exp, perturbations, cfg.stability.slab - 1)?;
    let rows: Vec<Vec<String>> = rep.rows.iter().map(|r| vec![fmt(r.e_bar_k), fmt(r.big_e_bar_k), fmt(r.c_k)]).collect();
    out.write_csv("stability.csv", &["e_bar_k", "E_bar_k", "C_k"], &rows)?;
    out.write_json("stability.json", &rep)?;
    Ok(rep)
}

pub fn condition(cfg: &ExperimentConfig, out: &OutputDir) -> Result<ConditionReport> {
    out.claim(&["condition.csv", "condition.json"])?;
    let exp = Experiment::build(cfg)?;
    let rep = condition_numbers(&exp.solver()?)?;
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| vec![r.i.to_string(), r.k.to_string(), r.ad.to_string(), fmt(r.mu_v_i), fmt(r.mu_g_ik), fmt(r.mu_m_ik), fmt(r.mu_v_ij), fmt(r.mu_dd), fmt(rep.mu_bar[r.k - 1])])
        .collect();
    out.write_csv("condition.csv", &["i", "k", "ad", "mu_v_i", "mu_g_ik", "mu_m_ik", "mu_v_ij", "mu_dd", "mu_bar_k"], &rows)?;
    out.write_json("condition.json", &rep)?;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt(0.0153), "1.53000e-2");
        assert_eq!(fmt(-20.0), "-2.00000e1");
    }

    #[test]
    fn refuses_to_clobber() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(&dir.path().join("a/b"), false).unwrap();
        out.write_csv("x.csv", &["a"], &[vec!["1".into()]]).unwrap();
        assert!(out.write_csv("x.csv", &["a"], &[]).unwrap_err().is_config());
        let out = OutputDir::create(out.root(), true).unwrap();
        out.write_csv("x.csv", &["a"], &[]).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("a/b/x.csv")).unwrap(), "a\n");
    }
}
