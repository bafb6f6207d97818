//! The relaxed linear program: lazy rows and columns, an embedded simplex
//! backend, and an external-solver file bridge.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;

use crate::bpe::{MergeList, Pair};
use crate::error::{Error, Result};
use crate::inference::{ConstraintRef, LpSolution};
use crate::timeline::PairCountTimeline;

/// A column of the LP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// Mixture weight for one category; bounded to [0, 1].
    Alpha(usize),
    /// Violation slack for one merge step; objective weight 1.
    StepSlack(usize),
    /// Violation slack for one competing pair; objective weight 1.
    PairSlack(Pair),
}

impl VarKind {
    pub fn name(&self) -> String {
        match self {
            VarKind::Alpha(i) => format!("a_{i}"),
            VarKind::StepSlack(t) => format!("vt_{t}"),
            VarKind::PairSlack((l, r)) => format!("vp_{l}_{r}"),
        }
    }

    pub fn objective_coeff(&self) -> f64 {
        match self {
            VarKind::Alpha(_) => 0.0,
            _ => 1.0,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            VarKind::Alpha(_) => (0.0, 1.0),
            _ => (0.0, f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOp {
    Le,
    Eq,
}

#[derive(Debug, Clone)]
pub struct LpRow {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub op: RowOp,
    pub rhs: f64,
}

/// The LP over alpha and the instantiated slack columns. Row 0 is always the
/// simplex equality; every other row is one relaxed dominance constraint.
#[derive(Debug, Clone)]
pub struct LpInstance {
    pub n_categories: usize,
    vars: Vec<VarKind>,
    rows: Vec<LpRow>,
    step_cols: HashMap<usize, usize>,
    pair_cols: HashMap<Pair, usize>,
}

impl LpInstance {
    pub fn new(n_categories: usize) -> Self {
        let vars: Vec<VarKind> = (0..n_categories).map(VarKind::Alpha).collect();
        let simplex = LpRow {
            name: "simplex".into(),
            coeffs: (0..n_categories).map(|i| (i, 1.0)).collect(),
            op: RowOp::Eq,
            rhs: 1.0,
        };
        LpInstance {
            n_categories,
            vars,
            rows: vec![simplex],
            step_cols: HashMap::new(),
            pair_cols: HashMap::new(),
        }
    }

    pub fn vars(&self) -> &[VarKind] {
        &self.vars
    }

    pub fn rows(&self) -> &[LpRow] {
        &self.rows
    }

    /// Constraint rows, excluding the simplex equality.
    pub fn num_constraints(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn step_col(&self, t: usize) -> Option<usize> {
        self.step_cols.get(&t).copied()
    }

    pub fn pair_col(&self, pair: Pair) -> Option<usize> {
        self.pair_cols.get(&pair).copied()
    }

    fn ensure_step_col(&mut self, t: usize) -> usize {
        if let Some(&c) = self.step_cols.get(&t) {
            return c;
        }
        let c = self.vars.len();
        self.vars.push(VarKind::StepSlack(t));
        self.step_cols.insert(t, c);
        c
    }

    fn ensure_pair_col(&mut self, pair: Pair) -> usize {
        if let Some(&c) = self.pair_cols.get(&pair) {
            return c;
        }
        let c = self.vars.len();
        self.vars.push(VarKind::PairSlack(pair));
        self.pair_cols.insert(pair, c);
        c
    }

    /// Add the row for one (t, p) constraint given the normalized count gap
    /// per category: `sum_i alpha_i * gap_i <= v_t + v_p`.
    fn push_constraint(&mut self, reference: ConstraintRef, gaps: &[f64]) {
        let vt = self.ensure_step_col(reference.t);
        let vp = self.ensure_pair_col(reference.pair);
        let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(self.n_categories + 2);
        for (i, &g) in gaps.iter().enumerate() {
            if g != 0.0 {
                coeffs.push((i, g));
            }
        }
        coeffs.push((vt, -1.0));
        coeffs.push((vp, -1.0));
        self.rows.push(LpRow {
            name: format!("c_{}_{}_{}", reference.t, reference.pair.0, reference.pair.1),
            coeffs,
            op: RowOp::Le,
            rhs: 0.0,
        });
    }

    /// Read a named solution vector back into an [`LpSolution`].
    pub fn solution_from_values(&self, values: &[f64]) -> LpSolution {
        let mut alpha = vec![0.0; self.n_categories];
        let mut v_step = HashMap::new();
        let mut v_pair = HashMap::new();
        let mut objective = 0.0;
        for (var, &x) in self.vars.iter().zip(values) {
            match *var {
                VarKind::Alpha(i) => alpha[i] = x,
                VarKind::StepSlack(t) => {
                    objective += x;
                    v_step.insert(t, x);
                }
                VarKind::PairSlack(p) => {
                    objective += x;
                    v_pair.insert(p, x);
                }
            }
        }
        LpSolution {
            alpha,
            v_step,
            v_pair,
            objective,
        }
    }
}

/// Incrementally grown LP over rounds of lazy constraint generation.
pub struct LpBuilder {
    instance: LpInstance,
    seen: HashSet<ConstraintRef>,
}

impl LpBuilder {
    pub fn new(n_categories: usize) -> Self {
        LpBuilder {
            instance: LpInstance::new(n_categories),
            seen: HashSet::new(),
        }
    }

    pub fn instance(&self) -> &LpInstance {
        &self.instance
    }

    pub fn num_constraints(&self) -> usize {
        self.instance.num_constraints()
    }

    /// Add rows for the given constraints (duplicates are skipped), reading
    /// the pair counts with one incremental sweep over the timelines.
    /// Returns the number of rows actually added.
    pub fn add_constraints(
        &mut self,
        refs: &[ConstraintRef],
        timelines: &[PairCountTimeline],
        merges: &MergeList,
    ) -> Result<usize> {
        let mut fresh: Vec<ConstraintRef> = refs
            .iter()
            .copied()
            .filter(|r| !self.seen.contains(r))
            .collect();
        fresh.sort_unstable();
        fresh.dedup();
        if fresh.is_empty() {
            return Ok(0);
        }
        let max_t = fresh.iter().map(|r| r.t).max().unwrap();
        for tl in timelines {
            if tl.steps() < max_t + 1 {
                return Err(Error::invalid(format!(
                    "timeline for category {} covers {} steps, constraint needs {}",
                    tl.category_id,
                    tl.steps(),
                    max_t + 1
                )));
            }
        }

        let n = timelines.len();
        let denoms: Vec<f64> = timelines
            .iter()
            .map(|tl| tl.norm_denominator.max(1) as f64)
            .collect();
        // One forward sweep: maintain live counts per category, emit rows at
        // each step that has pending constraints.
        let mut live: Vec<HashMap<Pair, i64>> = timelines
            .iter()
            .map(|tl| tl.base_counts().map(|(p, c)| (p, c as i64)).collect())
            .collect();
        let mut iter = fresh.iter().peekable();
        for t in 0..=max_t {
            while let Some(&&r) = iter.peek() {
                if r.t != t {
                    break;
                }
                iter.next();
                let m = merges.rule(t);
                let mut gaps = Vec::with_capacity(n);
                for i in 0..n {
                    let cp = live[i].get(&r.pair).copied().unwrap_or(0) as f64;
                    let cm = live[i].get(&m).copied().unwrap_or(0) as f64;
                    gaps.push((cp - cm) / denoms[i]);
                }
                self.instance.push_constraint(r, &gaps);
                self.seen.insert(r);
            }
            if t < max_t {
                for (i, tl) in timelines.iter().enumerate() {
                    for &(p, d) in tl.delta(t) {
                        let e = live[i].entry(p).or_insert(0);
                        *e += d;
                        if *e == 0 {
                            live[i].remove(&p);
                        }
                    }
                }
            }
        }
        Ok(fresh.len())
    }
}

/// Anything that can optimize an [`LpInstance`].
pub trait LpBackend {
    fn solve(&self, lp: &LpInstance) -> Result<LpSolution>;
}

/// In-process solver backed by a revised-simplex implementation.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmbeddedSimplex;

impl LpBackend for EmbeddedSimplex {
    fn solve(&self, lp: &LpInstance) -> Result<LpSolution> {
        let mut problem = microlp::Problem::new(microlp::OptimizationDirection::Minimize);
        let vars: Vec<microlp::Variable> = lp
            .vars()
            .iter()
            .map(|v| problem.add_var(v.objective_coeff(), v.bounds()))
            .collect();
        for row in lp.rows() {
            let expr: Vec<(microlp::Variable, f64)> =
                row.coeffs.iter().map(|&(c, v)| (vars[c], v)).collect();
            let op = match row.op {
                RowOp::Le => microlp::ComparisonOp::Le,
                RowOp::Eq => microlp::ComparisonOp::Eq,
            };
            problem.add_constraint(expr.as_slice(), op, row.rhs);
        }
        let solution = problem
            .solve()
            .map_err(|e| Error::Backend(format!("embedded simplex failed: {e}")))?;
        let values: Vec<f64> = vars.iter().map(|&v| solution[v]).collect();
        Ok(lp.solution_from_values(&values))
    }
}

/// Bridge to an external solver through LP-format files. The command string
/// is run through `sh -c` with `{lp}` and `{sol}` placeholders replaced by
/// the instance and solution paths; the solver must write `name value`
/// lines.
#[derive(Debug, Clone)]
pub struct ExternalLpFile {
    pub command: String,
}

impl ExternalLpFile {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalLpFile {
            command: command.into(),
        }
    }
}

impl LpBackend for ExternalLpFile {
    fn solve(&self, lp: &LpInstance) -> Result<LpSolution> {
        let dir = tempfile::Builder::new()
            .prefix("tokmix-lp")
            .tempdir()
            .map_err(|e| Error::Backend(format!("cannot create solver workdir: {e}")))?;
        let lp_path = dir.path().join("model.lp");
        let sol_path = dir.path().join("model.sol");
        let mut file = std::fs::File::create(&lp_path).map_err(|e| Error::io(&lp_path, e))?;
        let mut text = String::new();
        write_lp_file(lp, &mut text)?;
        file.write_all(text.as_bytes())
            .map_err(|e| Error::io(&lp_path, e))?;
        drop(file);

        let mut command = self.command.clone();
        if command.contains("{lp}") || command.contains("{sol}") {
            command = command
                .replace("{lp}", &lp_path.display().to_string())
                .replace("{sol}", &sol_path.display().to_string());
        } else {
            let _ = write!(command, " {} {}", lp_path.display(), sol_path.display());
        }
        let status = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .status()
            .map_err(|e| Error::Backend(format!("cannot launch external solver: {e}")))?;
        if !status.success() {
            return Err(Error::Backend(format!(
                "external solver exited with {status}"
            )));
        }
        let text = std::fs::read_to_string(&sol_path).map_err(|e| {
            Error::Backend(format!(
                "external solver produced no solution file {}: {e}",
                sol_path.display()
            ))
        })?;
        parse_solution_file(&text, lp)
    }
}

/// Write the instance in the text LP dialect (objective, rows, bounds).
pub fn write_lp_file(lp: &LpInstance, out: &mut String) -> Result<()> {
    out.push_str("\\ tokmix mixture-inference instance\n");
    out.push_str("Minimize\n obj:");
    let mut line_len = 5;
    let mut wrote_any = false;
    for var in lp.vars() {
        let c = var.objective_coeff();
        if c == 0.0 {
            continue;
        }
        let term = format!(" + {}", var.name());
        push_wrapped(out, &mut line_len, &term);
        wrote_any = true;
    }
    if !wrote_any {
        // A constant objective still needs one term to be well-formed.
        push_wrapped(out, &mut line_len, " 0 a_0");
    }
    out.push_str("\nSubject To\n");
    for row in lp.rows() {
        let _ = write!(out, " {}:", row.name);
        let mut line_len = row.name.len() + 2;
        for &(col, coeff) in &row.coeffs {
            let term = if coeff >= 0.0 {
                format!(" + {:.17e} {}", coeff, lp.vars()[col].name())
            } else {
                format!(" - {:.17e} {}", -coeff, lp.vars()[col].name())
            };
            push_wrapped(out, &mut line_len, &term);
        }
        let op = match row.op {
            RowOp::Le => "<=",
            RowOp::Eq => "=",
        };
        let _ = write!(out, " {} {}\n", op, row.rhs);
    }
    out.push_str("Bounds\n");
    for var in lp.vars() {
        let (lo, hi) = var.bounds();
        if hi.is_finite() {
            let _ = writeln!(out, " {} <= {} <= {}", lo, var.name(), hi);
        }
        // Default LP bounds are [0, +inf); slack variables need no entry.
    }
    out.push_str("End\n");
    Ok(())
}

fn push_wrapped(out: &mut String, line_len: &mut usize, term: &str) {
    if *line_len + term.len() > 200 {
        out.push_str("\n  ");
        *line_len = 2;
    }
    out.push_str(term);
    *line_len += term.len();
}

/// Parse `name value` solution lines back into the instance's variables.
pub fn parse_solution_file(text: &str, lp: &LpInstance) -> Result<LpSolution> {
    let mut by_name: HashMap<String, usize> = HashMap::with_capacity(lp.vars().len());
    for (idx, var) in lp.vars().iter().enumerate() {
        by_name.insert(var.name(), idx);
    }
    let mut values = vec![0.0f64; lp.vars().len()];
    let mut seen_any = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(name), Some(value)) = (it.next(), it.next()) else {
            return Err(Error::Backend(format!(
                "solution line {} is not `name value`",
                lineno + 1
            )));
        };
        if name == "objective" {
            continue; // informational; the objective is recomputed
        }
        let Some(&idx) = by_name.get(name) else {
            log::debug!("solution file names unknown variable {name}");
            continue;
        };
        let value: f64 = value.parse().map_err(|_| {
            Error::Backend(format!("bad value {value:?} on solution line {}", lineno + 1))
        })?;
        values[idx] = value;
        seen_any = true;
    }
    if !seen_any {
        return Err(Error::Backend("solution file assigned no variables".into()));
    }
    Ok(lp.solution_from_values(&values))
}

/// Convenience used by tests and the CLI: write the LP for inspection.
pub fn dump_lp_file(lp: &LpInstance, path: &Path) -> Result<()> {
    let mut text = String::new();
    write_lp_file(lp, &mut text)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
