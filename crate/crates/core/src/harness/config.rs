//! The plan file format.
//!
//! A plan file is line oriented. Blank lines and everything after `#` are
//! ignored. `[section]` starts a section; every other line is `key = value`
//! inside the current section. Lists are comma separated. Numeric lists also
//! accept two generators:
//!
//! * `halving(x0, n)` expands to `x0, x0/2, ..., x0/2^(n-1)`;
//! * `geometric(x0, r, n)` expands to `x0, x0·r, ..., x0·r^(n-1)`.
//!
//! Sections and keys (defaults in parentheses):
//!
//! ```text
//! [plan]      kind (single-solve), scheme (cnfd), problem (required),
//!             T (1), lambda (1), domain "a, b" (problem default),
//!             rates (true for sweeps)
//! [problem]   phi, gamma            expressions in x, or
//!             phi_file, gamma_file  nodal values, relative to the plan file
//! [grid]      N or h (required), tau (required except for probes),
//!             epsilon (0.05)
//! [solver]    newton_tol (1e-12), newton_max_iter (50),
//!             fallback (damped-fixed-point | fail)
//! [reference] truth (exact | reference | none), h_factor (4), tau_factor (8)
//! [probe]     tau_factors (0.9, 1.5), steps (500), u_bound (sup |phi|),
//!             growth_limit (10)
//! [output]    csv, energy_csv, snapshot_csv, snapshot_times
//! ```
//!
//! `problem = custom` requires either both expressions or both files. The
//! parser reports every problem it finds, each with its line number.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::schemes::{Fallback, Scheme};

use super::plan::{default_truth, ExperimentPlan, PlanKind, TruthSource};
use super::problem::{parse_expression, CustomProblem, Problem};

const SECTIONS: &[(&str, &[&str])] = &[
    ("plan", &["kind", "scheme", "problem", "T", "lambda", "domain", "rates"]),
    ("problem", &["phi", "gamma", "phi_file", "gamma_file"]),
    ("grid", &["N", "h", "tau", "epsilon"]),
    ("solver", &["newton_tol", "newton_max_iter", "fallback"]),
    ("reference", &["truth", "h_factor", "tau_factor"]),
    ("probe", &["tau_factors", "steps", "u_bound", "growth_limit"]),
    ("output", &["csv", "energy_csv", "snapshot_csv", "snapshot_times"]),
];

/// Reads and validates a plan file.
pub fn plan_from_config(path: &Path) -> Result<ExperimentPlan> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    plan_from_str(&text, &base)
}

/// Parses plan text; relative file names are resolved against `base_dir`.
pub fn plan_from_str(text: &str, base_dir: &Path) -> Result<ExperimentPlan> {
    let mut doc = Document::default();
    doc.parse(text);
    let plan = doc.build(base_dir);
    match plan {
        Some(plan) if doc.errors.is_empty() => {
            let problems = plan.problems();
            if problems.is_empty() {
                Ok(plan)
            } else {
                Err(Error::Plan(
                    problems
                        .into_iter()
                        .map(|(field, msg)| doc.locate(field, &msg))
                        .collect(),
                ))
            }
        }
        _ => {
            doc.errors.sort_by_key(|e| line_of(e));
            Err(Error::Plan(doc.errors))
        }
    }
}

fn line_of(msg: &str) -> usize {
    msg.strip_prefix("line ")
        .and_then(|r| r.split(':').next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(0)
}

#[derive(Default)]
struct Document {
    /// `section.key` to (line, raw value).
    entries: HashMap<String, (usize, String)>,
    sections: HashMap<String, usize>,
    errors: Vec<String>,
}

impl Document {
    fn parse(&mut self, text: &str) {
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']').map(str::trim) else {
                    self.error(line_no, format!("malformed section header '{line}'"));
                    section = None;
                    continue;
                };
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    self.error(line_no, format!("unknown section [{name}]"));
                    section = None;
                    continue;
                }
                if let Some(prev) = self.sections.insert(name.to_string(), line_no) {
                    self.error(line_no, format!("section [{name}] repeated (first on line {prev})"));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                self.error(line_no, format!("expected 'key = value', got '{line}'"));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(sec) = &section else {
                self.error(line_no, format!("'{key}' appears outside any section"));
                continue;
            };
            let known = SECTIONS
                .iter()
                .find(|(s, _)| s == sec)
                .is_some_and(|(_, keys)| keys.contains(&key));
            if !known {
                self.error(line_no, format!("unknown key '{key}' in [{sec}]"));
                continue;
            }
            if value.is_empty() {
                self.error(line_no, format!("'{key}' has no value"));
                continue;
            }
            let full = format!("{sec}.{key}");
            if let Some((prev, _)) = self.entries.get(&full) {
                let msg = format!("'{key}' repeated in [{sec}] (first on line {prev})");
                self.error(line_no, msg);
                continue;
            }
            self.entries.insert(full, (line_no, value.to_string()));
        }
    }

    fn error(&mut self, line: usize, msg: String) {
        self.errors.push(format!("line {line}: {msg}"));
    }

    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    /// Parses `key` with `f`, recording a located error on failure.
    fn get<T>(&mut self, key: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> Option<T> {
        let (line, raw) = self.raw(key)?;
        let raw = raw.to_string();
        match f(&raw) {
            Ok(v) => Some(v),
            Err(msg) => {
                self.error(line, format!("{key}: {msg}"));
                None
            }
        }
    }

    /// Attaches the line of the offending key (or its section) to a
    /// validation message.
    fn locate(&self, field: &str, msg: &str) -> String {
        let line = match field {
            "grid.N" => self.raw("grid.N").or_else(|| self.raw("grid.h")).map(|(l, _)| l),
            _ => self.raw(field).map(|(l, _)| l),
        }
        .or_else(|| self.sections.get(field.split('.').next().unwrap_or("")).copied());
        match line {
            Some(l) => format!("line {l}: {field}: {msg}"),
            None => format!("{field}: {msg}"),
        }
    }

    fn build(&mut self, base: &Path) -> Option<ExperimentPlan> {
        let kind = self.get("plan.kind", parse_with::<PlanKind>).unwrap_or(PlanKind::SingleSolve);
        let scheme = self.get("plan.scheme", parse_with::<Scheme>).unwrap_or(Scheme::Cnfd);
        let problem = self.problem(base);

        let mut plan = ExperimentPlan::new(kind, scheme, problem.clone().unwrap_or(Problem::Example2CosSin));
        if let Some(t) = self.get("plan.T", scalar) {
            plan.t_final = t;
        }
        if let Some(l) = self.get("plan.lambda", scalar) {
            plan.lambda = l;
        }
        match self.get("plan.domain", |s| {
            let v = list(s)?;
            match v[..] {
                [a, b] => Ok((a, b)),
                _ => Err(format!("expected two numbers 'a, b', got {}", v.len())),
            }
        }) {
            Some(d) => plan.domain = d,
            None => {
                if let Some((line, "custom")) = self.raw("plan.problem") {
                    if self.raw("plan.domain").is_none() {
                        self.error(line, "custom problems need plan.domain".into());
                    }
                }
            }
        }
        if let Some(r) = self.get("plan.rates", boolean) {
            plan.rates = r;
        }

        if let Some(e) = self.get("grid.epsilon", list) {
            plan.epsilons = e;
        }
        if let Some(t) = self.get("grid.tau", list) {
            plan.taus = t;
        } else if self.raw("grid.tau").is_none() && kind != PlanKind::StabilityProbe {
            let line = self.sections.get("grid").copied().unwrap_or(0);
            self.error(line, "grid.tau is required".into());
        }
        match (self.raw("grid.N").is_some(), self.raw("grid.h").is_some()) {
            (true, true) => {
                let line = self.raw("grid.h").map(|(l, _)| l).unwrap_or(0);
                self.error(line, "give either grid.N or grid.h, not both".into());
            }
            (false, false) => {
                let line = self.sections.get("grid").copied().unwrap_or(0);
                self.error(line, "grid.N or grid.h is required".into());
            }
            (true, false) => {
                if let Some(n) = self.get("grid.N", |s| list(s)?.into_iter().map(count).collect()) {
                    plan.cells = n;
                }
            }
            (false, true) => {
                let length = plan.length();
                if let Some(n) = self.get("grid.h", |s| {
                    list(s)?.into_iter().map(|h| cells_for(length, h)).collect()
                }) {
                    plan.cells = n;
                }
            }
        }

        if let Some(t) = self.get("solver.newton_tol", scalar) {
            plan.newton_tol = t;
        }
        if let Some(m) = self.get("solver.newton_max_iter", |s| count(scalar(s)?)) {
            plan.newton_max_iter = m;
        }
        if let Some(f) = self.get("solver.fallback", parse_with::<Fallback>) {
            plan.fallback = f;
        }

        plan.truth = self
            .get("reference.truth", parse_with::<TruthSource>)
            .unwrap_or_else(|| default_truth(kind, &plan.problem, plan.lambda));
        if let Some(f) = self.get("reference.h_factor", |s| count(scalar(s)?)) {
            plan.reference.h_factor = f;
        }
        if let Some(f) = self.get("reference.tau_factor", |s| count(scalar(s)?)) {
            plan.reference.tau_factor = f;
        }

        if let Some(f) = self.get("probe.tau_factors", list) {
            plan.probe.tau_factors = f;
        }
        if let Some(s) = self.get("probe.steps", |s| count(scalar(s)?)) {
            plan.probe.steps = s;
        }
        if let Some(u) = self.get("probe.u_bound", scalar) {
            plan.probe.u_bound = Some(u);
        }
        if let Some(g) = self.get("probe.growth_limit", scalar) {
            plan.probe.growth_limit = g;
        }

        let path = |s: &str| Ok::<_, String>(base.join(s));
        plan.output.csv = self.get("output.csv", path);
        plan.output.energy_csv = self.get("output.energy_csv", path);
        plan.output.snapshot_csv = self.get("output.snapshot_csv", path);
        if let Some(t) = self.get("output.snapshot_times", list) {
            plan.output.snapshot_times = t;
        }

        problem.map(|_| plan)
    }

    fn problem(&mut self, base: &Path) -> Option<Problem> {
        let Some((line, name)) = self.raw("plan.problem") else {
            let line = self.sections.get("plan").copied().unwrap_or(0);
            self.error(line, "plan.problem is required".into());
            return None;
        };
        let name = name.to_string();
        let custom_keys = ["problem.phi", "problem.gamma", "problem.phi_file", "problem.gamma_file"];
        if name != "custom" {
            for k in custom_keys {
                if let Some((l, _)) = self.raw(k) {
                    self.error(l, format!("{k} is only used with problem = custom"));
                }
            }
            return self.get("plan.problem", parse_with::<Problem>);
        }
        let has = |d: &Self, k: &str| d.raw(k).is_some();
        let exprs = has(self, "problem.phi") || has(self, "problem.gamma");
        let files = has(self, "problem.phi_file") || has(self, "problem.gamma_file");
        match (exprs, files) {
            (true, false) => {
                let phi = self.get("problem.phi", expression);
                let gamma = self.get("problem.gamma", expression);
                for k in ["problem.phi", "problem.gamma"] {
                    if !has(self, k) {
                        self.error(line, format!("custom problems need {k}"));
                    }
                }
                Some(Problem::Custom(CustomProblem::Expressions {
                    phi: phi?,
                    gamma: gamma?,
                }))
            }
            (false, true) => {
                let phi = self.raw("problem.phi_file").map(|(_, p)| base.join(p));
                let gamma = self.raw("problem.gamma_file").map(|(_, p)| base.join(p));
                for k in ["problem.phi_file", "problem.gamma_file"] {
                    if !has(self, k) {
                        self.error(line, format!("custom problems need {k}"));
                    }
                }
                Some(Problem::Custom(CustomProblem::Sampled {
                    phi: phi?,
                    gamma: gamma?,
                }))
            }
            (true, true) => {
                self.error(line, "give either expressions or files for the custom problem, not both".into());
                None
            }
            (false, false) => {
                self.error(line, "custom problems need [problem] phi and gamma, or phi_file and gamma_file".into());
                None
            }
        }
    }
}

fn parse_with<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse::<T>().map_err(|e| match e {
        Error::Config(m) => m,
        other => other.to_string(),
    })
}

fn expression(s: &str) -> std::result::Result<String, String> {
    parse_expression(s).map_err(|e| e.to_string())?;
    Ok(s.to_string())
}

fn number(s: &str) -> std::result::Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| format!("'{}' is not a number", s.trim()))
}

fn scalar(s: &str) -> std::result::Result<f64, String> {
    match list(s)?[..] {
        [v] => Ok(v),
        ref v => Err(format!("expected one value, got {}", v.len())),
    }
}

fn boolean(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("expected true or false, got '{other}'")),
    }
}

fn count(v: f64) -> std::result::Result<usize, String> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        Err(format!("expected a whole number, got {v}"))
    }
}

fn cells_for(length: f64, h: f64) -> std::result::Result<usize, String> {
    if !(h > 0.0) {
        return Err(format!("h must be positive, got {h}"));
    }
    let n = (length / h).round();
    if n < 1.0 || ((n * h - length) / length).abs() > 1e-9 {
        return Err(format!("h = {h} does not divide the domain length {length}"));
    }
    Ok(n as usize)
}

/// A comma-separated list of numbers and generators.
fn list(s: &str) -> std::result::Result<Vec<f64>, String> {
    let mut out = Vec::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        let (item, tail) = if let Some(open) = rest.find('(').filter(|&o| !rest[..o].contains(',')) {
            let close = rest[open..]
                .find(')')
                .map(|c| open + c)
                .ok_or_else(|| format!("unclosed '(' in '{s}'"))?;
            (&rest[..=close], &rest[close + 1..])
        } else {
            match rest.find(',') {
                Some(c) => (&rest[..c], &rest[c..]),
                None => (rest, ""),
            }
        };
        out.extend(item_values(item.trim())?);
        let tail = tail.trim_start();
        rest = match tail.strip_prefix(',') {
            Some(t) => {
                if t.trim().is_empty() {
                    return Err("trailing ','".into());
                }
                t.trim_start()
            }
            None if tail.is_empty() => "",
            None => return Err(format!("unexpected '{tail}'")),
        };
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

fn item_values(item: &str) -> std::result::Result<Vec<f64>, String> {
    let Some((name, args)) = item.strip_suffix(')').and_then(|i| i.split_once('(')) else {
        return Ok(vec![number(item)?]);
    };
    let args: Vec<f64> = args
        .split(',')
        .map(number)
        .collect::<std::result::Result<_, _>>()?;
    let (x0, ratio, n) = match (name.trim(), &args[..]) {
        ("halving", &[x0, n]) => (x0, 0.5, n),
        ("geometric", &[x0, r, n]) => (x0, r, n),
        ("halving", _) => return Err("halving takes (x0, n)".into()),
        ("geometric", _) => return Err("geometric takes (x0, ratio, n)".into()),
        (other, _) => return Err(format!("unknown generator '{other}'")),
    };
    let n = count(n)?;
    if n == 0 {
        return Err(format!("{} needs a positive count", name.trim()));
    }
    Ok((0..n).map(|j| x0 * ratio.powi(j as i32)).collect())
}
