//! Command implementations behind the `hardy` binary. Every command returns
//! a report with a `pass` verdict; the binary exits nonzero when any check
//! fails.

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{constraint_cells, hardy_report, local_bound, local_lp_oracle, Behavior};
use crate::error::{Error, Result};
use crate::jordan::{decompose, random_block_pair};
use crate::npa::{self, BoundStatus, NpaBound};
use crate::quantum::{born_behavior, hardy_max, make_hardy_optimal};
use crate::qubitopt::{self, evaluate, polish, LowerBoundOptions, LowerBoundResult, DEFAULT_RESTARTS};
use crate::sdp::SolverOptions;
use crate::selftest::{selftest_report, DirectSumHardyState, SelftestReport};

/// Largest eps accepted by a sweep.
pub const EPS_LIMIT: f64 = 0.34;
pub const CSV_HEADER: &str = "eps,local,upper,lower,gap,level,restarts";
/// Allowed excess of a lower bound over the matching upper bound.
pub const SANDWICH_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "hardy", version, about = "Device-independent bounds for Hardy's nonlocality test")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form optimum and its two-qubit realization.
    Ideal,
    /// Local, NPA upper and two-qubit lower bounds over an eps grid.
    Sweep(SweepArgs),
    /// NPA upper bound at one eps.
    Upper {
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3))]
        level: u8,
        /// Level 3 with a tighter gap target; only an optimal status passes.
        #[arg(long)]
        certify: bool,
        /// Write the moment program as text to this file.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Two-qubit lower bound at one eps.
    Lower {
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = DEFAULT_RESTARTS)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Search over POVM effects instead of projectors.
        #[arg(long)]
        povm: bool,
    },
    /// Local bound min(3 eps, 1) against the linear-programming oracle.
    Local {
        #[arg(long)]
        eps: f64,
    },
    /// Isometric extraction from a direct sum of optimal blocks.
    Selftest {
        /// Alice block weights, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        r: Vec<f64>,
        /// Bob block weights, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        s: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta: f64,
    },
    /// Block decomposition of a random pair of involutions.
    Jordan {
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 0.0)]
    pub eps_min: f64,
    #[arg(long, default_value_t = EPS_LIMIT)]
    pub eps_max: f64,
    #[arg(long, default_value_t = 18)]
    pub steps: usize,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub level: u8,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long)]
    pub certify: bool,
    #[arg(long)]
    pub povm: bool,
}

/// Everything a sweep depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub eps_min: f64,
    pub eps_max: f64,
    pub steps: usize,
    pub level: usize,
    pub restarts: usize,
    pub seed: u64,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub svg: Option<PathBuf>,
    pub certify: bool,
    pub povm: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            eps_min: 0.0,
            eps_max: EPS_LIMIT,
            steps: 18,
            level: 2,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            jobs: 0,
            out: None,
            format: Format::Csv,
            svg: None,
            certify: false,
            povm: false,
        }
    }
}

impl From<SweepArgs> for RunConfig {
    fn from(a: SweepArgs) -> Self {
        Self {
            eps_min: a.eps_min,
            eps_max: a.eps_max,
            steps: a.steps,
            level: a.level as usize,
            restarts: a.restarts,
            seed: a.seed,
            jobs: a.jobs,
            out: a.out,
            format: a.format,
            svg: a.svg,
            certify: a.certify,
            povm: a.povm,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.eps_min && self.eps_min <= self.eps_max && self.eps_max <= EPS_LIMIT) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= eps-min <= eps-max <= {EPS_LIMIT}, got [{}, {}]",
                self.eps_min, self.eps_max
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if !(1..=npa::MAX_LEVEL).contains(&self.level) {
            return Err(Error::InvalidArgument(format!("level must be 1, 2 or 3, got {}", self.level)));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        Ok(())
    }

    /// `steps` evenly spaced points from `eps_min` to `eps_max`.
    pub fn grid(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.eps_min];
        }
        let n = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| {
                if i + 1 == self.steps {
                    self.eps_max
                } else {
                    self.eps_min + (self.eps_max - self.eps_min) * i as f64 / n
                }
            })
            .collect()
    }

    pub fn effective_level(&self) -> usize {
        if self.certify {
            npa::MAX_LEVEL
        } else {
            self.level
        }
    }
}

fn solver_options(certify: bool) -> SolverOptions {
    let mut o = SolverOptions::default();
    if certify {
        o.gap_tol = 1e-10;
    }
    o
}

/// Run `f` on a pool of `jobs` threads (every core when `jobs == 0`).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Serialize)]
pub struct IdealReport {
    pub closed_form: f64,
    pub hardy: f64,
    pub a: f64,
    pub theta: f64,
    /// Amplitude of `|11>`.
    pub b: f64,
    /// `|+>` coefficients as `[re, im]`.
    pub plus: [[f64; 2]; 2],
    pub cells: [f64; 3],
    pub eps_star: f64,
    pub behavior: Behavior,
    pub pass: bool,
}

impl IdealReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "closed form (5 sqrt5 - 11)/2 = {:.12}", self.closed_form);
        let _ = writeln!(s, "state  a(|01> + |10>) + e^(i theta) b |11>");
        let _ = writeln!(s, "  a = {:.12}  b = {:.12}  theta = {}", self.a, self.b, self.theta);
        let _ = writeln!(
            s,
            "  |+> = ({:.12}) |0> + ({:.12}{:+.12}i) |1>",
            self.plus[0][0], self.plus[1][0], self.plus[1][1]
        );
        let _ = writeln!(s, "behavior p(a,b|x,y):");
        for x in 0..2 {
            for y in 0..2 {
                let row: Vec<String> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(a, b)| format!("{:.12}", self.behavior.get(a, b, x, y)))
                    .collect();
                let _ = writeln!(s, "  x={x} y={y}  ++ +- -+ --  {}", row.join(" "));
            }
        }
        let _ = writeln!(s, "recomputed hardy = {:.12}", self.hardy);
        let _ = writeln!(
            s,
            "constraints = [{:.3e}, {:.3e}, {:.3e}]  eps* = {:.3e}",
            self.cells[0], self.cells[1], self.cells[2], self.eps_star
        );
        let _ = writeln!(
            s,
            "{} |hardy - closed form| = {:.3e}",
            if self.pass { "PASS" } else { "FAIL" },
            (self.hardy - self.closed_form).abs()
        );
        s
    }
}

pub fn cmd_ideal() -> IdealReport {
    let opt = make_hardy_optimal(0.0);
    let behavior = born_behavior(&opt.model);
    let rep = hardy_report(&behavior);
    let plus = opt.plus_vector();
    let closed_form = hardy_max();
    let cells = constraint_cells(&behavior);
    IdealReport {
        closed_form,
        hardy: rep.hardy,
        a: opt.a,
        theta: opt.theta,
        b: (1.0 - 2.0 * opt.a * opt.a).sqrt(),
        plus: [[plus[0].re, plus[0].im], [plus[1].re, plus[1].im]],
        cells,
        eps_star: rep.eps_star,
        behavior,
        pass: (rep.hardy - closed_form).abs() <= 1e-10 && cells.iter().all(|c| c.abs() <= 1e-12),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalReport {
    pub eps: f64,
    pub bound: f64,
    pub lp: f64,
    pub pass: bool,
}

pub fn cmd_local(eps: f64) -> Result<LocalReport> {
    let bound = local_bound(eps)?;
    let lp = local_lp_oracle(eps)?;
    Ok(LocalReport {
        eps,
        bound,
        lp,
        pass: (bound - lp).abs() <= 1e-9,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct UpperReport {
    #[serde(flatten)]
    pub bound: NpaBound,
    pub pass: bool,
}

pub fn cmd_upper(eps: f64, level: usize, certify: bool) -> Result<UpperReport> {
    let level = if certify { npa::MAX_LEVEL } else { level };
    let bound = npa::upper_bound_with(eps, level, &solver_options(certify))?;
    let pass = if certify {
        bound.solver_status == BoundStatus::Optimal
    } else {
        bound.solver_status != BoundStatus::Failed
    };
    Ok(UpperReport { bound, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerReport {
    #[serde(flatten)]
    pub result: LowerBoundResult,
    pub pass: bool,
}

pub fn cmd_lower(eps: f64, restarts: usize, seed: u64, povm: bool, jobs: usize) -> Result<LowerReport> {
    let opts = LowerBoundOptions {
        restarts,
        seed,
        povm,
        ..LowerBoundOptions::default()
    };
    let result = with_jobs(jobs, || qubitopt::lower_bound_with(eps, &opts))??;
    let pass = result.feasible;
    Ok(LowerReport { result, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestCliReport {
    #[serde(flatten)]
    pub report: SelftestReport,
    pub pass: bool,
}

pub fn cmd_selftest(r: &[f64], s: &[f64], theta: f64) -> Result<SelftestCliReport> {
    let state = DirectSumHardyState::new(r.to_vec(), s.to_vec(), theta)?;
    let report = selftest_report(&state);
    let pass = (report.fidelity - 1.0).abs() <= 1e-10
        && (report.hardy - hardy_max()).abs() <= 1e-10
        && report.eps_star.abs() <= 1e-10
        && report.schmidt_rank == 1
        && report.phase_error <= 1e-9;
    Ok(SelftestCliReport { report, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct JordanReport {
    pub dim: usize,
    pub seed: u64,
    pub blocks: usize,
    pub block_dims: Vec<usize>,
    pub max_block: usize,
    pub reconstruction_error: f64,
    pub completeness_error: f64,
    pub pass: bool,
}

/// Decompose `U (direct sum of dim/2 generic 2x2 blocks, plus one 1x1 block
/// when dim is odd) U^dagger` for a seeded random unitary `U`.
pub fn cmd_jordan(dim: usize, seed: u64) -> Result<JordanReport> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a0, a1) = random_block_pair(dim / 2, dim % 2, &mut rng);
    let dec = decompose(&a0, &a1)?;
    let reconstruction_error = dec.reconstruction_error(&a0, &a1);
    let max_block = dec.max_block();
    Ok(JordanReport {
        dim,
        seed,
        blocks: dec.blocks.len(),
        block_dims: dec.blocks.iter().map(|b| b.dim()).collect(),
        max_block,
        reconstruction_error,
        completeness_error: dec.completeness_error(),
        pass: max_block <= 2 && reconstruction_error <= 1e-9,
    })
}

/// One point of the eps sweep. Missing values (solver failure, no feasible
/// point) are empty in CSV and `null` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub local: f64,
    pub upper: Option<f64>,
    pub lower: Option<f64>,
    pub gap: Option<f64>,
    pub level: usize,
    pub restarts: usize,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub lower_results: Vec<LowerBoundResult>,
    pub warnings: Vec<String>,
}

impl SweepOutcome {
    pub fn pass(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Compute every row of the sweep. Points run in parallel; rows come back
/// in grid order.
pub fn compute_sweep(cfg: &RunConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let level = cfg.effective_level();
    let grid = cfg.grid();
    let solver = solver_options(cfg.certify);
    let opts = LowerBoundOptions {
        restarts: cfg.restarts,
        seed: cfg.seed,
        povm: cfg.povm,
        ..LowerBoundOptions::default()
    };

    let points: Vec<Result<(NpaBound, LowerBoundResult)>> = with_jobs(cfg.jobs, || {
        grid.par_iter()
            .map(|&eps| {
                let up = npa::upper_bound_with(eps, level, &solver)?;
                let lo = qubitopt::lower_bound_with(eps, &opts)?;
                Ok((up, lo))
            })
            .collect()
    })?;
    let mut uppers = Vec::with_capacity(points.len());
    let mut lowers = Vec::with_capacity(points.len());
    for p in points {
        let (u, l) = p?;
        uppers.push(u);
        lowers.push(l);
    }

    // A point feasible at a smaller eps stays feasible at a larger one, so
    // the lower curve can be made nondecreasing by polishing it there.
    for i in 1..lowers.len() {
        let prev = &lowers[i - 1];
        if !prev.feasible || grid[i] < grid[i - 1] {
            continue;
        }
        if lowers[i].feasible && lowers[i].value >= prev.value {
            continue;
        }
        let eps = grid[i];
        let q = polish(&prev.best_point, eps);
        let e = evaluate(&q, eps);
        if e.excess <= qubitopt::FEASIBILITY_TOL && (!lowers[i].feasible || e.hardy > lowers[i].value) {
            lowers[i].value = e.hardy;
            lowers[i].best_point = q;
            lowers[i].feasible = true;
            lowers[i].cells = e.cells;
        }
    }

    let mut warnings = Vec::new();
    let mut rows = Vec::with_capacity(grid.len());
    for ((&eps, up), lo) in grid.iter().zip(&uppers).zip(&lowers) {
        let upper = match up.solver_status {
            BoundStatus::Optimal => up.value,
            BoundStatus::NearOptimal if !cfg.certify => up.value,
            _ => None,
        };
        if upper.is_none() {
            warnings.push(format!("eps = {eps}: NPA level {level} solve failed ({:?})", up.solver_status));
        }
        let lower = lo.feasible.then_some(lo.value);
        if lower.is_none() {
            warnings.push(format!("eps = {eps}: no feasible two-qubit point found"));
        }
        if let (Some(u), Some(l)) = (upper, lower) {
            if l > u + SANDWICH_TOL {
                warnings.push(format!("eps = {eps}: lower bound {l} exceeds upper bound {u}"));
            }
        }
        rows.push(SweepRow {
            eps,
            local: local_bound(eps)?,
            upper,
            lower,
            gap: upper.zip(lower).map(|(u, l)| u - l),
            level,
            restarts: cfg.restarts,
        });
    }
    Ok(SweepOutcome {
        rows,
        lower_results: lowers,
        warnings,
    })
}

/// Compute the sweep and write the table (to `cfg.out` or `stdout`) and the
/// optional plot.
pub fn cmd_sweep(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<SweepOutcome> {
    let outcome = compute_sweep(cfg)?;
    let text = match cfg.format {
        Format::Csv => to_csv(&outcome.rows)?,
        Format::Json => to_json(&outcome.rows)?,
    };
    match &cfg.out {
        Some(path) => std::fs::write(path, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    if let Some(path) = &cfg.svg {
        std::fs::write(path, render_svg(&outcome.rows))?;
    }
    Ok(outcome)
}

/// `x` with 12 significant digits, plain decimal when the exponent allows.
pub fn sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mant, exp) = sci.split_once('e').expect("exponent in scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-7..=11).contains(&exp) {
        return sci;
    }
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    let body = if exp >= 0 {
        let split = exp as usize + 1;
        format!("{}.{}", &digits[..split], &digits[split..])
    } else {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    };
    let body = body.trim_end_matches('0').trim_end_matches('.');
    if neg {
        format!("-{body}")
    } else {
        body.to_string()
    }
}

pub fn to_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(','))?;
    let opt = |v: Option<f64>| v.map(sig12).unwrap_or_default();
    for r in rows {
        w.write_record([
            sig12(r.eps),
            sig12(r.local),
            opt(r.upper),
            opt(r.lower),
            opt(r.gap),
            r.level.to_string(),
            r.restarts.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Format(format!("unexpected header {:?}", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn to_json(rows: &[SweepRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)? + "\n")
}

/// 800x500 plot of the three curves: local dashed, upper solid, lower dotted.
pub fn render_svg(rows: &[SweepRow]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 500.0;
    let (left, right, top, bottom) = (70.0, 20.0, 30.0, 60.0);
    let pw = W - left - right;
    let ph = H - top - bottom;
    let x_max = rows.iter().map(|r| r.eps).fold(0.0, f64::max);
    let x_max = if x_max > 0.0 { x_max } else { EPS_LIMIT };
    let px = |x: f64| left + pw * x / x_max;
    let py = |y: f64| top + ph * (1.0 - y.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="800" height="500" viewBox="0 0 800 500">"#);
    let _ = writeln!(s, r#"<rect width="800" height="500" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{left}" y1="{0}" x2="{1}" y2="{0}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{0}"/></g>"#,
        top + ph,
        left + pw
    );
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="12" text-anchor="middle">"#);
    let ticks = (x_max / 0.05).floor() as usize;
    for i in 0..=ticks {
        let x = 0.05 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1}" x2="{0:.1}" y2="{2}" stroke="black"/><text x="{0:.1}" y="{3}">{x:.2}</text>"#,
            px(x),
            top + ph,
            top + ph + 5.0,
            top + ph + 20.0
        );
    }
    for i in 0..=5 {
        let y = 0.2 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{1:.1}" x2="{2}" y2="{1:.1}" stroke="black"/><text x="{3}" y="{4:.1}" text-anchor="end">{y:.1}</text>"#,
            left - 5.0,
            py(y),
            left,
            left - 8.0,
            py(y) + 4.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}">&#949;</text>"#, left + pw / 2.0, H - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="20" y="{0}" transform="rotate(-90 20 {0})">p(+,+|A1,B1)</text>"#,
        top + ph / 2.0
    );
    let _ = writeln!(s, "</g>");

    type Curve = (&'static str, &'static str, &'static str, fn(&SweepRow) -> Option<f64>);
    let curves: [Curve; 3] = [
        ("local", "#555555", r#" stroke-dasharray="8 5""#, |r| Some(r.local)),
        ("upper", "#1f4e9c", "", |r| r.upper),
        ("lower", "#c0392b", r#" stroke-dasharray="2 4""#, |r| r.lower),
    ];
    for (name, color, dash, get) in curves {
        // Break the line wherever a value is missing.
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for r in rows {
            match get(r) {
                Some(v) => segments.last_mut().expect("nonempty").push((px(r.eps), py(v))),
                None => segments.push(Vec::new()),
            }
        }
        for seg in segments.iter().filter(|s| !s.is_empty()) {
            let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                s,
                r#"<polyline class="{name}" fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
                pts.join(" ")
            );
        }
    }
    let legend = [("local", "#555555", r#" stroke-dasharray="8 5""#), ("NPA upper", "#1f4e9c", ""), ("two-qubit lower", "#c0392b", r#" stroke-dasharray="2 4""#)];
    for (i, (label, color, dash)) in legend.iter().enumerate() {
        let y = top + 15.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{y}" x2="{1}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/><text x="{2}" y="{3}" font-family="sans-serif" font-size="12">{label}</text>"#,
            left + 15.0,
            left + 45.0,
            left + 52.0,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Run a parsed command line, printing reports to `stdout`. Returns the
/// process exit code: 0 when every check passed, 1 otherwise.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    fn json<T: Serialize>(out: &mut dyn Write, v: &T) -> Result<()> {
        writeln!(out, "{}", serde_json::to_string_pretty(v)?)?;
        Ok(())
    }
    let pass = match cli.command {
        Command::Ideal => {
            let rep = cmd_ideal();
            write!(stdout, "{}", rep.render())?;
            rep.pass
        }
        Command::Sweep(args) => {
            let cfg = RunConfig::from(args);
            let outcome = cmd_sweep(&cfg, stdout)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            outcome.pass()
        }
        Command::Upper {
            eps,
            level,
            certify,
            dump,
        } => {
            if let Some(path) = dump {
                let level = if certify { npa::MAX_LEVEL } else { level as usize };
                std::fs::write(path, npa::build_problem(eps, level)?.program.to_text())?;
            }
            let rep = cmd_upper(eps, level as usize, certify)?;
            json(stdout, &rep)?;
            rep.pass
        }
        Command::Lower {
            eps,
            restarts,
            seed,
            jobs,
            povm,
        } => {
            let rep = cmd_lower(eps, restarts, seed, povm, jobs)?;
            json(stdout, &rep)?;
            rep.pass
        }
        Command::Local { eps } => {
            let rep = cmd_local(eps)?;
            json(stdout, &rep)?;
            rep.pass
        }
        Command::Selftest { r, s, theta } => {
            let rep = cmd_selftest(&r, &s, theta)?;
            json(stdout, &rep)?;
            rep.pass
        }
        Command::Jordan { dim, seed } => {
            let rep = cmd_jordan(dim, seed)?;
            json(stdout, &rep)?;
            rep.pass
        }
    };
    Ok(if pass { 0 } else { 1 })
}
