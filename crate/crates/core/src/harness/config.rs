use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{BilevelError, Result};
use crate::optimizers::InnerLoopReading;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AlgoKind {
    Mrbo,
    Vrbo,
    Stocbio,
}

impl AlgoKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgoKind::Mrbo => "mrbo",
            AlgoKind::Vrbo => "vrbo",
            AlgoKind::Stocbio => "stocbio",
        }
    }
}

impl fmt::Display for AlgoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AlgoMode {
    #[default]
    Practical,
    Theorem,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticBlock {
    pub p: usize,
    pub q: usize,
    pub mu: f64,
    pub l_inner: f64,
    pub noise_scale: f64,
    pub n_samples: usize,
    pub c_x: f64,
    pub coupling_norm: f64,
    pub seed: u64,
}

impl Default for QuadraticBlock {
    fn default() -> Self {
        QuadraticBlock {
            p: 10,
            q: 10,
            mu: 0.5,
            l_inner: 1.0,
            noise_scale: 0.0,
            n_samples: 1000,
            c_x: 0.0,
            coupling_norm: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypercleanBlock {
    /// Load this dataset file instead of generating one.
    pub dataset: Option<PathBuf>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub d: usize,
    pub p_corrupt: f64,
    pub data_seed: u64,
    pub ridge: f64,
}

impl Default for HypercleanBlock {
    fn default() -> Self {
        HypercleanBlock {
            dataset: None,
            n_train: 1000,
            n_val: 1000,
            n_test: 1000,
            d: 20,
            p_corrupt: 0.1,
            data_seed: 0,
            ridge: 0.001,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemBlock {
    Quadratic(QuadraticBlock),
    Hyperclean(HypercleanBlock),
}

/// MRBO block; in theorem mode `gamma`, `c1`, `c2` and `m` are derived and
/// `gamma` acts as the upper hint.
#[derive(Clone, Debug, PartialEq)]
pub struct MrboBlock {
    pub gamma: f64,
    /// `None` means `1/(6L)` in theorem mode and 0.1 otherwise.
    pub lambda: Option<f64>,
    pub c1: f64,
    pub c2: f64,
    pub m: f64,
    pub d: f64,
    pub s: usize,
    pub eta: f64,
    pub q: usize,
    pub independent_prev_batches: bool,
}

impl Default for MrboBlock {
    fn default() -> Self {
        MrboBlock {
            gamma: 0.1,
            lambda: None,
            c1: 1.0,
            c2: 1.0,
            m: 1.0,
            d: 1.0,
            s: 1000,
            eta: 0.5,
            q: 3,
            independent_prev_batches: false,
        }
    }
}

/// VRBO block; in theorem mode `alpha`, `beta`, `m_inner` and `q` are
/// derived.
#[derive(Clone, Debug, PartialEq)]
pub struct VrboBlock {
    pub alpha: f64,
    pub beta: f64,
    pub s1: usize,
    pub s2: usize,
    pub period: usize,
    pub m_inner: usize,
    pub eta: f64,
    pub q: usize,
    pub reading: InnerLoopReading,
}

impl Default for VrboBlock {
    fn default() -> Self {
        VrboBlock {
            alpha: 0.1,
            beta: 0.1,
            s1: 1000,
            s2: 500,
            period: 3,
            m_inner: 20,
            eta: 0.5,
            q: 3,
            reading: InnerLoopReading::Literal,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StocbioBlock {
    pub alpha_out: f64,
    pub beta_in: f64,
    pub t_inner: usize,
    pub s: usize,
    pub eta: f64,
    pub q: usize,
}

impl Default for StocbioBlock {
    fn default() -> Self {
        StocbioBlock {
            alpha_out: 0.1,
            beta_in: 0.1,
            t_inner: 10,
            s: 1000,
            eta: 0.5,
            q: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AlgoParams {
    Mrbo(MrboBlock),
    Vrbo(VrboBlock),
    Stocbio(StocbioBlock),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgoBlock {
    pub kind: AlgoKind,
    pub mode: AlgoMode,
    /// Per-algorithm override of the run's `K`.
    pub k: Option<usize>,
    pub params: AlgoParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunBlock {
    pub seeds: Vec<u64>,
    pub k: usize,
    pub wall_budget_ms: Option<u64>,
    pub output_dir: PathBuf,
    /// Also write VRBO inner-loop rows.
    pub trace_inner: bool,
    pub flush_every: usize,
    /// Compute estimator-error columns (costs full-population passes).
    pub diagnostics: bool,
    /// Estimate constants by sampling when they are not known in closed form.
    pub empirical_constants: bool,
    /// Radius of the ball the constants are taken over.
    pub constants_radius: f64,
    /// Fill value of the initial outer point.
    pub x0: f64,
    /// Fill value of the initial inner point.
    pub y0: f64,
    pub parallelism: usize,
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            seeds: Vec::new(),
            k: 1000,
            wall_budget_ms: None,
            output_dir: PathBuf::from("out"),
            trace_inner: false,
            flush_every: 100,
            diagnostics: true,
            empirical_constants: false,
            constants_radius: 10.0,
            x0: 0.0,
            y0: 0.0,
            parallelism: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemBlock,
    pub algos: Vec<AlgoBlock>,
    pub run: RunBlock,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |key: &str, message: &str| BilevelError::Config {
            line: 0,
            key: key.to_string(),
            message: message.to_string(),
        };
        if self.algos.is_empty() {
            return Err(cfg_err("algo", "at least one [algo.<name>] block is required"));
        }
        if self.run.seeds.is_empty() {
            return Err(cfg_err("run.seeds", "at least one seed is required"));
        }
        if self.run.parallelism == 0 {
            return Err(cfg_err("run.parallelism", "must be >= 1"));
        }
        for a in &self.algos {
            if a.mode == AlgoMode::Theorem {
                if a.kind == AlgoKind::Stocbio {
                    return Err(cfg_err("algo.stocbio.mode", "theorem mode is not defined for stocbio"));
                }
                if matches!(self.problem, ProblemBlock::Hyperclean(_)) && !self.run.empirical_constants {
                    return Err(cfg_err(
                        &format!("algo.{}.mode", a.kind),
                        "theorem mode on hyperclean needs run.empirical_constants = true",
                    ));
                }
            }
        }
        Ok(())
    }
}

struct Entry {
    line: usize,
    value: String,
}

/// Key/value pairs of one section with consumption tracking, so leftover
/// (unknown) keys can be reported.
struct Section {
    name: String,
    line: usize,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn err(&self, key: &str, line: usize, message: impl Into<String>) -> BilevelError {
        BilevelError::Config {
            line,
            key: format!("{}.{key}", self.name),
            message: message.into(),
        }
    }

    fn take_str(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key).map(|e| (e.line, e.value))
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take_str(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| self.err(key, line, format!("cannot parse {v:?}"))),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_bool(&mut self, key: &str, slot: &mut bool) -> Result<()> {
        if let Some((line, v)) = self.take_str(key) {
            *slot = match v.as_str() {
                "true" | "yes" | "1" => true,
                "false" | "no" | "0" => false,
                _ => return Err(self.err(key, line, format!("expected a boolean, got {v:?}"))),
            };
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, e)) => Err(BilevelError::Config {
                line: e.line,
                key: format!("{}.{key}", self.name),
                message: "unknown key".to_string(),
            }),
        }
    }
}

fn split_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| BilevelError::Config {
                line: line_no,
                key: line.to_string(),
                message: "unterminated section header".to_string(),
            })?;
            let name = name.trim().to_string();
            if sections.iter().any(|s| s.name == name) {
                return Err(BilevelError::Config {
                    line: line_no,
                    key: name,
                    message: "duplicate section".to_string(),
                });
            }
            sections.push(Section {
                name,
                line: line_no,
                entries: BTreeMap::new(),
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| BilevelError::Config {
            line: line_no,
            key: line.to_string(),
            message: "expected key = value".to_string(),
        })?;
        let key = key.trim().to_string();
        let section = sections.last_mut().ok_or_else(|| BilevelError::Config {
            line: line_no,
            key: key.clone(),
            message: "key outside of any section".to_string(),
        })?;
        if section.entries.contains_key(&key) {
            return Err(BilevelError::Config {
                line: line_no,
                key: format!("{}.{key}", section.name),
                message: "duplicate key".to_string(),
            });
        }
        section.entries.insert(
            key,
            Entry {
                line: line_no,
                value: value.trim().to_string(),
            },
        );
    }
    Ok(sections)
}

fn parse_problem(mut s: Section) -> Result<ProblemBlock> {
    let (line, family) = s
        .take_str("family")
        .ok_or_else(|| s.err("family", s.line, "missing (quadratic | hyperclean)"))?;
    let block = match family.as_str() {
        "quadratic" => {
            let mut b = QuadraticBlock::default();
            s.set("p", &mut b.p)?;
            s.set("q", &mut b.q)?;
            s.set("mu", &mut b.mu)?;
            s.set("l_inner", &mut b.l_inner)?;
            s.set("noise_scale", &mut b.noise_scale)?;
            s.set("n_samples", &mut b.n_samples)?;
            s.set("c_x", &mut b.c_x)?;
            s.set("coupling_norm", &mut b.coupling_norm)?;
            s.set("seed", &mut b.seed)?;
            ProblemBlock::Quadratic(b)
        }
        "hyperclean" => {
            let mut b = HypercleanBlock::default();
            b.dataset = s.take_str("dataset").map(|(_, v)| PathBuf::from(v));
            s.set("n_train", &mut b.n_train)?;
            s.set("n_val", &mut b.n_val)?;
            s.set("n_test", &mut b.n_test)?;
            s.set("d", &mut b.d)?;
            s.set("p_corrupt", &mut b.p_corrupt)?;
            s.set("data_seed", &mut b.data_seed)?;
            s.set("ridge", &mut b.ridge)?;
            ProblemBlock::Hyperclean(b)
        }
        other => return Err(s.err("family", line, format!("unknown family {other:?}"))),
    };
    s.finish()?;
    Ok(block)
}

fn parse_algo(mut s: Section, kind: AlgoKind) -> Result<AlgoBlock> {
    let mode = match s.take_str("mode") {
        None => AlgoMode::Practical,
        Some((_, m)) if m == "practical" => AlgoMode::Practical,
        Some((_, m)) if m == "theorem" => AlgoMode::Theorem,
        Some((line, m)) => return Err(s.err("mode", line, format!("expected practical | theorem, got {m:?}"))),
    };
    let k = s.take("K")?;
    let params = match kind {
        AlgoKind::Mrbo => {
            let mut b = MrboBlock::default();
            s.set("gamma", &mut b.gamma)?;
            b.lambda = s.take("lambda")?;
            s.set("c1", &mut b.c1)?;
            s.set("c2", &mut b.c2)?;
            s.set("m", &mut b.m)?;
            s.set("d", &mut b.d)?;
            s.set("S", &mut b.s)?;
            s.set("eta", &mut b.eta)?;
            s.set("Q", &mut b.q)?;
            s.set_bool("independent_prev_batches", &mut b.independent_prev_batches)?;
            AlgoParams::Mrbo(b)
        }
        AlgoKind::Vrbo => {
            let mut b = VrboBlock::default();
            s.set("alpha", &mut b.alpha)?;
            s.set("beta", &mut b.beta)?;
            s.set("S1", &mut b.s1)?;
            s.set("S2", &mut b.s2)?;
            s.set("q", &mut b.period)?;
            s.set("m_inner", &mut b.m_inner)?;
            s.set("eta", &mut b.eta)?;
            s.set("Q", &mut b.q)?;
            if let Some((line, v)) = s.take_str("inner_reading") {
                b.reading = match v.as_str() {
                    "literal" => InnerLoopReading::Literal,
                    "m_plus_one" => InnerLoopReading::MPlusOne,
                    _ => return Err(s.err("inner_reading", line, "expected literal | m_plus_one")),
                };
            }
            AlgoParams::Vrbo(b)
        }
        AlgoKind::Stocbio => {
            let mut b = StocbioBlock::default();
            s.set("alpha_out", &mut b.alpha_out)?;
            s.set("beta_in", &mut b.beta_in)?;
            s.set("T_inner", &mut b.t_inner)?;
            s.set("S", &mut b.s)?;
            s.set("eta", &mut b.eta)?;
            s.set("Q", &mut b.q)?;
            AlgoParams::Stocbio(b)
        }
    };
    s.finish()?;
    Ok(AlgoBlock { kind, mode, k, params })
}

fn parse_run(mut s: Section) -> Result<RunBlock> {
    let mut r = RunBlock::default();
    if let Some((line, v)) = s.take_str("seeds") {
        r.seeds = v
            .split(',')
            .map(|t| t.trim().parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| s.err("seeds", line, format!("expected comma-separated integers, got {v:?}")))?;
    }
    s.set("K", &mut r.k)?;
    r.wall_budget_ms = s.take("wall_budget_ms")?;
    if let Some((_, v)) = s.take_str("output_dir") {
        r.output_dir = PathBuf::from(v);
    }
    s.set_bool("trace_inner", &mut r.trace_inner)?;
    s.set("flush_every", &mut r.flush_every)?;
    s.set_bool("diagnostics", &mut r.diagnostics)?;
    s.set_bool("empirical_constants", &mut r.empirical_constants)?;
    s.set("constants_radius", &mut r.constants_radius)?;
    s.set("x0", &mut r.x0)?;
    s.set("y0", &mut r.y0)?;
    s.set("parallelism", &mut r.parallelism)?;
    s.finish()?;
    Ok(r)
}

/// Parses and validates a config from text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut problem = None;
    let mut algos = Vec::new();
    let mut run = None;
    for s in split_sections(text)? {
        match s.name.as_str() {
            "problem" => problem = Some(parse_problem(s)?),
            "run" => run = Some(parse_run(s)?),
            name => {
                let algo = name.strip_prefix("algo.").ok_or_else(|| BilevelError::Config {
                    line: s.line,
                    key: name.to_string(),
                    message: "unknown section".to_string(),
                })?;
                let kind = match algo {
                    "mrbo" => AlgoKind::Mrbo,
                    "vrbo" => AlgoKind::Vrbo,
                    "stocbio" => AlgoKind::Stocbio,
                    _ => {
                        return Err(BilevelError::Config {
                            line: s.line,
                            key: name.to_string(),
                            message: "unknown algorithm (mrbo | vrbo | stocbio)".to_string(),
                        })
                    }
                };
                algos.push(parse_algo(s, kind)?);
            }
        }
    }
    let problem = problem.ok_or_else(|| BilevelError::Config {
        line: 0,
        key: "problem".to_string(),
        message: "missing [problem] section".to_string(),
    })?;
    let config = ExperimentConfig {
        problem,
        algos,
        run: run.unwrap_or_default(),
    };
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}
