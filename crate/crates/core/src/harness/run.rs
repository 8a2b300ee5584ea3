use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::config::{AlgoBlock, AlgoMode, AlgoParams, ExperimentConfig, ProblemBlock, RunBlock};
use super::trace::{TraceRow, TraceWriter};
use crate::error::{BilevelError, Result};
use crate::hypergrad::{HypergradConfig, SamplingMode};
use crate::numerics::{RngStream, Vector};
use crate::optimizers::{
    run_mrbo, run_stocbio, run_vrbo, Flow, MrboConfig, MrboHyperparams, StepObserver, StepView, StocbioConfig,
    VrboConfig,
};
use crate::problems::{
    generate_hyperclean_dataset, load_dataset_csv, make_hyperclean_problem, make_quadratic_problem, BilevelOracle,
    HypercleanProblem, HypercleanSpec, QuadraticProblem, QuadraticSpec, Split,
};
use crate::theory::{
    compute_diagnostics, derive_constants, derive_mrbo_hyperparams, derive_vrbo_hyperparams,
    estimate_constants_empirical, stationarity_measure, SmoothnessConstants,
};

/// Points sampled when estimating constants empirically.
const EMPIRICAL_POINTS: usize = 1000;

pub enum ProblemInstance {
    Quadratic(QuadraticProblem),
    Hyperclean(HypercleanProblem),
}

impl ProblemInstance {
    pub fn oracle(&self) -> &dyn BilevelOracle {
        match self {
            ProblemInstance::Quadratic(p) => p,
            ProblemInstance::Hyperclean(p) => p,
        }
    }
}

pub fn build_problem(block: &ProblemBlock) -> Result<ProblemInstance> {
    match block {
        ProblemBlock::Quadratic(b) => Ok(ProblemInstance::Quadratic(make_quadratic_problem(&QuadraticSpec {
            p: b.p,
            q: b.q,
            mu: b.mu,
            l_inner: b.l_inner,
            noise_scale: b.noise_scale,
            n_samples: b.n_samples,
            target: None,
            c_x: b.c_x,
            coupling_norm: b.coupling_norm,
            seed: b.seed,
        })?)),
        ProblemBlock::Hyperclean(b) => {
            let dataset = match &b.dataset {
                Some(path) => load_dataset_csv(path)?,
                None => generate_hyperclean_dataset(b.n_train, b.n_val, b.n_test, b.d, b.p_corrupt, b.data_seed)?,
            };
            Ok(ProblemInstance::Hyperclean(make_hyperclean_problem(&HypercleanSpec {
                dataset,
                ridge: b.ridge,
            })?))
        }
    }
}

fn start_points(oracle: &dyn BilevelOracle, run: &RunBlock) -> (Vector, Vector) {
    (
        Vector::filled(oracle.outer_dim(), run.x0),
        Vector::filled(oracle.inner_dim(), run.y0),
    )
}

/// Constants for theorem mode: closed form on the quadratic family, sampled
/// on the hyper-cleaning family when enabled.
pub fn resolve_constants(instance: &ProblemInstance, run: &RunBlock) -> Result<SmoothnessConstants> {
    let oracle = instance.oracle();
    let (x0, y0) = start_points(oracle, run);
    match instance {
        ProblemInstance::Quadratic(p) => {
            let yc = p.solve_inner_exact(&x0)?;
            Ok(p.smoothness_constants(&x0, &yc, run.constants_radius))
        }
        ProblemInstance::Hyperclean(p) => {
            if !run.empirical_constants {
                return Err(BilevelError::unsupported(
                    "hyper-cleaning constants are only available with empirical_constants = true",
                ));
            }
            estimate_constants_empirical(
                p,
                &x0,
                &y0,
                run.constants_radius,
                EMPIRICAL_POINTS,
                &RngStream::new(0, "constants"),
            )
        }
    }
}

enum Driver {
    Mrbo(MrboConfig),
    Vrbo(VrboConfig),
    Stocbio(StocbioConfig),
}

impl Driver {
    fn estimator(&self) -> &HypergradConfig {
        match self {
            Driver::Mrbo(c) => &c.params.hypergrad,
            Driver::Vrbo(c) => &c.hypergrad,
            Driver::Stocbio(c) => &c.hypergrad,
        }
    }
}

fn build_driver(
    instance: &ProblemInstance,
    config: &ExperimentConfig,
    algo: &AlgoBlock,
    constants: Option<&SmoothnessConstants>,
    seed: u64,
) -> Result<Driver> {
    let oracle = instance.oracle();
    let (x0, mut y0) = start_points(oracle, &config.run);
    let k = algo.k.unwrap_or(config.run.k);
    let need = || constants.ok_or_else(|| BilevelError::invalid("theorem mode needs problem constants"));
    Ok(match &algo.params {
        AlgoParams::Mrbo(b) => {
            let params = match algo.mode {
                AlgoMode::Theorem => {
                    let c = need()?;
                    if oracle.has_exact_inner_solution() {
                        y0 = oracle.solve_inner_exact(&x0)?;
                    }
                    let lambda = b.lambda.unwrap_or(1.0 / (6.0 * c.l));
                    derive_mrbo_hyperparams(c, b.d, lambda, b.gamma, b.eta, b.q, b.s, k)?
                }
                AlgoMode::Practical => MrboHyperparams {
                    gamma: b.gamma,
                    lambda: b.lambda.unwrap_or(0.1),
                    c1: b.c1,
                    c2: b.c2,
                    m: b.m,
                    d: b.d,
                    k,
                    hypergrad: HypergradConfig::new(b.eta, b.q, SamplingMode::SharedBatch, b.s),
                },
            };
            let mut c = MrboConfig::new(params, x0, y0, seed);
            c.independent_prev_batches = b.independent_prev_batches;
            Driver::Mrbo(c)
        }
        AlgoParams::Vrbo(b) => {
            let (alpha, beta, m_inner, period) = match algo.mode {
                AlgoMode::Theorem => {
                    let t = derive_vrbo_hyperparams(need()?, b.eta, b.q, b.s2)?;
                    (t.alpha, t.beta, t.m_inner, t.period)
                }
                AlgoMode::Practical => (b.alpha, b.beta, b.m_inner, b.period),
            };
            Driver::Vrbo(VrboConfig {
                alpha,
                beta,
                s1: b.s1,
                s2: b.s2,
                period,
                m_inner,
                k,
                hypergrad: HypergradConfig::new(b.eta, b.q, SamplingMode::PerSample, b.s2),
                x0,
                y0,
                seed,
                reading: b.reading,
                log_inner: config.run.trace_inner,
            })
        }
        AlgoParams::Stocbio(b) => Driver::Stocbio(StocbioConfig {
            alpha_out: b.alpha_out,
            beta_in: b.beta_in,
            t_inner: b.t_inner,
            k,
            hypergrad: HypergradConfig::new(b.eta, b.q, SamplingMode::SharedBatch, b.s),
            x0,
            y0,
            seed,
        }),
    })
}

/// Turns driver steps into trace rows. Evaluations here go to the oracle
/// it was built with, so pass an uninstrumented one when counting.
pub struct TraceRecorder<'a, W: Write> {
    oracle: &'a dyn BilevelOracle,
    estimator: HypergradConfig,
    run_id: String,
    algo: String,
    seed: u64,
    start: Instant,
    writer: TraceWriter<W>,
    diagnostics: bool,
    budget_ms: Option<u64>,
    last: Option<TraceRow>,
    min_grad_norm_sq: Option<f64>,
}

impl<'a, W: Write> TraceRecorder<'a, W> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        oracle: &'a dyn BilevelOracle,
        estimator: HypergradConfig,
        run_id: &str,
        algo: &str,
        seed: u64,
        writer: TraceWriter<W>,
        diagnostics: bool,
        budget_ms: Option<u64>,
    ) -> Self {
        TraceRecorder {
            oracle,
            estimator,
            run_id: run_id.to_string(),
            algo: algo.to_string(),
            seed,
            start: Instant::now(),
            writer,
            diagnostics,
            budget_ms,
            last: None,
            min_grad_norm_sq: None,
        }
    }

    pub fn rows(&self) -> usize {
        self.writer.rows()
    }

    pub fn last_row(&self) -> Option<&TraceRow> {
        self.last.as_ref()
    }

    pub fn min_grad_norm_sq(&self) -> Option<f64> {
        self.min_grad_norm_sq
    }

    pub fn finish(self) -> Result<W> {
        self.writer.finish()
    }
}

impl<W: Write> StepObserver for TraceRecorder<'_, W> {
    fn observe(&mut self, view: &StepView<'_>) -> Result<Flow> {
        let o = self.oracle;
        let grad_norm_sq = stationarity_measure(o, view.x, false).ok();
        let diag = if self.diagnostics {
            compute_diagnostics(o, view.x, view.y, view.v, view.u, &self.estimator)
        } else {
            Default::default()
        };
        let wall_ms = self.start.elapsed().as_millis() as u64;
        let row = TraceRow {
            run_id: self.run_id.clone(),
            algo: self.algo.clone(),
            seed: self.seed,
            k: view.k,
            samples_cum: view.samples_used,
            wall_ms,
            train_loss: o.loss(view.x, view.y, Split::Train)?,
            val_loss: o.loss(view.x, view.y, Split::Validation)?,
            grad_norm_sq,
            eps_bar_sq: diag.eps_bar_sq,
            delta_cap: diag.delta_cap,
            delta_small: diag.delta_small,
            tracking_sq: diag.tracking_sq,
        };
        self.writer.write_row(&row)?;
        if let Some(g) = grad_norm_sq {
            self.min_grad_norm_sq = Some(self.min_grad_norm_sq.map_or(g, |m| m.min(g)));
        }
        self.last = Some(row);
        match self.budget_ms {
            Some(b) if wall_ms >= b => Ok(Flow::Stop),
            _ => Ok(Flow::Continue),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellStatus {
    Ok,
    Diverged { step: usize },
    Failed(String),
}

impl CellStatus {
    fn label(&self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Diverged { .. } => "diverged",
            CellStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub run_id: String,
    pub algo: String,
    pub seed: u64,
    pub status: CellStatus,
    pub rows: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub min_grad_norm_sq: Option<f64>,
    /// `samples_cum` of the last trace row.
    pub total_samples: u64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSummary {
    pub cells: Vec<CellSummary>,
}

impl ExperimentSummary {
    pub fn total_samples(&self) -> u64 {
        self.cells.iter().map(|c| c.total_samples).sum()
    }

    /// 0 if every cell succeeded, 3 if any diverged, 1 for other failures.
    pub fn exit_code(&self) -> i32 {
        if self.cells.iter().any(|c| matches!(c.status, CellStatus::Diverged { .. })) {
            3
        } else if self.cells.iter().any(|c| c.status != CellStatus::Ok) {
            1
        } else {
            0
        }
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::from(
            "run_id,algo,seed,status,rows,final_train_loss,final_val_loss,min_grad_norm_sq,total_samples,wall_ms,error\n",
        );
        for c in &self.cells {
            let error = match &c.status {
                CellStatus::Ok => String::new(),
                CellStatus::Diverged { step } => format!("diverged at step {step}"),
                CellStatus::Failed(m) => m.replace([',', '\n'], " "),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.run_id,
                c.algo,
                c.seed,
                c.status.label(),
                c.rows,
                opt(c.final_train_loss),
                opt(c.final_val_loss),
                opt(c.min_grad_norm_sq),
                c.total_samples,
                c.wall_ms,
                error
            );
        }
        s
    }
}

/// Runs one (algorithm, seed) cell, writing its trace to `trace_path`.
/// Failures are captured in the returned summary.
pub fn run_cell(
    instance: &ProblemInstance,
    config: &ExperimentConfig,
    algo: &AlgoBlock,
    constants: Option<&SmoothnessConstants>,
    seed: u64,
    trace_path: &Path,
) -> CellSummary {
    let run_id = format!("{}-s{seed}", algo.kind);
    let start = Instant::now();
    let mut summary = CellSummary {
        run_id: run_id.clone(),
        algo: algo.kind.to_string(),
        seed,
        status: CellStatus::Ok,
        rows: 0,
        final_train_loss: None,
        final_val_loss: None,
        min_grad_norm_sq: None,
        total_samples: 0,
        wall_ms: 0,
    };
    let outcome = (|| -> Result<()> {
        let driver = build_driver(instance, config, algo, constants, seed)?;
        let file = BufWriter::new(File::create(trace_path)?);
        let writer = TraceWriter::new(file, config.run.flush_every);
        let oracle = instance.oracle();
        let mut rec = TraceRecorder::new(
            oracle,
            driver.estimator().clone(),
            &run_id,
            algo.kind.as_str(),
            seed,
            writer,
            config.run.diagnostics,
            config.run.wall_budget_ms,
        );
        let result = match &driver {
            Driver::Mrbo(c) => run_mrbo(c, oracle, &mut rec).map(drop),
            Driver::Vrbo(c) => run_vrbo(c, oracle, &mut rec).map(drop),
            Driver::Stocbio(c) => run_stocbio(c, oracle, &mut rec).map(drop),
        };
        summary.rows = rec.rows();
        summary.min_grad_norm_sq = rec.min_grad_norm_sq();
        if let Some(last) = rec.last_row() {
            summary.final_train_loss = Some(last.train_loss);
            summary.final_val_loss = Some(last.val_loss);
            summary.total_samples = last.samples_cum;
        }
        rec.finish()?;
        result
    })();
    summary.status = match outcome {
        Ok(()) => CellStatus::Ok,
        Err(BilevelError::Divergence { step, .. }) => CellStatus::Diverged { step },
        Err(e) => CellStatus::Failed(e.to_string()),
    };
    summary.wall_ms = start.elapsed().as_millis() as u64;
    summary
}

/// Runs every (algorithm, seed) cell, writes `<run_id>.csv` per cell and
/// `summary.csv` into the output directory. Cell failures do not stop the
/// remaining cells; setup failures (problem, constants, I/O on the output
/// directory) are returned as errors.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let instance = build_problem(&config.problem)?;
    let constants = if config.algos.iter().any(|a| a.mode == AlgoMode::Theorem) {
        Some(resolve_constants(&instance, &config.run)?)
    } else {
        None
    };
    std::fs::create_dir_all(&config.run.output_dir)?;
    let cells: Vec<(&AlgoBlock, u64)> = config
        .algos
        .iter()
        .flat_map(|a| config.run.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Mutex<Vec<Option<CellSummary>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    let workers = config.run.parallelism.min(cells.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(algo, seed)) = cells.get(i) else { break };
                let path = config.run.output_dir.join(format!("{}-s{seed}.csv", algo.kind));
                let summary = run_cell(&instance, config, algo, constants.as_ref(), seed, &path);
                log::info!("{} finished: {}", summary.run_id, summary.status.label());
                results.lock().expect("summary lock")[i] = Some(summary);
            });
        }
    });
    let cells: Vec<CellSummary> = results
        .into_inner()
        .expect("summary lock")
        .into_iter()
        .map(|c| c.expect("every cell ran"))
        .collect();
    let summary = ExperimentSummary { cells };
    std::fs::write(config.run.output_dir.join("summary.csv"), summary.to_csv())?;
    Ok(summary)
}

/// Human-readable constants and theorem-mode hyperparameters of a config.
pub fn describe_constants(config: &ExperimentConfig) -> Result<String> {
    let instance = build_problem(&config.problem)?;
    let c = resolve_constants(&instance, &config.run)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "constants: mu={} L={} M={} tau={} rho={} sigma={}",
        c.mu, c.l, c.m, c.tau, c.rho, c.sigma
    );
    for algo in &config.algos {
        let (eta, q, batch) = match &algo.params {
            AlgoParams::Mrbo(b) => (b.eta, b.q, b.s),
            AlgoParams::Vrbo(b) => (b.eta, b.q, b.s2),
            AlgoParams::Stocbio(b) => (b.eta, b.q, b.s),
        };
        let _ = writeln!(s, "[{}]", algo.kind);
        match derive_constants(&c, eta, q, batch) {
            Ok(d) => {
                let _ = writeln!(
                    s,
                    "  L_phi={} L_Q={} L_prime={} C_Q={} G_sq={} sigma_prime_sq={}",
                    d.l_phi, d.l_q, d.l_prime, d.c_q, d.g_sq, d.sigma_prime_sq
                );
            }
            Err(e) => {
                let _ = writeln!(s, "  derived constants unavailable: {e}");
            }
        }
        if algo.mode != AlgoMode::Theorem {
            continue;
        }
        match build_driver(&instance, config, algo, Some(&c), 0) {
            Ok(Driver::Mrbo(m)) => {
                let p = &m.params;
                let _ = writeln!(
                    s,
                    "  gamma={} lambda={} c1={} c2={} m={} d={} K={}",
                    p.gamma, p.lambda, p.c1, p.c2, p.m, p.d, p.k
                );
                let gap = match &instance {
                    ProblemInstance::Quadratic(qp) => qp
                        .phi(&m.x0)
                        .ok()
                        .zip(qp.minimizer().and_then(|x| qp.phi(&x).ok()))
                        .map(|(a, b)| a - b),
                    ProblemInstance::Hyperclean(_) => None,
                };
                if let Some(gap) = gap {
                    if let Ok(mp) = crate::theory::mrbo_rate_constant(&c, p, gap) {
                        let _ = writeln!(s, "  M_prime={mp}");
                    }
                }
            }
            Ok(Driver::Vrbo(v)) => {
                let _ = writeln!(
                    s,
                    "  alpha={} beta={} m_inner={} q={}",
                    v.alpha, v.beta, v.m_inner, v.period
                );
                if let Ok(l2) = crate::theory::vrbo_l_double_prime(&c, v.hypergrad.eta, v.hypergrad.q, v.alpha) {
                    let _ = writeln!(s, "  L_double_prime={}", l2.map_or("undefined".to_string(), |v| v.to_string()));
                }
            }
            Ok(Driver::Stocbio(_)) => {}
            Err(e) => {
                let _ = writeln!(s, "  theorem hyperparameters unavailable: {e}");
            }
        }
    }
    Ok(s)
}
