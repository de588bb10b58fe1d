//! Self-checks of the inference code and the neural layers.
//!
//! Every check compares two independent computations of the same quantity
//! on seeded random models and reports the worst discrepancy:
//!
//! * `efb`, `efb2` and `efb_cn` against brute-force enumeration, and `efb`
//!   against the classic scaled forward-backward;
//! * raw entropic tables times observation marginals against unnormalised
//!   forward/backward probabilities;
//! * posteriors under arbitrary positive per-step rescaling against the
//!   normalised recursions;
//! * table-embedded neural layers against the exact posteriors;
//! * tape gradients of every model kind and architecture against central
//!   finite differences.

use std::fmt;
use std::ops::RangeInclusive;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::embed::{hnmc2_from_entropic, hnmc_cn_from_entropic, hnmc_from_entropic, one_hot_rows};
use crate::nn::{build_model, gradient_check, ArchitectureSpec, Graph, Layer, ModelKind, ParamStore};
use crate::prob::{
    classic_fb, derive_entropic, efb, efb2, efb2_tables, efb_cn, efb_cn_tables, efb_tables, enumerate_posteriors,
    unnormalized_recursions, ChainKind, EntropicHmmParams, GenerativeHmmParams, Pass, PosteriorMatrix, Rescale, Tables,
    DEFAULT_ENUMERATION_CAP,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("--max-length {len} exceeds the enumeration cap of {cap}")]
    CapExceeded { len: usize, cap: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Deliberate corruption used to confirm that the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Feed the EFB recursions the observations rotated left by one.
    ShiftObservations,
}

/// Random models to draw: `models` of them, cycling through the state and
/// symbol counts, each tested at every length in `lengths`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGrid {
    pub states: Vec<usize>,
    pub symbols: Vec<usize>,
    pub lengths: RangeInclusive<usize>,
    pub models: usize,
    pub seed: u64,
}

impl ChainGrid {
    fn shape(&self, k: usize) -> (usize, usize) {
        let n = self.states[k % self.states.len()];
        let m = self.symbols[(k / self.states.len()) % self.symbols.len()];
        (n, m)
    }

    fn model(&self, kind: ChainKind, k: usize) -> (GenerativeHmmParams, ChaCha8Rng) {
        let (n, m) = self.shape(k);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64);
        (GenerativeHmmParams::random(kind, n, m, &mut rng), rng)
    }

    fn lengths_for(&self, kind: ChainKind) -> RangeInclusive<usize> {
        let lo = if kind == ChainKind::Hmm2 { (*self.lengths.start()).max(2) } else { *self.lengths.start() };
        lo..=*self.lengths.end()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    pub worst_error: f64,
    pub tolerance: f64,
    pub seconds: f64,
    /// Set when a computation failed outright.
    pub error: Option<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.cases > 0 && self.worst_error < self.tolerance
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{status} {:<28} cases {:>5}  worst {:.3e}  tol {:.0e}  {:.2}s",
            self.name, self.cases, self.worst_error, self.tolerance, self.seconds
        )?;
        if let Some(e) = &self.error {
            write!(f, "  error: {e}")?;
        }
        Ok(())
    }
}

/// Accumulates the worst error of one check.
struct Tracker {
    outcome: CheckOutcome,
    start: Instant,
}

impl Tracker {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Tracker {
            outcome: CheckOutcome {
                name: name.into(),
                cases: 0,
                worst_error: 0.0,
                tolerance,
                seconds: 0.0,
                error: None,
            },
            start: Instant::now(),
        }
    }

    fn record(&mut self, err: f64) {
        self.outcome.cases += 1;
        // NaN must count as a failure
        if err.is_nan() || err > self.outcome.worst_error {
            self.outcome.worst_error = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    fn finish(mut self, result: Result<(), String>) -> CheckOutcome {
        self.outcome.error = result.err();
        self.outcome.seconds = self.start.elapsed().as_secs_f64();
        self.outcome
    }
}

fn apply_fault(obs: &[usize], fault: Option<Fault>) -> Vec<usize> {
    let mut v = obs.to_vec();
    if fault == Some(Fault::ShiftObservations) {
        v.rotate_left(1);
    }
    v
}

fn entropic_posterior(kind: ChainKind, e: &EntropicHmmParams, obs: &[usize]) -> crate::prob::Result<PosteriorMatrix> {
    match kind {
        ChainKind::Hmm => efb(e, obs),
        ChainKind::Hmm2 => efb2(e, obs),
        ChainKind::HmmCn => efb_cn(e, obs),
    }
}

fn function_name(kind: ChainKind) -> &'static str {
    match kind {
        ChainKind::Hmm => "efb",
        ChainKind::Hmm2 => "efb2",
        ChainKind::HmmCn => "efb_cn",
    }
}

/// EFB posteriors of `kind` against enumeration over every hidden path.
pub fn check_enumeration(kind: ChainKind, grid: &ChainGrid, fault: Option<Fault>) -> CheckOutcome {
    let mut tr = Tracker::new(format!("{} vs enumeration", function_name(kind)), 1e-10);
    let res = (|| {
        for k in 0..grid.models {
            let (params, mut rng) = grid.model(kind, k);
            let e = derive_entropic(&params).map_err(|e| e.to_string())?;
            for len in grid.lengths_for(kind) {
                let (_, obs) = params.sample(kind, len, &mut rng).map_err(|e| e.to_string())?;
                let exact = enumerate_posteriors(kind, &params, &obs, DEFAULT_ENUMERATION_CAP).map_err(|e| e.to_string())?;
                let got = entropic_posterior(kind, &e, &apply_fault(&obs, fault)).map_err(|e| e.to_string())?;
                tr.record(got.max_abs_diff(&exact));
            }
        }
        Ok(())
    })();
    tr.finish(res)
}

/// `efb` against the textbook scaled forward-backward on plain HMMs.
pub fn check_classic(grid: &ChainGrid, fault: Option<Fault>) -> CheckOutcome {
    let mut tr = Tracker::new("efb vs classic", 1e-10);
    let res = (|| {
        for k in 0..grid.models {
            let (params, mut rng) = grid.model(ChainKind::Hmm, k);
            let e = derive_entropic(&params).map_err(|e| e.to_string())?;
            for len in grid.lengths.clone() {
                let (_, obs) = params.sample(ChainKind::Hmm, len, &mut rng).map_err(|e| e.to_string())?;
                let exact = classic_fb(&params, &obs).map_err(|e| e.to_string())?;
                let got = efb(&e, &apply_fault(&obs, fault)).map_err(|e| e.to_string())?;
                tr.record(got.max_abs_diff(&exact));
            }
        }
        Ok(())
    })();
    tr.finish(res)
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Raw entropic tables rescaled by products of observation marginals
/// against the unnormalised recursions, as relative errors:
/// `alpha_t * p(y_1)...p(y_t) = alpha'_t` and
/// `beta_t * p(y_{t+1})...p(y_T) = beta'_t`.
pub fn check_marginal_relations(kind: ChainKind, grid: &ChainGrid) -> CheckOutcome {
    let mut tr = Tracker::new(format!("{} table relations", function_name(kind)), 1e-10);
    let res = (|| {
        for k in 0..grid.models {
            let (params, mut rng) = grid.model(kind, k);
            let e = derive_entropic(&params).map_err(|e| e.to_string())?;
            let marginal = params.observation_marginal();
            for len in grid.lengths_for(kind) {
                let (_, obs) = params.sample(kind, len, &mut rng).map_err(|e| e.to_string())?;
                let prefix: Vec<f64> = obs
                    .iter()
                    .scan(1.0, |acc, &y| {
                        *acc *= marginal[y];
                        Some(*acc)
                    })
                    .collect();
                let total = prefix[len - 1];
                let suffix = |t: usize| total / prefix[t];
                let unnorm = unnormalized_recursions(kind, &params, &obs).map_err(|e| e.to_string())?;
                match (kind, unnorm) {
                    (ChainKind::Hmm2, Tables::Pair(p)) => {
                        let raw = efb2_tables(&e, &obs, Rescale::Raw).map_err(|e| e.to_string())?;
                        for t in 1..len {
                            for (a, b) in raw.alpha.index_axis(Axis(0), t).iter().zip(p.alpha.index_axis(Axis(0), t)) {
                                tr.record(rel_diff(a * prefix[t], *b));
                            }
                            for (a, b) in raw.beta.index_axis(Axis(0), t).iter().zip(p.beta.index_axis(Axis(0), t)) {
                                tr.record(rel_diff(a * suffix(t), *b));
                            }
                        }
                    }
                    (_, Tables::Chain(c)) => {
                        let raw = if kind == ChainKind::Hmm {
                            efb_tables(&e, &obs, Rescale::Raw)
                        } else {
                            efb_cn_tables(&e, &obs, Rescale::Raw)
                        }
                        .map_err(|e| e.to_string())?;
                        for t in 0..len {
                            for (a, b) in raw.alpha.row(t).iter().zip(c.alpha.row(t)) {
                                tr.record(rel_diff(a * prefix[t], *b));
                            }
                            for (a, b) in raw.beta.row(t).iter().zip(c.beta.row(t)) {
                                tr.record(rel_diff(a * suffix(t), *b));
                            }
                        }
                    }
                    _ => return Err("unexpected table layout".to_string()),
                }
            }
        }
        Ok(())
    })();
    tr.finish(res)
}

/// Posteriors under wild positive per-step rescaling (and none at all)
/// against the normalised recursions.
pub fn check_scaling_invariance(kind: ChainKind, grid: &ChainGrid) -> CheckOutcome {
    let mut tr = Tracker::new(format!("{} scaling invariance", function_name(kind)), 1e-12);
    let wild = |pass: Pass, t: usize| {
        let phase = if pass == Pass::Forward { 0.0 } else { 1.3 };
        10f64.powf(3.0 * (1.7 * t as f64 + phase).sin())
    };
    let res = (|| {
        for k in 0..grid.models {
            let (params, mut rng) = grid.model(kind, k);
            let e = derive_entropic(&params).map_err(|e| e.to_string())?;
            for len in grid.lengths_for(kind) {
                let (_, obs) = params.sample(kind, len, &mut rng).map_err(|e| e.to_string())?;
                let run = |r: Rescale<'_>| match kind {
                    ChainKind::Hmm => efb_tables(&e, &obs, r).and_then(|t| t.posterior()),
                    ChainKind::Hmm2 => efb2_tables(&e, &obs, r).and_then(|t| t.posterior()),
                    ChainKind::HmmCn => efb_cn_tables(&e, &obs, r).and_then(|t| t.posterior()),
                };
                let base = run(Rescale::Normalize).map_err(|e| e.to_string())?;
                for r in [Rescale::Raw, Rescale::Custom(&wild)] {
                    tr.record(run(r).map_err(|e| e.to_string())?.max_abs_diff(&base));
                }
            }
        }
        Ok(())
    })();
    tr.finish(res)
}

fn layer_output(layer: &Layer, rows: &[Vec<f64>]) -> crate::nn::Result<Array2<f64>> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let xs: Vec<_> = rows.iter().map(|r| g.tape.vector(r)).collect();
    let out = layer.forward(&mut g, &xs)?;
    let n = g.tape.value(out[0]).len();
    Ok(Array2::from_shape_fn((out.len(), n), |(t, i)| g.tape.value(out[t])[i]))
}

/// Neural layers whose lookup kernels encode the entropic tables of a known
/// model against the exact EFB posteriors.
pub fn check_table_embedding(kind: ChainKind, grid: &ChainGrid) -> CheckOutcome {
    let name = match kind {
        ChainKind::Hmm => "hnmc",
        ChainKind::Hmm2 => "hnmc2",
        ChainKind::HmmCn => "hnmc-cn",
    };
    let mut tr = Tracker::new(format!("{name} table embedding"), 1e-8);
    let res = (|| {
        for k in 0..grid.models {
            let (params, mut rng) = grid.model(kind, k);
            let e = derive_entropic(&params).map_err(|e| e.to_string())?;
            let layer = match kind {
                ChainKind::Hmm => hnmc_from_entropic(&e).map(Layer::Hnmc),
                ChainKind::Hmm2 => hnmc2_from_entropic(&e).map(Layer::Hnmc2),
                ChainKind::HmmCn => hnmc_cn_from_entropic(&e).map(Layer::HnmcCn),
            }
            .map_err(|e| e.to_string())?;
            for len in grid.lengths_for(kind) {
                let (_, obs) = params.sample(kind, len, &mut rng).map_err(|e| e.to_string())?;
                let exact = entropic_posterior(kind, &e, &obs).map_err(|e| e.to_string())?;
                let got = layer_output(&layer, &one_hot_rows(&obs, params.n_obs())).map_err(|e| e.to_string())?;
                let err = got.iter().zip(exact.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                tr.record(err);
            }
        }
        Ok(())
    })();
    tr.finish(res)
}

/// Shape of the gradient check problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradGrid {
    pub length: usize,
    pub embedding_dim: usize,
    pub n_states: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradGrid {
    fn default() -> Self {
        GradGrid {
            length: 5,
            embedding_dim: 4,
            n_states: 3,
            step: 1e-5,
            seed: 0,
        }
    }
}

/// Tape gradients of one model kind at architectures 1 to 3 against
/// central finite differences, as relative errors.
pub fn check_gradients(kind: ModelKind, grid: &GradGrid) -> CheckOutcome {
    let mut tr = Tracker::new(format!("{kind} gradients"), 1e-4);
    let res = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
        for arch in 1..=3u8 {
            let spec = ArchitectureSpec::new(kind, arch, grid.n_states, grid.n_states, grid.embedding_dim);
            let model = build_model(&spec, grid.seed + u64::from(arch)).map_err(|e| e.to_string())?;
            let inputs: Vec<Vec<f64>> = (0..grid.length)
                .map(|_| (0..grid.embedding_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let labels: Vec<usize> = (0..grid.length).map(|_| rng.random_range(0..grid.n_states)).collect();
            let report = gradient_check(&model, &inputs, &labels, grid.step).map_err(|e| e.to_string())?;
            tr.record(report.max_rel_error);
        }
        Ok(())
    })();
    tr.finish(res)
}

/// Options of the full suite.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Random models per inference check.
    pub models: usize,
    pub seed: u64,
    pub max_states: usize,
    pub max_length: usize,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            models: 100,
            seed: 0,
            max_states: 4,
            max_length: 6,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }
}

/// Runs every check. The complexified-noise enumeration uses at most three
/// states, binary observations and length five, where it stays cheap.
pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport, VerifyError> {
    if opts.max_length > DEFAULT_ENUMERATION_CAP {
        return Err(VerifyError::CapExceeded {
            len: opts.max_length,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    if opts.max_states < 2 || opts.max_length < 2 || opts.models == 0 {
        return Err(VerifyError::Invalid(
            "need at least 2 states, length 2 and one model".into(),
        ));
    }
    let grid = ChainGrid {
        states: (2..=opts.max_states).collect(),
        symbols: vec![2, 3],
        lengths: 1..=opts.max_length,
        models: opts.models,
        seed: opts.seed,
    };
    let cn_grid = ChainGrid {
        states: (2..=opts.max_states.min(3)).collect(),
        symbols: vec![2],
        lengths: 1..=opts.max_length.min(5),
        ..grid.clone()
    };
    let small = ChainGrid {
        models: opts.models.min(20),
        ..grid.clone()
    };
    let small_cn = ChainGrid {
        models: opts.models.min(20),
        ..cn_grid.clone()
    };
    let mut checks = vec![
        check_enumeration(ChainKind::Hmm, &grid, opts.fault),
        check_enumeration(ChainKind::Hmm2, &grid, opts.fault),
        check_enumeration(ChainKind::HmmCn, &cn_grid, opts.fault),
        check_classic(&small, opts.fault),
    ];
    for kind in ChainKind::ALL {
        checks.push(check_marginal_relations(kind, if kind == ChainKind::HmmCn { &small_cn } else { &small }));
    }
    for kind in ChainKind::ALL {
        checks.push(check_scaling_invariance(kind, &small));
    }
    for kind in ChainKind::ALL {
        checks.push(check_table_embedding(kind, &small));
    }
    let gg = GradGrid {
        seed: opts.seed,
        ..GradGrid::default()
    };
    for kind in ModelKind::ALL {
        checks.push(check_gradients(kind, &gg));
    }
    Ok(VerifyReport { checks })
}
