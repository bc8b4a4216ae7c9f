//! Alternating closed-form refinement over column blocks.
//!
//! Each iteration refines `α_r`, then `α_c` every `k`-th round, then a
//! configurable number of single sign rows. Every proposal passes through
//! the AMP selector before it is applied.

use alloc::vec::Vec;

use crate::amp::{
    acceptance_ratio, amp_objective, amp_raw_masks, masked_update, select, AmpPolicy, Proposal,
};
use crate::error::{Error, Result};
use crate::factorization::{
    refine_b_row, AlignmentMode, AlignmentProblem, BinaryFactorization, EffectiveGrams,
    RowSelection,
};
use crate::numerics::{amp_gram, DenseMatrix, GramBundle};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub iters: usize,
    /// `α_c` is refined in iteration `t` when `(t + 1) % alpha_c_period == 0`.
    pub alpha_c_period: usize,
    pub b_rows_per_iter: usize,
    pub mode: AlignmentMode,
    pub amp_policy: AmpPolicy,
    pub block_width: usize,
    /// Stop when an iteration lowers the objective by less than this
    /// fraction. Zero runs all `iters` iterations.
    pub rel_tol: f64,
    pub seed: u64,
    pub row_selection: RowSelection,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iters: 15,
            alpha_c_period: 5,
            b_rows_per_iter: 2,
            mode: AlignmentMode::Output,
            amp_policy: AmpPolicy::Agreement,
            block_width: 128,
            rel_tol: 1e-6,
            seed: 0,
            row_selection: RowSelection::Gain,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what| Err(Error::InvalidArgument { what });
        if self.iters == 0 {
            return bad("iters must be >= 1");
        }
        if self.alpha_c_period == 0 {
            return bad("k must be >= 1");
        }
        if self.b_rows_per_iter == 0 {
            return bad("b_rows must be >= 1");
        }
        if self.block_width == 0 {
            return bad("block_size must be >= 1");
        }
        if !(self.rel_tol >= 0.0 && self.rel_tol.is_finite()) {
            return bad("rel_tol must be finite and >= 0");
        }
        Ok(())
    }

    pub fn refines_alpha_c(&self, iteration: usize) -> bool {
        (iteration + 1).is_multiple_of(self.alpha_c_period)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    AlphaR,
    AlphaC,
    BRow,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::AlphaR => "alpha_r",
            StepKind::AlphaC => "alpha_c",
            StepKind::BRow => "b_row",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub kind: StepKind,
    pub block: usize,
    /// 1-based iteration.
    pub iteration: usize,
    /// Mode objective after the step.
    pub objective: f64,
    /// Proxy objective after the step; `None` when AMP is off.
    pub amp_objective: Option<f64>,
    pub accept_ratio: f64,
    /// Degenerate `α_c` coordinates (only for `AlphaC` steps).
    pub fallbacks: usize,
    /// Updated sign row (only for `BRow` steps).
    pub row: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub block: usize,
    pub initial_objective: f64,
    pub initial_amp_objective: Option<f64>,
    pub iterations: usize,
    pub records: Vec<StepRecord>,
}

impl SolveTrace {
    pub fn final_objective(&self) -> f64 {
        self.records
            .last()
            .map_or(self.initial_objective, |r| r.objective)
    }

    pub fn mean_acceptance(&self, kind: StepKind) -> Option<f64> {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.accept_ratio)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn alpha_c_fallbacks(&self) -> usize {
        self.records.iter().map(|r| r.fallbacks).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSolution {
    pub col_start: usize,
    pub factorization: BinaryFactorization,
    pub trace: SolveTrace,
}

impl BlockSolution {
    pub fn width(&self) -> usize {
        self.factorization.d_out()
    }
}

/// A weight matrix quantized as independent column blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    pub d_in: usize,
    pub d_out: usize,
    pub block_width: usize,
    pub blocks: Vec<BlockSolution>,
}

impl QuantizedMatrix {
    pub fn reconstruct(&self) -> DenseMatrix {
        let parts: Vec<DenseMatrix> = self
            .blocks
            .iter()
            .map(|b| b.factorization.reconstruct())
            .collect();
        if parts.is_empty() {
            return DenseMatrix::zeros(self.d_in, 0);
        }
        DenseMatrix::hstack(&parts).expect("blocks share d_in")
    }

    pub fn final_objective(&self) -> f64 {
        self.blocks.iter().map(|b| b.trace.final_objective()).sum()
    }

    pub fn traces(&self) -> impl Iterator<Item = &SolveTrace> {
        self.blocks.iter().map(|b| &b.trace)
    }
}

/// Contiguous `(start, width)` column ranges of width `g` (last one may be narrower).
pub fn block_ranges(d_out: usize, g: usize) -> Vec<(usize, usize)> {
    assert!(g >= 1);
    (0..d_out)
        .step_by(g)
        .map(|s| (s, g.min(d_out - s)))
        .collect()
}

/// Storage cost in bits per weight: one sign bit per entry plus, per
/// column block, `d_in` row scales and `width` column scales of
/// `scale_bits` each.
pub fn bits_per_weight(d_in: usize, d_out: usize, g: usize, scale_bits: usize) -> f64 {
    let entries = d_in as u128 * d_out as u128;
    let scales: u128 = block_ranges(d_out, g)
        .iter()
        .map(|&(_, w)| (d_in + w) as u128)
        .sum();
    (entries + scale_bits as u128 * scales) as f64 / entries as f64
}

/// Runs the refinement loop on one column block, starting from
/// [`BinaryFactorization::init_from_weight`].
pub fn solve_block(
    w_block: &DenseMatrix,
    grams: &EffectiveGrams,
    config: &SolverConfig,
    block: usize,
) -> Result<(BinaryFactorization, SolveTrace)> {
    let init = BinaryFactorization::init_from_weight(w_block);
    solve_block_from(w_block, grams, config, block, init)
}

/// Same as [`solve_block`] with an explicit starting point.
pub fn solve_block_from(
    w_block: &DenseMatrix,
    grams: &EffectiveGrams,
    config: &SolverConfig,
    block: usize,
    init: BinaryFactorization,
) -> Result<(BinaryFactorization, SolveTrace)> {
    config.validate()?;
    if w_block.cols() > config.block_width {
        return Err(Error::InvalidArgument {
            what: "block wider than block_width",
        });
    }
    if (init.d_in(), init.d_out()) != w_block.shape() {
        return Err(Error::DimensionMismatch {
            op: "solve_block init",
            left: w_block.shape(),
            right: (init.d_in(), init.d_out()),
        });
    }
    let problem = AlignmentProblem::new(w_block.clone(), grams.clone())?;
    let amp_m = match config.amp_policy {
        AmpPolicy::Off => None,
        _ => Some(amp_gram(&grams.s, w_block)?),
    };

    let mut f = init;
    let amp_value = |f: &BinaryFactorization| -> Result<Option<f64>> {
        amp_m.as_ref().map(|m| amp_objective(f, m)).transpose()
    };
    let initial_objective = problem.objective(&f);
    if !initial_objective.is_finite() {
        return Err(Error::NonFiniteObjective { block, step: 0 });
    }
    let mut trace = SolveTrace {
        block,
        initial_objective,
        initial_amp_objective: amp_value(&f)?,
        iterations: 0,
        records: Vec::new(),
    };

    let step = |f: &mut BinaryFactorization,
                    trace: &mut SolveTrace,
                    iteration: usize,
                    kind: StepKind,
                    proposal: Proposal,
                    fallbacks: usize|
     -> Result<()> {
        let row = match &proposal {
            Proposal::BRow { row, .. } => Some(*row),
            _ => None,
        };
        let accept_ratio = match &amp_m {
            None => {
                apply_unmasked(f, proposal);
                1.0
            }
            Some(m) => {
                let raw = amp_raw_masks(f, m)?;
                let selectors = select(&raw, &proposal, f, config.amp_policy);
                *f = masked_update(f, &proposal, &selectors);
                acceptance_ratio(&selectors)
            }
        };
        let objective = problem.objective(f);
        if !objective.is_finite() {
            return Err(Error::NonFiniteObjective {
                block,
                step: trace.records.len() + 1,
            });
        }
        trace.records.push(StepRecord {
            kind,
            block,
            iteration,
            objective,
            amp_objective: amp_value(f)?,
            accept_ratio,
            fallbacks,
            row,
        });
        Ok(())
    };

    let mut previous = initial_objective;
    for t in 1..=config.iters {
        let proposal = Proposal::AlphaR(problem.refine_alpha_r(&f)?);
        step(&mut f, &mut trace, t, StepKind::AlphaR, proposal, 0)?;

        if config.refines_alpha_c(t) {
            let update = problem.refine_alpha_c(&f);
            let proposal = Proposal::AlphaC(update.alpha_c);
            step(&mut f, &mut trace, t, StepKind::AlphaC, proposal, update.fallbacks)?;
        }

        for _ in 0..config.b_rows_per_iter {
            let scores = problem.refine_b_scores(&f, config.row_selection);
            let signs = refine_b_row(&f, scores.row, &scores.scores);
            let proposal = Proposal::BRow {
                row: scores.row,
                signs,
            };
            step(&mut f, &mut trace, t, StepKind::BRow, proposal, 0)?;
        }

        trace.iterations = t;
        let current = trace.final_objective();
        if config.rel_tol > 0.0 && (previous <= 0.0 || previous - current < config.rel_tol * previous)
        {
            break;
        }
        previous = current;
    }
    Ok((f, trace))
}

fn apply_unmasked(f: &mut BinaryFactorization, proposal: Proposal) {
    match proposal {
        Proposal::AlphaR(v) => f.alpha_r = v,
        Proposal::AlphaC(v) => f.alpha_c = v,
        Proposal::BRow { row, signs } => f.signs.set_row(row, &signs),
    }
}

/// Solves every column block sequentially against mode-resolved Grams.
pub fn solve_with(
    w: &DenseMatrix,
    grams: &EffectiveGrams,
    config: &SolverConfig,
) -> Result<QuantizedMatrix> {
    config.validate()?;
    let blocks = block_ranges(w.cols(), config.block_width)
        .into_iter()
        .enumerate()
        .map(|(index, (start, width))| {
            let (factorization, trace) =
                solve_block(&w.column_block(start, width), grams, config, index)?;
            Ok(BlockSolution {
                col_start: start,
                factorization,
                trace,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedMatrix {
        d_in: w.rows(),
        d_out: w.cols(),
        block_width: config.block_width,
        blocks,
    })
}

/// Resolves the bundle for `config.mode` and solves all blocks.
pub fn solve(w: &DenseMatrix, bundle: &GramBundle, config: &SolverConfig) -> Result<QuantizedMatrix> {
    if bundle.dim() != w.rows() {
        return Err(Error::DimensionMismatch {
            op: "solve",
            left: (bundle.dim(), bundle.dim()),
            right: w.shape(),
        });
    }
    solve_with(w, &EffectiveGrams::resolve(bundle, config.mode), config)
}
