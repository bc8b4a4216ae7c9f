//! Command implementations shared by the binary and the tests.

use std::path::{Path, PathBuf};

use binquant_core::factorization::{BinaryFactorization, EffectiveGrams, SignMatrix};
use binquant_core::numerics::{DenseMatrix, GramBundle};
use binquant_core::pipeline::{analyze_with, end_to_end_mse, Calibration, Model, PathNoise};
use binquant_core::solver::{
    block_ranges, solve_block, solve_with, BlockSolution, QuantizedMatrix, SolverConfig,
};
use binquant_core::synth::synth_instance;
use binquant_core::tensor::{TensorData, TensorFile};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CalibConfig, RunConfig, SynthCalib};
use crate::error::{RunError, RunResult};
use crate::io::{read_matrix, read_tensor, write_atomic, write_matrix, write_tensor};
use crate::report::{metric_rows, trace_rows, write_csv, CsvRow, LayerSummary, Summary};

pub const THREADS_ENV: &str = "BINQUANT_THREADS";
pub const WEIGHT_FILE: &str = "weight.bqt";
pub const X_FILE: &str = "x.bqt";
pub const X_HAT_FILE: &str = "x_hat.bqt";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SIDECAR_FILE: &str = "factorization.json";

/// How column blocks are scheduled. Results do not depend on the choice.
pub enum Parallelism {
    Sequential,
    /// Rayon's global pool.
    Global,
    Pool(rayon::ThreadPool),
}

impl Parallelism {
    /// Reads `BINQUANT_THREADS`: unset uses all cores, 0 runs sequentially,
    /// any other count caps the worker pool.
    pub fn from_env() -> RunResult<Self> {
        match std::env::var(THREADS_ENV) {
            Err(_) => Ok(Self::Global),
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(0) => Ok(Self::Sequential),
                Ok(n) => Self::threads(n),
                Err(_) => Err(RunError::user(
                    "env",
                    format!("{THREADS_ENV}: expected a non-negative integer, got {v:?}"),
                )),
            },
        }
    }

    pub fn threads(n: usize) -> RunResult<Self> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(Self::Pool)
            .map_err(|e| RunError::internal("env", e))
    }

    /// Same contract as `solve_with`, with blocks spread over workers.
    pub fn solve(
        &self,
        w: &DenseMatrix,
        grams: &EffectiveGrams,
        config: &SolverConfig,
    ) -> binquant_core::Result<QuantizedMatrix> {
        match self {
            Self::Sequential => solve_with(w, grams, config),
            Self::Global => solve_parallel(w, grams, config),
            Self::Pool(p) => p.install(|| solve_parallel(w, grams, config)),
        }
    }
}

fn solve_parallel(
    w: &DenseMatrix,
    grams: &EffectiveGrams,
    config: &SolverConfig,
) -> binquant_core::Result<QuantizedMatrix> {
    config.validate()?;
    let blocks = block_ranges(w.cols(), config.block_width)
        .into_par_iter()
        .enumerate()
        .map(|(index, (start, width))| {
            let (factorization, trace) = solve_block(&w.column_block(start, width), grams, config, index)?;
            Ok(BlockSolution {
                col_start: start,
                factorization,
                trace,
            })
        })
        .collect::<binquant_core::Result<Vec<_>>>()?;
    Ok(QuantizedMatrix {
        d_in: w.rows(),
        d_out: w.cols(),
        block_width: config.block_width,
        blocks,
    })
}

/// `synth`: writes `weight.bqt`, `x.bqt` and `x_hat.bqt` into `out_dir`.
pub fn synth(seed: u64, d_in: usize, d_out: usize, n: usize, noise: f64, out_dir: &Path) -> RunResult<Vec<PathBuf>> {
    if d_in == 0 || d_out == 0 || n == 0 {
        return Err(RunError::user("synth", "d_in, d_out and n must be at least 1"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(RunError::user("synth", "noise: must be finite and non-negative"));
    }
    let s = synth_instance(seed, d_in, d_out, n, noise);
    let mut written = Vec::new();
    for (name, m) in [(WEIGHT_FILE, &s.weight), (X_FILE, &s.x), (X_HAT_FILE, &s.x_hat)] {
        let p = out_dir.join(name);
        write_matrix(&p, m).map_err(|e| RunError::user("write", e))?;
        written.push(p);
    }
    Ok(written)
}

fn synth_seed(cfg: &RunConfig, s: &SynthCalib) -> u64 {
    s.seed.unwrap_or(cfg.seed)
}

fn load_layer(cfg: &RunConfig) -> RunResult<(DenseMatrix, GramBundle)> {
    let calib = cfg
        .calib
        .as_ref()
        .ok_or_else(|| RunError::user("config", "calib: required"))?;
    let (w, x, x_hat) = match calib {
        CalibConfig::Dir(dir) => {
            let read = |name| read_matrix(&dir.join(name)).map_err(|e| RunError::user("calib", e));
            (read(WEIGHT_FILE)?, read(X_FILE)?, read(X_HAT_FILE)?)
        }
        CalibConfig::Synth(s) => {
            let (d_in, d_out) = match (s.d_in, s.d_out) {
                (Some(a), Some(b)) if a > 0 && b > 0 && s.n > 0 => (a, b),
                _ => return Err(RunError::user("config", "calib: d_in, d_out and n must be at least 1")),
            };
            if !(s.noise >= 0.0 && s.noise.is_finite()) {
                return Err(RunError::user("config", "calib.noise: must be finite and non-negative"));
            }
            let inst = synth_instance(synth_seed(cfg, s), d_in, d_out, s.n, s.noise);
            (inst.weight, inst.x, inst.x_hat)
        }
    };
    let bundle = GramBundle::from_activations(&x, &x_hat).map_err(|e| RunError::core("calib", e))?;
    if bundle.dim() != w.rows() {
        return Err(RunError::user(
            "calib",
            format!("activation width {} does not match weight rows {}", bundle.dim(), w.rows()),
        ));
    }
    Ok((w, bundle))
}

fn load_calibration(cfg: &RunConfig, model: &Model) -> RunResult<Calibration> {
    match cfg.calib.as_ref() {
        None => Err(RunError::user("config", "calib: required")),
        Some(CalibConfig::Dir(dir)) => {
            let x0 = read_matrix(&dir.join(X_FILE)).map_err(|e| RunError::user("calib", e))?;
            Ok(Calibration {
                tokens_per_sample: x0.rows(),
                x0,
                path_noise: PathNoise::default(),
            })
        }
        Some(CalibConfig::Synth(s)) => {
            if s.samples == 0 || s.tokens == 0 {
                return Err(RunError::user("config", "calib: samples and tokens must be at least 1"));
            }
            if !(s.noise >= 0.0 && s.noise.is_finite()) {
                return Err(RunError::user("config", "calib.noise: must be finite and non-negative"));
            }
            Ok(Calibration::synthesize(synth_seed(cfg, s), s.samples, s.tokens, model.d_in(), s.noise))
        }
    }
}

/// Sidecar describing one layer's factorization files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub layer: usize,
    pub role: String,
    pub mode: String,
    pub amp: String,
    pub seed: u64,
    pub d_in: usize,
    pub d_out: usize,
    pub block_width: usize,
    pub blocks: Vec<SidecarBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarBlock {
    pub block: usize,
    pub col_start: usize,
    pub width: usize,
    pub alpha_r: String,
    pub alpha_c: String,
    pub signs: String,
}

pub fn layer_dir(out_dir: &Path, layer: usize) -> PathBuf {
    out_dir.join(format!("layer_{layer:03}"))
}

fn write_factorization(dir: &Path, q: &QuantizedMatrix, sidecar_base: Sidecar) -> RunResult<()> {
    let mut sidecar = sidecar_base;
    for (b, sol) in q.blocks.iter().enumerate() {
        let f = &sol.factorization;
        let names = SidecarBlock {
            block: b,
            col_start: sol.col_start,
            width: sol.width(),
            alpha_r: format!("block_{b:04}.alpha_r.bqt"),
            alpha_c: format!("block_{b:04}.alpha_c.bqt"),
            signs: format!("block_{b:04}.signs.bqt"),
        };
        let signs = TensorFile::new(
            vec![f.d_in() as u64, f.d_out() as u64],
            TensorData::Sign(f.signs.as_slice().to_vec()),
        )
        .map_err(|e| RunError::internal("write", e))?;
        for (name, t) in [
            (&names.alpha_r, TensorFile::from_vector_f64(&f.alpha_r)),
            (&names.alpha_c, TensorFile::from_vector_f64(&f.alpha_c)),
            (&names.signs, signs),
        ] {
            write_tensor(&dir.join(name), &t).map_err(|e| RunError::user("write", e))?;
        }
        sidecar.blocks.push(names);
    }
    let path = dir.join(SIDECAR_FILE);
    let mut text = serde_json::to_string_pretty(&sidecar).map_err(|e| RunError::internal("write", e))?;
    text.push('\n');
    write_atomic(&path, text.as_bytes()).map_err(|e| RunError::file("write", &path, e))
}

/// Loads a layer directory back: `(sidecar, factorization per block)`.
pub fn read_factorization(dir: &Path) -> RunResult<(Sidecar, Vec<BinaryFactorization>)> {
    let path = dir.join(SIDECAR_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| RunError::file("read", &path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| RunError::file("read", &path, e))?;
    let mut out = Vec::with_capacity(sidecar.blocks.len());
    for b in &sidecar.blocks {
        let read = |name: &str| read_tensor(&dir.join(name)).map_err(|e| RunError::user("read", e));
        let alpha_r = read(&b.alpha_r)?.to_f64_vec();
        let alpha_c = read(&b.alpha_c)?.to_f64_vec();
        let signs = match read(&b.signs)?.data() {
            TensorData::Sign(v) => v.clone(),
            _ => return Err(RunError::user("read", format!("{}: expected a sign tensor", b.signs))),
        };
        let signs = SignMatrix::from_vec(sidecar.d_in, b.width, signs).map_err(|e| RunError::core("read", e))?;
        out.push(BinaryFactorization::new(alpha_r, alpha_c, signs).map_err(|e| RunError::core("read", e))?);
    }
    Ok((sidecar, out))
}

/// Paths a finished run wrote.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub summary: Summary,
}

/// `quantize`: one weight matrix against its calibration activations.
pub fn quantize(cfg: &RunConfig, par: &Parallelism) -> RunResult<RunOutput> {
    let solver = cfg.solver_config()?;
    let (w, bundle) = load_layer(cfg)?;
    let grams = EffectiveGrams::resolve(&bundle, solver.mode);
    let q = par.solve(&w, &grams, &solver).map_err(|e| RunError::core("solve", e))?;

    let out = &cfg.out_dir;
    let base = Sidecar {
        layer: 0,
        role: "plain".into(),
        mode: solver.mode.as_str().into(),
        amp: solver.amp_policy.as_str().into(),
        seed: cfg.seed,
        d_in: q.d_in,
        d_out: q.d_out,
        block_width: q.block_width,
        blocks: Vec::new(),
    };
    write_factorization(&layer_dir(out, 0), &q, base)?;
    write_csv(&out.join(TRACE_FILE), &trace_rows(0, &q))?;
    let layers = vec![LayerSummary::new(0, 0, "plain", solver.mode.as_str(), &q, cfg.scale_bits)];
    let summary = Summary::new("quantize", cfg, layers, None);
    summary.write(out)?;
    Ok(RunOutput {
        out_dir: out.clone(),
        summary,
    })
}

/// `analyze`: quantizes a model front to back, propagates both paths and
/// writes traces, metrics and per-layer factorizations.
pub fn analyze(cfg: &RunConfig, par: &Parallelism) -> RunResult<RunOutput> {
    let solver = cfg.solver_config()?;
    let model = cfg.model()?;
    let calib = load_calibration(cfg, &model)?;
    let analysis = analyze_with(&model, &calib, &solver, |w, g, c| par.solve(w, g, c))
        .map_err(|e| RunError::core("analyze", e))?;
    let mse = end_to_end_mse(&analysis.full_precision, &analysis.quantized_path)
        .map_err(|e| RunError::core("analyze", e))?;

    let out = &cfg.out_dir;
    let mut trace: Vec<CsvRow> = Vec::new();
    let mut layers = Vec::new();
    for (g, l) in analysis.quantized.layers.iter().enumerate() {
        let base = Sidecar {
            layer: g,
            role: l.role.as_str().into(),
            mode: l.mode.as_str().into(),
            amp: solver.amp_policy.as_str().into(),
            seed: cfg.seed,
            d_in: l.quantized.d_in,
            d_out: l.quantized.d_out,
            block_width: l.quantized.block_width,
            blocks: Vec::new(),
        };
        write_factorization(&layer_dir(out, g), &l.quantized, base)?;
        trace.extend(trace_rows(g, &l.quantized));
        layers.push(LayerSummary::new(
            g,
            l.block,
            l.role.as_str(),
            l.mode.as_str(),
            &l.quantized,
            cfg.scale_bits,
        ));
    }
    write_csv(&out.join(TRACE_FILE), &trace)?;
    write_csv(&out.join(METRICS_FILE), &metric_rows(&analysis.metrics))?;
    let summary = Summary::new("analyze", cfg, layers, Some(mse));
    summary.write(out)?;
    Ok(RunOutput {
        out_dir: out.clone(),
        summary,
    })
}

/// `report`: a table over one or more run directories.
pub fn report(dirs: &[PathBuf]) -> RunResult<String> {
    if dirs.is_empty() {
        return Err(RunError::user("report", "at least one run directory is required"));
    }
    let runs = dirs
        .iter()
        .map(|d| Summary::read(d).map(|s| (d.clone(), s)))
        .collect::<RunResult<Vec<_>>>()?;
    Ok(crate::report::render(&runs))
}
