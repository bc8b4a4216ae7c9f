//! Toy layer stacks, dual-path propagation and front-to-back quantization.
//!
//! A block is a chain of linear layers. The block's nonlinearity is applied
//! between consecutive layers (not after the last one); the residual, when
//! enabled, adds the block input to the last layer's output; row
//! normalization then rescales every output row to unit length.

mod metrics;

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::factorization::{AlignmentMode, EffectiveGrams};
use crate::math;
use crate::numerics::{DenseMatrix, GramAccumulator, GramBundle};
use crate::solver::{solve_with, QuantizedMatrix, SolverConfig};
use crate::synth::SplitMix64;

pub use metrics::{
    cosine_metrics, end_to_end_mse, error_metrics, mean_row_cosine, token_similarity_error,
    MetricRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Query,
    Key,
    Value,
    AttnOut,
    FcUp,
    FinalFc,
    Plain,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Query => "query",
            Role::Key => "key",
            Role::Value => "value",
            Role::AttnOut => "attn_out",
            Role::FcUp => "fc_up",
            Role::FinalFc => "final_fc",
            Role::Plain => "plain",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "query" => Role::Query,
            "key" => Role::Key,
            "value" => Role::Value,
            "attn_out" => Role::AttnOut,
            "fc_up" => Role::FcUp,
            "final_fc" => Role::FinalFc,
            "plain" => Role::Plain,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nonlinearity {
    #[default]
    Identity,
    Relu,
}

impl Nonlinearity {
    fn apply(self, m: &DenseMatrix) -> DenseMatrix {
        match self {
            Nonlinearity::Identity => m.clone(),
            Nonlinearity::Relu => m.map(|v| v.max(0.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub weight: DenseMatrix,
    pub role: Role,
    /// `None` inherits: `final_fc` layers use the run's mode, the rest use weight alignment.
    pub alignment: Option<AlignmentMode>,
}

impl LayerSpec {
    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn effective_mode(&self, run_mode: AlignmentMode) -> AlignmentMode {
        match (self.alignment, self.role) {
            (Some(m), _) => m,
            (None, Role::FinalFc) => run_mode,
            (None, _) => AlignmentMode::Weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub layers: Vec<LayerSpec>,
    pub nonlinearity: Nonlinearity,
    pub residual: bool,
    pub row_normalize: bool,
}

impl BlockSpec {
    fn d_in(&self) -> usize {
        self.layers.first().map_or(0, LayerSpec::d_in)
    }

    fn d_out(&self) -> usize {
        self.layers.last().map_or(0, LayerSpec::d_out)
    }
}

/// Shape of one layer for [`Model::synthesize`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlueprint {
    pub d_in: usize,
    pub d_out: usize,
    pub role: Role,
    pub alignment: Option<AlignmentMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockBlueprint {
    pub layers: Vec<LayerBlueprint>,
    pub nonlinearity: Nonlinearity,
    pub residual: bool,
    pub row_normalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub blocks: Vec<BlockSpec>,
}

impl Model {
    pub fn new(blocks: Vec<BlockSpec>) -> Result<Self> {
        let m = Self { blocks };
        m.validate()?;
        Ok(m)
    }

    /// Gaussian weights with variance `1/d_in`; layer `l` draws from stream `l`.
    pub fn synthesize(seed: u64, blueprint: &[BlockBlueprint]) -> Result<Self> {
        let mut index = 0u64;
        let blocks = blueprint
            .iter()
            .map(|b| BlockSpec {
                layers: b
                    .layers
                    .iter()
                    .map(|l| {
                        let mut rng = SplitMix64::with_stream(seed, 1000 + index);
                        index += 1;
                        let scale = 1.0 / math::sqrt(l.d_in.max(1) as f64);
                        LayerSpec {
                            weight: rng.normal_matrix(l.d_in, l.d_out).scale(scale),
                            role: l.role,
                            alignment: l.alignment,
                        }
                    })
                    .collect(),
                nonlinearity: b.nonlinearity,
                residual: b.residual,
                row_normalize: b.row_normalize,
            })
            .collect();
        Self::new(blocks)
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<usize> = None;
        for block in &self.blocks {
            if block.layers.is_empty() {
                return Err(Error::InvalidArgument {
                    what: "block without layers",
                });
            }
            for layer in &block.layers {
                if let Some(p) = prev {
                    if p != layer.d_in() {
                        return Err(Error::DimensionMismatch {
                            op: "layer chain",
                            left: (p, p),
                            right: layer.weight.shape(),
                        });
                    }
                }
                prev = Some(layer.d_out());
            }
            if block.residual && block.d_in() != block.d_out() {
                return Err(Error::InvalidArgument {
                    what: "residual block must preserve width",
                });
            }
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.blocks.first().map_or(0, BlockSpec::d_in)
    }

    pub fn layers(&self) -> impl Iterator<Item = (usize, &LayerSpec)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(b, block)| block.layers.iter().map(move |l| (b, l)))
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.iter().map(|b| b.layers.len()).sum()
    }
}

/// Additive Gaussian noise on the quantized path at every block boundary
/// after the first, standing in for error accumulated upstream.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathNoise {
    pub std: f64,
    pub seed: u64,
}

impl PathNoise {
    fn apply(&self, block: usize, m: &DenseMatrix) -> DenseMatrix {
        if block == 0 || self.std == 0.0 {
            return m.clone();
        }
        let mut rng = SplitMix64::with_stream(self.seed, 10_000 + block as u64);
        let e = rng.normal_matrix(m.rows(), m.cols());
        m.add(&e.scale(self.std)).expect("same shape")
    }
}

/// Calibration tokens: `samples × tokens_per_sample` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub x0: DenseMatrix,
    pub tokens_per_sample: usize,
    pub path_noise: PathNoise,
}

impl Calibration {
    pub fn synthesize(seed: u64, samples: usize, tokens: usize, d: usize, noise: f64) -> Self {
        let mut rng = SplitMix64::with_stream(seed, 1);
        Self {
            x0: rng.normal_matrix(samples * tokens, d),
            tokens_per_sample: tokens,
            path_noise: PathNoise {
                std: noise,
                seed: seed ^ 0x5EED,
            },
        }
    }

    pub fn samples(&self) -> usize {
        self.x0.rows() / self.tokens_per_sample.max(1)
    }

    fn check(&self, model: &Model) -> Result<()> {
        if self.x0.cols() != model.d_in() {
            return Err(Error::DimensionMismatch {
                op: "calibration width",
                left: self.x0.shape(),
                right: (model.d_in(), model.d_in()),
            });
        }
        if self.tokens_per_sample == 0 || !self.x0.rows().is_multiple_of(self.tokens_per_sample) {
            return Err(Error::InvalidArgument {
                what: "calibration rows must be a multiple of tokens_per_sample",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub block: usize,
    /// Layer input (`X` or `X̂`).
    pub input: DenseMatrix,
    /// `input · weight`.
    pub output: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationRecord {
    pub layers: Vec<LayerRecord>,
    /// `(block input, block output)` per block.
    pub blocks: Vec<(DenseMatrix, DenseMatrix)>,
}

impl PropagationRecord {
    pub fn final_output(&self) -> Option<&DenseMatrix> {
        self.blocks.last().map(|(_, o)| o)
    }
}

fn normalize_rows(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = math::sqrt(row.iter().map(|v| v * v).sum());
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Runs one path through the model. `weight_for(global_layer, layer, input)`
/// supplies the matrix to multiply by.
fn forward(
    model: &Model,
    x0: &DenseMatrix,
    noise: Option<&PathNoise>,
    mut weight_for: impl FnMut(usize, &LayerSpec, &DenseMatrix) -> Result<DenseMatrix>,
) -> Result<PropagationRecord> {
    model.validate()?;
    let mut rec = PropagationRecord {
        layers: Vec::with_capacity(model.num_layers()),
        blocks: Vec::with_capacity(model.blocks.len()),
    };
    let mut h = x0.clone();
    let mut global = 0;
    for (b, block) in model.blocks.iter().enumerate() {
        let block_in = match noise {
            Some(n) => n.apply(b, &h),
            None => h.clone(),
        };
        let mut x = block_in.clone();
        let mut out = DenseMatrix::zeros(0, 0);
        for (l, layer) in block.layers.iter().enumerate() {
            let w = weight_for(global, layer, &x)?;
            let z = x.matmul(&w)?;
            rec.layers.push(LayerRecord {
                block: b,
                input: x.clone(),
                output: z.clone(),
            });
            global += 1;
            if l + 1 < block.layers.len() {
                x = block.nonlinearity.apply(&z);
            } else {
                out = z;
            }
        }
        if block.residual {
            out = out.add(&block_in)?;
        }
        if block.row_normalize {
            out = normalize_rows(&out);
        }
        rec.blocks.push((block_in, out.clone()));
        h = out;
    }
    Ok(rec)
}

/// Which weights a propagation uses.
#[derive(Debug, Clone, Copy)]
pub enum PathWeights<'a> {
    FullPrecision,
    /// Reconstructed `Ŵ` per layer, in model order. Path noise is applied.
    Quantized(&'a [DenseMatrix]),
}

pub fn propagate(model: &Model, calib: &Calibration, weights: PathWeights<'_>) -> Result<PropagationRecord> {
    calib.check(model)?;
    match weights {
        PathWeights::FullPrecision => {
            forward(model, &calib.x0, None, |_, layer, _| Ok(layer.weight.clone()))
        }
        PathWeights::Quantized(w_hat) => {
            if w_hat.len() != model.num_layers() {
                return Err(Error::InvalidArgument {
                    what: "one quantized weight per layer required",
                });
            }
            forward(model, &calib.x0, Some(&calib.path_noise), |g, layer, _| {
                let w = &w_hat[g];
                if w.shape() != layer.weight.shape() {
                    return Err(Error::DimensionMismatch {
                        op: "quantized weight",
                        left: layer.weight.shape(),
                        right: w.shape(),
                    });
                }
                Ok(w.clone())
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub block: usize,
    pub role: Role,
    pub mode: AlignmentMode,
    pub quantized: QuantizedMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedModel {
    pub fn weights(&self) -> Vec<DenseMatrix> {
        self.layers.iter().map(|l| l.quantized.reconstruct()).collect()
    }
}

/// Per-sample Gram accumulation, in sample order.
fn layer_grams(x: &DenseMatrix, x_hat: &DenseMatrix, tokens: usize) -> Result<GramBundle> {
    let mut acc = GramAccumulator::new(x.cols());
    for s in 0..x.rows() / tokens {
        acc.accumulate(&x.row_block(s * tokens, tokens), &x_hat.row_block(s * tokens, tokens))?;
    }
    Ok(acc.finish())
}

/// Quantizes every layer front to back.
///
/// Each layer's Grams pair its full-precision input with the input produced
/// by the already quantized prefix, so upstream error is visible to the
/// objective. `config.mode` applies to `final_fc` layers; other layers use
/// weight alignment unless overridden.
pub fn quantize_model(model: &Model, calib: &Calibration, config: &SolverConfig) -> Result<QuantizedModel> {
    quantize_model_with(model, calib, config, solve_with)
}

/// [`quantize_model`] with a caller-supplied layer solver, e.g. one that
/// runs column blocks in parallel. `solver` must behave like `solve_with`.
pub fn quantize_model_with<F>(
    model: &Model,
    calib: &Calibration,
    config: &SolverConfig,
    solver: F,
) -> Result<QuantizedModel>
where
    F: Fn(&DenseMatrix, &EffectiveGrams, &SolverConfig) -> Result<QuantizedMatrix>,
{
    config.validate()?;
    let fp = propagate(model, calib, PathWeights::FullPrecision)?;
    let mut layers = Vec::with_capacity(model.num_layers());
    let block_of: Vec<usize> = model.layers().map(|(b, _)| b).collect();
    forward(model, &calib.x0, Some(&calib.path_noise), |g, layer, x_hat| {
        let x = &fp.layers[g].input;
        let mode = layer.effective_mode(config.mode);
        let bundle = layer_grams(x, x_hat, calib.tokens_per_sample)?;
        let layer_config = SolverConfig {
            mode,
            ..config.clone()
        };
        let quantized = solver(
            &layer.weight,
            &EffectiveGrams::resolve(&bundle, mode),
            &layer_config,
        )?;
        let w_hat = quantized.reconstruct();
        layers.push(QuantizedLayer {
            block: block_of[g],
            role: layer.role,
            mode,
            quantized,
        });
        Ok(w_hat)
    })?;
    Ok(QuantizedModel { layers })
}

/// Everything one analysis run produces.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub quantized: QuantizedModel,
    pub full_precision: PropagationRecord,
    pub quantized_path: PropagationRecord,
    pub metrics: Vec<MetricRow>,
}

/// Quantizes, propagates both paths and computes all metrics.
pub fn analyze(model: &Model, calib: &Calibration, config: &SolverConfig) -> Result<Analysis> {
    analyze_with(model, calib, config, solve_with)
}

/// [`analyze`] with a caller-supplied layer solver.
pub fn analyze_with<F>(
    model: &Model,
    calib: &Calibration,
    config: &SolverConfig,
    solver: F,
) -> Result<Analysis>
where
    F: Fn(&DenseMatrix, &EffectiveGrams, &SolverConfig) -> Result<QuantizedMatrix>,
{
    let quantized = quantize_model_with(model, calib, config, solver)?;
    let w_hat = quantized.weights();
    let full_precision = propagate(model, calib, PathWeights::FullPrecision)?;
    let quantized_path = propagate(model, calib, PathWeights::Quantized(&w_hat))?;
    let mut metrics = error_metrics(model, &full_precision, &quantized_path, &w_hat)?;
    metrics.extend(cosine_metrics(model, &full_precision, &quantized_path, &w_hat)?);
    for (g, (_, layer)) in model.layers().enumerate() {
        let (act, out) = token_similarity_error(
            &full_precision.layers[g].input,
            &quantized_path.layers[g].input,
            &layer.weight,
            &w_hat[g],
            calib.tokens_per_sample,
        )?;
        let block = full_precision.layers[g].block;
        metrics.push(MetricRow::layer(g, block, "tok_sim_act", act));
        metrics.push(MetricRow::layer(g, block, "tok_sim_out", out));
    }
    Ok(Analysis {
        quantized,
        full_precision,
        quantized_path,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn one_layer(w: DenseMatrix, residual: bool) -> Model {
        Model::new(vec![BlockSpec {
            layers: vec![LayerSpec {
                weight: w,
                role: Role::FinalFc,
                alignment: None,
            }],
            nonlinearity: Nonlinearity::Identity,
            residual,
            row_normalize: false,
        }])
        .unwrap()
    }

    fn calib(x0: DenseMatrix) -> Calibration {
        let t = x0.rows();
        Calibration {
            x0,
            tokens_per_sample: t,
            path_noise: PathNoise::default(),
        }
    }

    #[test]
    fn single_layer_records_product() {
        let w = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, -1.0]]);
        let x = DenseMatrix::from_rows(&[[1.0, 1.0], [2.0, 0.0], [0.0, 3.0]]);
        let rec = propagate(&one_layer(w.clone(), false), &calib(x.clone()), PathWeights::FullPrecision)
            .unwrap();
        assert_eq!(rec.layers[0].output, x.matmul(&w).unwrap());
        assert_eq!(rec.final_output().unwrap(), &x.matmul(&w).unwrap());

        let rec = propagate(&one_layer(w.clone(), true), &calib(x.clone()), PathWeights::FullPrecision)
            .unwrap();
        assert_eq!(rec.final_output().unwrap(), &x.add(&x.matmul(&w).unwrap()).unwrap());
    }

    #[test]
    fn quantized_path_with_exact_weights_matches() {
        let w = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, -1.0]]);
        let x = DenseMatrix::from_rows(&[[1.0, 1.0], [2.0, 0.0]]);
        let m = one_layer(w.clone(), false);
        let c = calib(x);
        let fp = propagate(&m, &c, PathWeights::FullPrecision).unwrap();
        let q = propagate(&m, &c, PathWeights::Quantized(&[w])).unwrap();
        assert_eq!(fp, q);
    }

    #[test]
    fn broken_chain_rejected() {
        let l = |r, c| LayerSpec {
            weight: DenseMatrix::zeros(r, c),
            role: Role::Plain,
            alignment: None,
        };
        let bad = Model::new(vec![BlockSpec {
            layers: vec![l(2, 3), l(4, 2)],
            nonlinearity: Nonlinearity::Relu,
            residual: false,
            row_normalize: false,
        }]);
        assert!(matches!(bad, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn mode_inheritance() {
        let mut l = LayerSpec {
            weight: DenseMatrix::zeros(1, 1),
            role: Role::FinalFc,
            alignment: None,
        };
        assert_eq!(l.effective_mode(AlignmentMode::Output), AlignmentMode::Output);
        l.role = Role::Query;
        assert_eq!(l.effective_mode(AlignmentMode::Output), AlignmentMode::Weight);
        l.alignment = Some(AlignmentMode::ActivationConditioned);
        assert_eq!(
            l.effective_mode(AlignmentMode::Output),
            AlignmentMode::ActivationConditioned
        );
    }

    #[test]
    fn row_normalization_leaves_zero_rows() {
        let m = DenseMatrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]);
        let n = normalize_rows(&m);
        assert_eq!(n.row(0), [0.6, 0.8]);
        assert_eq!(n.row(1), [0.0, 0.0]);
    }
}
