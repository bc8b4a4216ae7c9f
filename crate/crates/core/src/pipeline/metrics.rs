use alloc::vec::Vec;

use super::{normalize_rows, Model, PropagationRecord};
use crate::error::{Error, Result};
use crate::math;
use crate::numerics::{dot, DenseMatrix};

/// One named measurement. Layer indices are global (model order); block
/// rows carry the index of the block's last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub layer: usize,
    pub block: usize,
    pub metric: &'static str,
    pub value: f64,
}

impl MetricRow {
    pub fn layer(layer: usize, block: usize, metric: &'static str, value: f64) -> Self {
        Self {
            layer,
            block,
            metric,
            value,
        }
    }
}

fn check_records(model: &Model, fp: &PropagationRecord, q: &PropagationRecord, w_hat: &[DenseMatrix]) -> Result<()> {
    let n = model.num_layers();
    if fp.layers.len() != n || q.layers.len() != n || w_hat.len() != n {
        return Err(Error::InvalidArgument {
            what: "records and weights must cover every layer",
        });
    }
    Ok(())
}

fn diff_norm(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    Ok(a.sub(b)?.frobenius_norm())
}

/// Weight, pseudo-target, true-target and activation-conditioned errors per
/// layer, plus block-output MSE per block.
pub fn error_metrics(
    model: &Model,
    fp: &PropagationRecord,
    q: &PropagationRecord,
    w_hat: &[DenseMatrix],
) -> Result<Vec<MetricRow>> {
    check_records(model, fp, q, w_hat)?;
    let mut rows = Vec::new();
    let mut last_layer_of_block = Vec::new();
    for (g, (b, layer)) in model.layers().enumerate() {
        let x = &fp.layers[g].input;
        let x_hat = &q.layers[g].input;
        let w = &layer.weight;
        let wq = &w_hat[g];
        let z = &fp.layers[g].output;
        let z_hat = &q.layers[g].output;
        rows.push(MetricRow::layer(g, b, "weight_err", diff_norm(w, wq)?));
        rows.push(MetricRow::layer(g, b, "pseudo_err", diff_norm(z, &x.matmul(wq)?)?));
        rows.push(MetricRow::layer(g, b, "true_err", diff_norm(z, z_hat)?));
        rows.push(MetricRow::layer(g, b, "actcond_err", diff_norm(&x_hat.matmul(w)?, z_hat)?));
        if last_layer_of_block.len() <= b {
            last_layer_of_block.resize(b + 1, 0);
        }
        last_layer_of_block[b] = g;
    }
    for (b, ((_, out_fp), (_, out_q))) in fp.blocks.iter().zip(&q.blocks).enumerate() {
        let n = (out_fp.rows() * out_fp.cols()).max(1) as f64;
        let mse = out_fp.sub(out_q)?.frobenius_norm_sq() / n;
        rows.push(MetricRow::layer(last_layer_of_block[b], b, "block_mse", mse));
    }
    Ok(rows)
}

/// Mean over rows of the cosine between matching rows; zero rows count as 0.
pub fn mean_row_cosine(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            op: "mean_row_cosine",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if a.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..a.rows())
        .map(|i| {
            let (ra, rb) = (a.row(i), b.row(i));
            let den = math::sqrt(dot(ra, ra)) * math::sqrt(dot(rb, rb));
            if den == 0.0 {
                0.0
            } else {
                dot(ra, rb) / den
            }
        })
        .sum();
    Ok(total / a.rows() as f64)
}

/// Output similarity (`XW` vs `X̂Ŵ`) and activation-conditioned similarity
/// (`X̂W` vs `X̂Ŵ`) for every layer.
pub fn cosine_metrics(
    model: &Model,
    fp: &PropagationRecord,
    q: &PropagationRecord,
    w_hat: &[DenseMatrix],
) -> Result<Vec<MetricRow>> {
    check_records(model, fp, q, w_hat)?;
    let mut rows = Vec::new();
    for (g, (b, layer)) in model.layers().enumerate() {
        let z = &fp.layers[g].output;
        let z_hat = &q.layers[g].output;
        let x_hat_w = q.layers[g].input.matmul(&layer.weight)?;
        rows.push(MetricRow::layer(g, b, "out_cos", mean_row_cosine(z, z_hat)?));
        rows.push(MetricRow::layer(g, b, "actcond_cos", mean_row_cosine(&x_hat_w, z_hat)?));
    }
    Ok(rows)
}

/// Token-similarity errors summed over samples of `tokens` rows each.
///
/// Each product is row-normalized before forming `T = P·Pᵀ`; returns
/// `(Σ ‖T_q − T_act‖_F, Σ ‖T_q − T_out‖_F)` with `T_q` from `X̂Ŵ`,
/// `T_act` from `X̂W` and `T_out` from `XW`.
pub fn token_similarity_error(
    x: &DenseMatrix,
    x_hat: &DenseMatrix,
    w: &DenseMatrix,
    w_hat: &DenseMatrix,
    tokens: usize,
) -> Result<(f64, f64)> {
    if x.shape() != x_hat.shape() || w.shape() != w_hat.shape() {
        return Err(Error::DimensionMismatch {
            op: "token_similarity_error",
            left: x.shape(),
            right: x_hat.shape(),
        });
    }
    if tokens == 0 || !x.rows().is_multiple_of(tokens) {
        return Err(Error::InvalidArgument {
            what: "rows must be a multiple of tokens",
        });
    }
    let sim = |m: DenseMatrix| -> Result<DenseMatrix> {
        let n = normalize_rows(&m);
        n.matmul_t(&n)
    };
    let (mut act, mut out) = (0.0, 0.0);
    for s in 0..x.rows() / tokens {
        let xs = x.row_block(s * tokens, tokens);
        let xhs = x_hat.row_block(s * tokens, tokens);
        let t_q = sim(xhs.matmul(w_hat)?)?;
        let t_a = sim(xhs.matmul(w)?)?;
        let t_o = sim(xs.matmul(w)?)?;
        act += diff_norm(&t_q, &t_a)?;
        out += diff_norm(&t_q, &t_o)?;
    }
    Ok((act, out))
}

/// Mean squared difference of the final block outputs.
pub fn end_to_end_mse(fp: &PropagationRecord, q: &PropagationRecord) -> Result<f64> {
    match (fp.final_output(), q.final_output()) {
        (Some(a), Some(b)) => {
            let n = (a.rows() * a.cols()).max(1) as f64;
            Ok(a.sub(b)?.frobenius_norm_sq() / n)
        }
        _ => Err(Error::InvalidArgument {
            what: "empty propagation record",
        }),
    }
}
