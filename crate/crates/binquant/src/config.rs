//! JSON run configuration.
//!
//! Unknown keys are rejected and missing keys take their defaults. String
//! valued keys are checked when the config is turned into solver settings so
//! errors can name the key.

use std::fs;
use std::path::{Path, PathBuf};

use binquant_core::amp::AmpPolicy;
use binquant_core::factorization::{AlignmentMode, RowSelection};
use binquant_core::pipeline::{BlockBlueprint, LayerBlueprint, Model, Nonlinearity, Role};
use binquant_core::solver::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::error::{RunError, RunResult};
use crate::io::read_matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: String,
    pub amp: String,
    pub iters: usize,
    pub k: usize,
    pub b_rows: usize,
    pub block_size: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub scale_bits: usize,
    pub row_select: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<Vec<BlockConfig>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calib: Option<CalibConfig>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            mode: s.mode.as_str().into(),
            amp: s.amp_policy.as_str().into(),
            iters: s.iters,
            k: s.alpha_c_period,
            b_rows: s.b_rows_per_iter,
            block_size: s.block_width,
            rel_tol: s.rel_tol,
            seed: s.seed,
            scale_bits: 16,
            row_select: s.row_selection.as_str().into(),
            model: None,
            calib: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Either a directory written by `synth` or a synthetic descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CalibConfig {
    Dir(PathBuf),
    Synth(SynthCalib),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCalib {
    /// Defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_in: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_out: Option<usize>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_tokens")]
    pub tokens: usize,
    #[serde(default)]
    pub noise: f64,
}

fn default_n() -> usize {
    64
}

fn default_samples() -> usize {
    4
}

fn default_tokens() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub layers: Vec<LayerConfig>,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: String,
    #[serde(default)]
    pub residual: bool,
    #[serde(default)]
    pub row_normalize: bool,
}

fn default_nonlinearity() -> String {
    "identity".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub d_in: usize,
    pub d_out: usize,
    #[serde(default = "default_role")]
    pub role: String,
    /// A mode name, or absent / "inherit" for the role default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<String>,
    /// BQT1 weight file; synthesized from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<PathBuf>,
}

fn default_role() -> String {
    "plain".into()
}

fn choice<T>(key: &str, value: &str, parse: fn(&str) -> Option<T>, allowed: &str) -> RunResult<T> {
    parse(value).ok_or_else(|| {
        RunError::user(
            "config",
            format!("{key}: unknown value {value:?} (expected {allowed})"),
        )
    })
}

fn at_least_one(key: &str, v: usize) -> RunResult<()> {
    if v == 0 {
        return Err(RunError::user("config", format!("{key}: must be at least 1")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json(text: &str) -> RunResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                RunError::user("config", inner)
            } else {
                RunError::user("config", format!("{path}: {inner}"))
            }
        })
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> RunResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| RunError::file("config", path, e))?;
        let mut cfg =
            Self::from_json(&text).map_err(|e| RunError::user("config", format!("{}: {}", path.display(), e.message)))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        if let Some(CalibConfig::Dir(d)) = &mut self.calib {
            fix(d);
        }
        for block in self.model.iter_mut().flatten() {
            for layer in &mut block.layers {
                if let Some(w) = &mut layer.weight {
                    fix(w);
                }
            }
        }
    }

    pub fn mode(&self) -> RunResult<AlignmentMode> {
        choice("mode", &self.mode, AlignmentMode::parse, "weight, activation or output")
    }

    pub fn solver_config(&self) -> RunResult<SolverConfig> {
        at_least_one("iters", self.iters)?;
        at_least_one("k", self.k)?;
        at_least_one("b_rows", self.b_rows)?;
        at_least_one("block_size", self.block_size)?;
        if !(self.rel_tol >= 0.0 && self.rel_tol.is_finite()) {
            return Err(RunError::user("config", "rel_tol: must be finite and non-negative"));
        }
        Ok(SolverConfig {
            iters: self.iters,
            alpha_c_period: self.k,
            b_rows_per_iter: self.b_rows,
            mode: self.mode()?,
            amp_policy: choice("amp", &self.amp, AmpPolicy::parse, "off, agreement or heaviside")?,
            block_width: self.block_size,
            rel_tol: self.rel_tol,
            seed: self.seed,
            row_selection: choice("row_select", &self.row_select, RowSelection::parse, "gain or agreement")?,
        })
    }

    /// Builds the model: synthesized weights from the run seed, replaced by
    /// any weight files the layers name.
    pub fn model(&self) -> RunResult<Model> {
        let blocks = self
            .model
            .as_ref()
            .filter(|m| !m.is_empty())
            .ok_or_else(|| RunError::user("config", "model: at least one block is required"))?;
        let mut blueprint = Vec::with_capacity(blocks.len());
        for (b, block) in blocks.iter().enumerate() {
            let nonlinearity = match block.nonlinearity.as_str() {
                "identity" => Nonlinearity::Identity,
                "relu" => Nonlinearity::Relu,
                other => {
                    return Err(RunError::user(
                        "config",
                        format!("model[{b}].nonlinearity: unknown value {other:?} (expected identity or relu)"),
                    ))
                }
            };
            let mut layers = Vec::with_capacity(block.layers.len());
            for (l, layer) in block.layers.iter().enumerate() {
                let at = format!("model[{b}].layers[{l}]");
                let role = choice(
                    &format!("{at}.role"),
                    &layer.role,
                    Role::parse,
                    "query, key, value, attn_out, fc_up, final_fc or plain",
                )?;
                let alignment = match layer.alignment.as_deref() {
                    None | Some("inherit") => None,
                    Some(m) => Some(choice(
                        &format!("{at}.alignment"),
                        m,
                        AlignmentMode::parse,
                        "inherit, weight, activation or output",
                    )?),
                };
                layers.push(LayerBlueprint {
                    d_in: layer.d_in,
                    d_out: layer.d_out,
                    role,
                    alignment,
                });
            }
            blueprint.push(BlockBlueprint {
                layers,
                nonlinearity,
                residual: block.residual,
                row_normalize: block.row_normalize,
            });
        }
        let mut model = Model::synthesize(self.seed, &blueprint).map_err(|e| RunError::core("model", e))?;
        let files = blocks.iter().flat_map(|b| &b.layers).map(|l| l.weight.as_ref());
        let specs = model.blocks.iter_mut().flat_map(|b| b.layers.iter_mut());
        for (spec, file) in specs.zip(files) {
            if let Some(path) = file {
                let w = read_matrix(path).map_err(|e| RunError::user("model", e))?;
                if w.shape() != spec.weight.shape() {
                    return Err(RunError::user(
                        "model",
                        format!(
                            "{}: shape {:?} does not match declared {:?}",
                            path.display(),
                            w.shape(),
                            spec.weight.shape()
                        ),
                    ));
                }
                spec.weight = w;
            }
        }
        Model::new(model.blocks).map_err(|e| RunError::core("model", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        let s = c.solver_config().unwrap();
        assert_eq!(s, SolverConfig::default());
        assert_eq!((c.iters, c.k, c.b_rows, c.block_size, c.scale_bits), (15, 5, 2, 128, 16));
        assert_eq!((c.mode.as_str(), c.amp.as_str()), ("output", "agreement"));
        assert_eq!(c.rel_tol, 1e-6);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_json(r#"{"iterations": 3}"#).unwrap_err();
        assert!(e.message.contains("iterations"), "{}", e.message);
        let e = RunConfig::from_json(r#"{"calib": {"d_in": 2, "extra": 1}}"#).unwrap_err();
        assert!(e.message.contains("calib"), "{}", e.message);
    }

    #[test]
    fn bad_values_name_their_key() {
        let c = RunConfig::from_json(r#"{"mode": "fast"}"#).unwrap();
        let e = c.solver_config().unwrap_err();
        assert!(e.message.starts_with("mode:"), "{}", e.message);
        assert_eq!(e.exit_code(), 1);

        let c = RunConfig::from_json(r#"{"amp": "on"}"#).unwrap();
        assert!(c.solver_config().unwrap_err().message.starts_with("amp:"));
        let c = RunConfig::from_json(r#"{"k": 0}"#).unwrap();
        assert!(c.solver_config().unwrap_err().message.starts_with("k:"));
        let e = RunConfig::from_json(r#"{"iters": -1}"#).unwrap_err();
        assert!(e.message.starts_with("iters:"), "{}", e.message);
    }

    #[test]
    fn calib_forms() {
        let c = RunConfig::from_json(r#"{"calib": "data"}"#).unwrap();
        assert_eq!(c.calib, Some(CalibConfig::Dir("data".into())));
        let c = RunConfig::from_json(r#"{"calib": {"d_in": 4, "d_out": 2, "noise": 0.1}}"#).unwrap();
        match c.calib {
            Some(CalibConfig::Synth(s)) => {
                assert_eq!((s.d_in, s.d_out, s.n, s.noise), (Some(4), Some(2), 64, 0.1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn paths_are_relative_to_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        fs::write(&p, r#"{"calib": "data", "out_dir": "res"}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.out_dir, dir.path().join("res"));
        assert_eq!(c.calib, Some(CalibConfig::Dir(dir.path().join("data"))));
    }

    #[test]
    fn model_roles_and_overrides() {
        let c = RunConfig::from_json(
            r#"{"model": [{"layers": [
                {"d_in": 4, "d_out": 4, "role": "query", "alignment": "output"},
                {"d_in": 4, "d_out": 3, "role": "final_fc", "alignment": "inherit"}
            ], "nonlinearity": "relu", "residual": false}]}"#,
        )
        .unwrap();
        let m = c.model().unwrap();
        let layers: Vec<_> = m.layers().map(|(_, l)| (l.role, l.alignment)).collect();
        assert_eq!(
            layers,
            [(Role::Query, Some(AlignmentMode::Output)), (Role::FinalFc, None)]
        );

        let bad = RunConfig::from_json(r#"{"model": [{"layers": [{"d_in": 2, "d_out": 2, "role": "mlp"}]}]}"#).unwrap();
        assert!(bad.model().unwrap_err().message.starts_with("model[0].layers[0].role"));
        let chain = RunConfig::from_json(
            r#"{"model": [{"layers": [{"d_in": 2, "d_out": 3}, {"d_in": 2, "d_out": 2}]}]}"#,
        )
        .unwrap();
        assert!(chain.model().is_err());
    }
}
