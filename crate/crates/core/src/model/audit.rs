//! Parameter and FLOP census.

use indexmap::IndexMap;
use serde::Serialize;

use super::{param_specs, L2FMambaModel, ModelConfig, SPA_CONV_LAYERS, SUB_BLOCKS};
use crate::error::Result;
use crate::scan::Family;
use crate::tensor::Real;

/// Learnable scalar count, grouped by module path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub total: u64,
    pub by_path: IndexMap<String, u64>,
}

fn group(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    if parts[0] == "blocks" && parts.len() > 2 {
        parts[..3].join(".")
    } else {
        parts[0].to_string()
    }
}

fn report<'a>(items: impl Iterator<Item = (&'a str, usize)>) -> ParamReport {
    let mut by_path = IndexMap::new();
    let mut total = 0u64;
    for (name, n) in items {
        *by_path.entry(group(name)).or_insert(0) += n as u64;
        total += n as u64;
    }
    ParamReport { total, by_path }
}

/// Exact count of the scalars held by `m`.
pub fn count_params<T: Real>(m: &L2FMambaModel<T>) -> ParamReport {
    report(m.params.iter().map(|(k, v)| (k.as_str(), v.numel())))
}

/// Parameter count implied by a configuration, without allocating weights.
pub fn count_config_params(cfg: &ModelConfig) -> ParamReport {
    let specs = param_specs(cfg);
    report(specs.iter().map(|s| (s.name.as_str(), s.numel())))
}

/// FLOPs charged per multiply-accumulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopConvention {
    /// One MAC counts as one FLOP (the profiler convention the published
    /// totals match).
    MacIsOne,
    MacIsTwo,
}

impl FlopConvention {
    fn factor(self) -> u64 {
        match self {
            FlopConvention::MacIsOne => 1,
            FlopConvention::MacIsTwo => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub total: u64,
    pub convention: FlopConvention,
    pub by_path: IndexMap<String, u64>,
}

impl FlopReport {
    pub fn gflops(&self) -> f64 {
        self.total as f64 / 1e9
    }
}

/// Per-element cost of a layer norm.
const LAYER_NORM_COST: u64 = 5;

/// MACs per token of one sub-block. Biases and elementwise ops are free;
/// each scan direction costs `9·D·N + D` per step.
fn sub_block_macs(cfg: &ModelConfig, kind: Family) -> u64 {
    let c = cfg.c as u64;
    let d = cfg.d_inner() as u64;
    let n = cfg.d_state as u64;
    let r = cfg.dt_rank as u64;
    let e = (cfg.ffn_expand * cfg.c) as u64;
    let dw = if kind == Family::Intra { 9 * d } else { 0 };
    let per_dir = d * (r + 2 * n) + r * d + 9 * d * n + d;
    LAYER_NORM_COST * c
        + c * 2 * d
        + dw
        + 4 * per_dir
        + LAYER_NORM_COST * d
        + d * c
        + LAYER_NORM_COST * c
        + c * e
        + 9 * e
        + e * c
}

/// Analytic FLOPs of one forward pass on a `u×v×h×w` low-resolution input.
pub fn count_flops(cfg: &ModelConfig, extents: (usize, usize, usize, usize), convention: FlopConvention) -> Result<FlopReport> {
    cfg.validate()?;
    let (u, v, h, w) = extents;
    let tokens = (u * v * h * w) as u64;
    let c = cfg.c as u64;
    let k = cfg.k as u64;
    let a2 = (cfg.scale * cfg.scale) as u64;
    let f = convention.factor();
    let mut by_path = IndexMap::new();
    let spa = 9 * c + (SPA_CONV_LAYERS as u64 - 1) * 9 * c * c;
    by_path.insert("spa_conv".to_string(), spa * tokens * f);
    for b in 0..cfg.k {
        for kind in SUB_BLOCKS {
            by_path.insert(format!("blocks.{b}.{}", kind.name()), sub_block_macs(cfg, kind) * tokens * f);
        }
    }
    by_path.insert("agg_conv".to_string(), 9 * k * c * c * tokens * f);
    by_path.insert("upsampler".to_string(), (c * c * a2 + 9 * c * a2) * tokens * f);
    Ok(FlopReport {
        total: by_path.values().sum(),
        convention,
        by_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakdown_sums_to_total() {
        let cfg = ModelConfig::default();
        let p = count_config_params(&cfg);
        assert_eq!(p.by_path.values().sum::<u64>(), p.total);
        assert_eq!(p.by_path["p_ang"], 1600);
        assert_eq!(p.by_path["agg_conv"], 9 * 256 * 64);
    }

    #[test]
    fn intra_carries_the_extra_dwconv() {
        let cfg = ModelConfig::default();
        let p = count_config_params(&cfg);
        let d = cfg.d_inner() as u64;
        assert_eq!(p.by_path["blocks.0.intra"] - p.by_path["blocks.0.inter"], 10 * d);
        assert_eq!(p.by_path["blocks.0.inter"], p.by_path["blocks.0.macpi"]);
    }

    #[test]
    fn mac_convention_doubles() {
        let cfg = ModelConfig::default();
        let one = count_flops(&cfg, (5, 5, 32, 32), FlopConvention::MacIsOne).unwrap();
        let two = count_flops(&cfg, (5, 5, 32, 32), FlopConvention::MacIsTwo).unwrap();
        assert_eq!(two.total, 2 * one.total);
    }

    #[test]
    fn flops_linear_in_area() {
        let cfg = ModelConfig::default();
        let a = count_flops(&cfg, (5, 5, 32, 32), FlopConvention::MacIsOne).unwrap();
        let b = count_flops(&cfg, (5, 5, 64, 64), FlopConvention::MacIsOne).unwrap();
        let ratio = b.total as f64 / a.total as f64;
        assert!((ratio / 4.0 - 1.0).abs() < 0.05, "{ratio}");
    }
}
