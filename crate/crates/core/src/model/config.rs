use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kv;

/// Network hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature width `C`.
    pub c: usize,
    /// Number of stacked blocks.
    pub k: usize,
    pub d_state: usize,
    pub ssm_ratio: f64,
    /// Upscaling factor, 2 or 4.
    pub scale: usize,
    pub u: usize,
    pub v: usize,
    pub ffn_expand: usize,
    pub dt_rank: usize,
    /// Learnable per-view embedding added after the initial convolutions.
    pub p_ang: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            c: 64,
            k: 4,
            d_state: 16,
            ssm_ratio: 1.0,
            scale: 4,
            u: 5,
            v: 5,
            ffn_expand: 4,
            dt_rank: default_dt_rank(64),
            p_ang: true,
        }
    }
}

pub fn default_dt_rank(c: usize) -> usize {
    c.div_ceil(16)
}

impl ModelConfig {
    /// Inner SSM width.
    pub fn d_inner(&self) -> usize {
        (self.ssm_ratio * self.c as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c", self.c),
            ("k", self.k),
            ("d_state", self.d_state),
            ("u", self.u),
            ("v", self.v),
            ("ffn_expand", self.ffn_expand),
            ("dt_rank", self.dt_rank),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        if !(self.ssm_ratio > 0.0) || self.d_inner() == 0 {
            return Err(Error::Config(format!("`ssm_ratio` {} gives an empty inner width", self.ssm_ratio)));
        }
        if self.scale != 2 && self.scale != 4 {
            return Err(Error::Config(format!("`scale` must be 2 or 4, got {}", self.scale)));
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `dt_rank` follows `c`
    /// unless given explicitly.
    pub fn from_kv(text: &str) -> Result<Self> {
        let map = kv::parse(text)?;
        let mut cfg = ModelConfig::default();
        let mut dt_rank = None;
        for (k, raw) in &map {
            match k.as_str() {
                "c" => cfg.c = kv::value(k, raw)?,
                "k" => cfg.k = kv::value(k, raw)?,
                "d_state" => cfg.d_state = kv::value(k, raw)?,
                "ssm_ratio" => cfg.ssm_ratio = kv::value(k, raw)?,
                "scale" => cfg.scale = kv::value(k, raw)?,
                "u" => cfg.u = kv::value(k, raw)?,
                "v" => cfg.v = kv::value(k, raw)?,
                "angular" => {
                    let a: usize = kv::value(k, raw)?;
                    cfg.u = a;
                    cfg.v = a;
                }
                "ffn_expand" => cfg.ffn_expand = kv::value(k, raw)?,
                "dt_rank" => dt_rank = Some(kv::value(k, raw)?),
                "p_ang" => cfg.p_ang = kv::value(k, raw)?,
                other => return Err(Error::Config(format!("unknown model key `{other}`"))),
            }
        }
        cfg.dt_rank = dt_rank.unwrap_or_else(|| default_dt_rank(cfg.c));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "c = {}\nk = {}\nd_state = {}\nssm_ratio = {}\nscale = {}\nu = {}\nv = {}\nffn_expand = {}\ndt_rank = {}\np_ang = {}\n",
            self.c, self.k, self.d_state, self.ssm_ratio, self.scale, self.u, self.v, self.ffn_expand, self.dt_rank, self.p_ang
        )
    }

    /// Short stable fingerprint of the configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let h = Sha256::digest(&json);
        h[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// First field on which `self` (from a file) and `expected` differ.
    pub fn first_mismatch(&self, expected: &ModelConfig) -> Option<(String, String, String)> {
        let a = serde_json::to_value(self).unwrap();
        let b = serde_json::to_value(expected).unwrap();
        let (a, b) = (a.as_object().unwrap(), b.as_object().unwrap());
        for (k, va) in a {
            let vb = &b[k];
            if va != vb {
                return Some((k.clone(), va.to_string(), vb.to_string()));
            }
        }
        None
    }
}
