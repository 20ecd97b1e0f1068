//! Model definitions: the windowed two-path TLinFormer, a standard decoder
//! baseline, and the checkpoint container.

pub mod baseline;
pub mod checkpoint;
pub mod config;
pub(crate) mod layers;
pub mod tlinformer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Element;

pub use baseline::Baseline;
pub use config::{ModelConfig, WindowLayout};
pub use tlinformer::{BlockState, BlockTrace, ContextStates, ForwardTrace, TLinFormer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Tlinformer,
    Baseline,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Tlinformer => "tlinformer",
            Architecture::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tlinformer" => Ok(Architecture::Tlinformer),
            "baseline" => Ok(Architecture::Baseline),
            other => Err(Error::Config(format!("unknown model `{other}` (expected tlinformer or baseline)"))),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Either architecture behind one handle.
#[derive(Debug, Clone)]
pub enum AnyModel<T: Element> {
    Tlinformer(TLinFormer<T>),
    Baseline(Baseline<T>),
}

impl<T: Element> AnyModel<T> {
    pub fn new(arch: Architecture, cfg: ModelConfig, seed: u64) -> Result<Self> {
        Ok(match arch {
            Architecture::Tlinformer => AnyModel::Tlinformer(TLinFormer::new(cfg, seed)?),
            Architecture::Baseline => AnyModel::Baseline(Baseline::new(cfg, seed)?),
        })
    }

    pub fn arch(&self) -> Architecture {
        match self {
            AnyModel::Tlinformer(_) => Architecture::Tlinformer,
            AnyModel::Baseline(_) => Architecture::Baseline,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            AnyModel::Tlinformer(m) => m.config(),
            AnyModel::Baseline(m) => m.config(),
        }
    }

    pub fn params(&self) -> &ParamStore<T> {
        match self {
            AnyModel::Tlinformer(m) => m.params(),
            AnyModel::Baseline(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        match self {
            AnyModel::Tlinformer(m) => m.params_mut(),
            AnyModel::Baseline(m) => m.params_mut(),
        }
    }

    /// Raises or lowers the sequence-length guard. Positions are sinusoidal,
    /// so no parameter depends on it.
    pub fn set_max_seq(&mut self, max_seq: usize) {
        match self {
            AnyModel::Tlinformer(m) => m.cfg.max_seq = max_seq,
            AnyModel::Baseline(m) => m.cfg.max_seq = max_seq,
        }
    }

    pub fn cast<U: Element>(&self) -> AnyModel<U> {
        match self {
            AnyModel::Tlinformer(m) => AnyModel::Tlinformer(m.cast()),
            AnyModel::Baseline(m) => AnyModel::Baseline(m.cast()),
        }
    }
}

/// Parameter counts of both architectures at the same shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParityManifest {
    pub tlinformer_params: usize,
    pub baseline_params: usize,
    /// `tlinformer - baseline`; positive because every block owns extra
    /// attention sites (cross attention and restore) beyond the baseline's
    /// one self-attention per layer.
    pub delta: i64,
    /// Parameters of one projected attention site with its norms.
    pub per_site_self: usize,
    pub per_site_cross: usize,
    pub extra_self_sites: usize,
    pub extra_cross_sites: usize,
}

pub fn parity_manifest(cfg: &ModelConfig) -> Result<ParityManifest> {
    let t = TLinFormer::<f64>::new(cfg.clone(), 0)?.n_params();
    let b = Baseline::<f64>::new(cfg.clone(), 0)?.n_params();
    let d = cfg.d_model;
    let per_site_self = 4 * d * d + 2 * d;
    let per_site_cross = per_site_self + 2 * d;
    let ffn = 2 * d * d * cfg.ffn_mult + d * cfg.ffn_mult + d + 2 * d;
    // Per block: focus + H self + restore context layers, each with an FFN,
    // and H + 2 generation layers with a causal and a cross site.
    // The baseline has H + 2 (self site + FFN) layers per block.
    let extra_self_sites = cfg.n_blocks * (1 + cfg.depth_h);
    let extra_cross_sites = cfg.n_blocks * (cfg.depth_h + 3);
    let predicted_delta =
        extra_self_sites * (per_site_self + ffn) + cfg.n_blocks * ffn + extra_cross_sites * per_site_cross;
    debug_assert_eq!(t - b, predicted_delta);
    Ok(ParityManifest {
        tlinformer_params: t,
        baseline_params: b,
        delta: t as i64 - b as i64,
        per_site_self,
        per_site_cross,
        extra_self_sites,
        extra_cross_sites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parity_delta_is_accounted_site_by_site() {
        let mut cfg = ModelConfig::desk(20);
        cfg.d_model = 16;
        let m = parity_manifest(&cfg).unwrap();
        let d = 16;
        let ffn = 2 * d * d * 4 + 4 * d + d + 2 * d;
        let expect = m.extra_self_sites * (m.per_site_self + ffn) + 2 * ffn + m.extra_cross_sites * m.per_site_cross;
        assert_eq!(m.delta as usize, expect);
        assert!(m.tlinformer_params > m.baseline_params);
    }

    #[test]
    fn architecture_parses() {
        assert_eq!("baseline".parse::<Architecture>().unwrap(), Architecture::Baseline);
        assert!("gpt".parse::<Architecture>().is_err());
    }
}
