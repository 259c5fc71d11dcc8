//! Anti-spoofing classifiers over (enhanced) FBANK features: MFA-Conformer,
//! LCNN and SE-ResNet18, all ending in attentive statistics pooling, an
//! embedding layer and a two-way head. Also the weight-manifest format used
//! for checkpoints and pretrained-encoder import.

mod asp;
mod conformer;
mod head;
mod lcnn;
mod manifest;
mod resnet;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

pub use asp::{weighted_stats, Asp};
pub use conformer::{
    mfa_concat, rel_shift, relative_positions, ConformerBlock, ConformerConfig, ConformerEncoder, MfaConformer,
    Subsampling,
};
pub use head::{score_from_logits, Head, BONAFIDE_INDEX};
pub use lcnn::{mfm, Lcnn, LcnnConfig};
pub use manifest::{
    conformer_name_map, export_mapped, load_pretrained, ArrayDType, LoadReport, NameMap, NamedArray, WeightManifest,
    INDEX_FILE,
};
pub use resnet::{ResNet18, ResNetConfig, ResidualUnit, SqueezeExcite};

use crate::error::Result;
use crate::nn::Scope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Conformer,
    Lcnn,
    Resnet18,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Conformer => "conformer",
            BackendKind::Lcnn => "lcnn",
            BackendKind::Resnet18 => "resnet18",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "conformer" => Ok(BackendKind::Conformer),
            "lcnn" => Ok(BackendKind::Lcnn),
            "resnet18" => Ok(BackendKind::Resnet18),
            other => Err(format!("unknown backend `{other}` (expected conformer, lcnn or resnet18)")),
        }
    }
}

/// Per-architecture settings; only the one selected by the run is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfigs {
    pub conformer: ConformerConfig,
    pub lcnn: LcnnConfig,
    pub resnet18: ResNetConfig,
}

impl BackendConfigs {
    pub fn validate(&self) -> Result<()> {
        self.conformer.validate()?;
        self.lcnn.validate()?;
        self.resnet18.validate()
    }
}

#[derive(Debug, Clone)]
pub enum Backend {
    Conformer(MfaConformer),
    Lcnn(Lcnn),
    Resnet18(ResNet18),
}

impl Backend {
    pub fn new(s: &Scope, kind: BackendKind, cfgs: &BackendConfigs) -> Result<Self> {
        Ok(match kind {
            BackendKind::Conformer => Backend::Conformer(MfaConformer::new(s, &cfgs.conformer)?),
            BackendKind::Lcnn => Backend::Lcnn(Lcnn::new(s, &cfgs.lcnn)?),
            BackendKind::Resnet18 => Backend::Resnet18(ResNet18::new(s, &cfgs.resnet18)?),
        })
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Conformer(_) => BackendKind::Conformer,
            Backend::Lcnn(_) => BackendKind::Lcnn,
            Backend::Resnet18(_) => BackendKind::Resnet18,
        }
    }

    /// `[N, T, F]` features → `[N, 2]` logits (spoof, bona fide).
    pub fn logits(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        match self {
            Backend::Conformer(m) => m.logits(x, train),
            Backend::Lcnn(m) => m.logits(x, train),
            Backend::Resnet18(m) => m.logits(x, train),
        }
    }

    pub fn scores(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        score_from_logits(&self.logits(x, train)?)
    }

    pub fn min_frames(&self) -> usize {
        match self {
            Backend::Conformer(_) => 1,
            Backend::Lcnn(_) => 16,
            Backend::Resnet18(m) => 1 << (m.config().channels.len() - 1),
        }
    }
}
