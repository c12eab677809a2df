use std::fmt;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{CheckpointError, Result};

/// Which weight of a transformer block a tensor holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterRole {
    AttnQ,
    AttnK,
    AttnV,
    AttnO,
    MlpGate,
    MlpUp,
    MlpDown,
    NormInput,
    NormPost,
    QkvFused,
    Other,
}

impl ParameterRole {
    /// The nine roles whose trajectories are monitored.
    pub const MONITORED: [ParameterRole; 9] = [
        ParameterRole::AttnQ,
        ParameterRole::AttnK,
        ParameterRole::AttnV,
        ParameterRole::AttnO,
        ParameterRole::MlpGate,
        ParameterRole::MlpUp,
        ParameterRole::MlpDown,
        ParameterRole::NormInput,
        ParameterRole::NormPost,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            ParameterRole::AttnQ => "attn_q",
            ParameterRole::AttnK => "attn_k",
            ParameterRole::AttnV => "attn_v",
            ParameterRole::AttnO => "attn_o",
            ParameterRole::MlpGate => "mlp_gate",
            ParameterRole::MlpUp => "mlp_up",
            ParameterRole::MlpDown => "mlp_down",
            ParameterRole::NormInput => "norm_input",
            ParameterRole::NormPost => "norm_post",
            ParameterRole::QkvFused => "qkv_fused",
            ParameterRole::Other => "other",
        }
    }

    pub fn is_monitored(self) -> bool {
        !matches!(self, ParameterRole::QkvFused | ParameterRole::Other)
    }

    /// Normalization weights are vectors; everything else is a matrix.
    pub fn is_norm(self) -> bool {
        matches!(self, ParameterRole::NormInput | ParameterRole::NormPost)
    }
}

impl fmt::Display for ParameterRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParameterRole {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ParameterRole::MONITORED
            .iter()
            .chain(&[ParameterRole::QkvFused, ParameterRole::Other])
            .find(|r| r.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown parameter role {s:?}"))
    }
}

/// Serialized form of a mapping rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub pattern: String,
    pub role: ParameterRole,
}

#[derive(Debug, Clone)]
struct Rule {
    pattern: Regex,
    role: ParameterRole,
    layer_group: Option<usize>,
}

/// Ordered tensor-name rules. The first matching rule wins.
///
/// A pattern is a regular expression matched against the full tensor name.
/// The layer number is taken from a group named `layer`, or from the first
/// capture group when no group has that name.
#[derive(Debug, Clone)]
pub struct MappingConfig {
    rules: Vec<Rule>,
    specs: Vec<RuleSpec>,
    pub strict: bool,
}

/// Result of mapping one tensor name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mapped {
    Layer { layer: usize, role: ParameterRole },
    Unmapped,
}

#[derive(Deserialize)]
struct MappingFile {
    rules: Vec<RuleSpec>,
    #[serde(default)]
    strict: bool,
}

const PREFIX: &str = r"^(?:[\w.]*\.)?";

fn per_projection_rules() -> Vec<RuleSpec> {
    use ParameterRole::*;
    [
        ("self_attn.q_proj", AttnQ),
        ("self_attn.k_proj", AttnK),
        ("self_attn.v_proj", AttnV),
        ("self_attn.o_proj", AttnO),
        ("mlp.gate_proj", MlpGate),
        ("mlp.up_proj", MlpUp),
        ("mlp.down_proj", MlpDown),
        ("input_layernorm", NormInput),
        ("post_attention_layernorm", NormPost),
    ]
    .into_iter()
    .map(|(suffix, role)| RuleSpec {
        pattern: format!(r"{PREFIX}layers\.(?P<layer>\d+)\.{}\.weight$", suffix.replace('.', r"\.")),
        role,
    })
    .collect()
}

fn fused_qkv_rules() -> Vec<RuleSpec> {
    use ParameterRole::*;
    let block = r"(?:layers|h)\.(?P<layer>\d+)\.";
    [
        (r"(?:attention|self_attention)\.query_key_value", QkvFused),
        (r"attn\.c_attn", QkvFused),
        (r"(?:attention|self_attention)\.dense", AttnO),
        (r"attn\.c_proj", AttnO),
        (r"mlp\.dense_h_to_4h", MlpUp),
        (r"mlp\.dense_4h_to_h", MlpDown),
        (r"mlp\.c_fc", MlpUp),
        (r"mlp\.c_proj", MlpDown),
        (r"(?:input_layernorm|ln_1)", NormInput),
        (r"(?:post_attention_layernorm|ln_2)", NormPost),
    ]
    .into_iter()
    .map(|(suffix, role)| RuleSpec {
        pattern: format!(r"{PREFIX}{block}{suffix}\.weight$"),
        role,
    })
    .collect()
}

/// Embeddings, output head and final norms: known, but not per-layer.
fn auxiliary_rules() -> Vec<RuleSpec> {
    [r"(?:embed_tokens|word_embeddings|wte|wpe|embed_in)", r"(?:lm_head|embed_out)", r"(?:norm|final_layernorm|final_layer_norm|ln_f)"]
        .into_iter()
        .map(|stem| RuleSpec {
            pattern: format!(r"{PREFIX}{stem}\.weight$"),
            role: ParameterRole::Other,
        })
        .collect()
}

impl MappingConfig {
    pub fn new(specs: Vec<RuleSpec>, strict: bool) -> Result<Self> {
        let rules = specs
            .iter()
            .map(|spec| {
                let pattern = Regex::new(&spec.pattern).map_err(|e| CheckpointError::InvalidRule {
                    pattern: spec.pattern.clone(),
                    reason: e.to_string(),
                })?;
                let layer_group = pattern
                    .capture_names()
                    .position(|n| n == Some("layer"))
                    .or_else(|| (pattern.captures_len() > 1).then_some(1));
                if layer_group.is_none() && spec.role != ParameterRole::Other {
                    return Err(CheckpointError::InvalidRule {
                        pattern: spec.pattern.clone(),
                        reason: format!("role {} is layer-scoped but the pattern has no layer capture", spec.role),
                    });
                }
                Ok(Rule {
                    pattern,
                    role: spec.role,
                    layer_group,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MappingConfig { rules, specs, strict })
    }

    /// Rules for checkpoints that store separate q/k/v/o, gate/up/down
    /// projections and two layer norms per block.
    pub fn per_projection() -> Self {
        Self::new(per_projection_rules(), false).expect("built-in rules are valid")
    }

    /// Rules for checkpoints with a fused query-key-value projection.
    pub fn fused_qkv() -> Self {
        Self::new(fused_qkv_rules(), false).expect("built-in rules are valid")
    }

    /// Reads `{"rules": [{"pattern": .., "role": ..}], "strict": bool}`.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: MappingFile =
            serde_json::from_str(text).map_err(|e| CheckpointError::InvalidMapping(e.to_string()))?;
        Self::new(file.rules, file.strict)
    }

    pub fn with_strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn rules(&self) -> &[RuleSpec] {
        &self.specs
    }

    /// Maps a tensor name to its layer and role. Names matching no rule are
    /// `Unmapped`, or an error when the config is strict.
    pub fn map_parameter(&self, name: &str) -> Result<Mapped> {
        for rule in &self.rules {
            let Some(caps) = rule.pattern.captures(name) else {
                continue;
            };
            let Some(group) = rule.layer_group else {
                // Only `other` rules may lack a layer capture.
                return Ok(Mapped::Unmapped);
            };
            let layer = caps
                .get(group)
                .and_then(|m| m.as_str().parse::<usize>().ok())
                .ok_or_else(|| CheckpointError::InvalidRule {
                    pattern: rule.pattern.as_str().to_string(),
                    reason: format!("layer capture in {name:?} is not a non-negative integer"),
                })?;
            return Ok(Mapped::Layer { layer, role: rule.role });
        }
        if self.strict {
            Err(CheckpointError::StrictUnmapped(name.to_string()))
        } else {
            Ok(Mapped::Unmapped)
        }
    }
}

/// Both built-in rule sets, per-projection first, plus rules marking
/// embeddings, output head and final norm as known non-layer tensors.
impl Default for MappingConfig {
    fn default() -> Self {
        let mut specs = per_projection_rules();
        specs.extend(fused_qkv_rules());
        specs.extend(auxiliary_rules());
        Self::new(specs, false).expect("built-in rules are valid")
    }
}

/// Free-function form of [`MappingConfig::map_parameter`].
pub fn map_parameter(name: &str, cfg: &MappingConfig) -> Result<Mapped> {
    cfg.map_parameter(name)
}
