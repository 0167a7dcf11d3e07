//! Prompt construction: the three hand-crafted prompts, palette-derived colour
//! descriptors, VLM request documents and VLM response validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bpe::BpeTokenizer;
use crate::error::{Error, Result};
use crate::model::{PaletteStats, PromptSource, Region, Rgb, SampleRecord};
use crate::stats::euclidean;

pub const PROMPT_P1: &str =
    "satellite RGB image, wildfire burn scar, charred forest, aerial nadir view, no clouds, sharp";

pub const PROMPT_P2: &str = "optical satellite RGB image, nadir view, wildfire aftermath, burned area shows dark brown charcoal and ash tones, surrounding intact green forest canopy unchanged, Sentinel-2-like, sharp detail, no clouds, no smoke";

/// `{burn}` and `{intact}` are replaced with colour descriptors.
pub const PROMPT_P3_TEMPLATE: &str = "optical satellite RGB image, nadir view, wildfire burn scar aftermath, burned region: {burn}, ash deposits, charcoal texture, intact region: {intact}, forest canopy unchanged, Sentinel-2-like, sharp detail, no clouds, no smoke";

pub const NEGATIVE_PROMPT: &str = "ground level view, eye level, forest interior, tree trunks, clouds, smoke, flames, buildings, cartoon, blurry, watermark, low resolution, artifacts, perspective distortion";

pub const VLM_PREFIX: &str = "optical satellite RGB image, nadir view, Sentinel-2-like";
pub const VLM_PREFIX_JOIN: &str = ", ";

/// Phrases every VLM negative prompt must contain.
pub const MANDATED_NEGATIVE_PHRASES: [&str; 10] = [
    "ground level view",
    "eye level",
    "forest interior",
    "tree trunks",
    "perspective distortion",
    "clouds",
    "smoke",
    "flames",
    "cartoon",
    "blurry",
];

pub const PROMPT_TOKEN_BUDGET: usize = 75;
pub const VLM_BODY_TOKEN_LIMIT: usize = 50;

pub const VLM_INSTRUCTION: &str = "These satellite images are viewed from directly above (nadir view),
like Google Maps satellite mode. Each row shows:
[BEFORE fire | MASK of burned area | REAL AFTER fire].
The MASK shows where vegetation burned.
REAL AFTER shows what the burned scar looks like from above \u{2014}
TOP-DOWN satellite view, NOT a photo from inside a forest.

Your task: describe ONLY what the burned region looks like in the AFTER
image. Focus on: burn scar color (dark brown/black/charcoal), ash tone,
texture, and contrast with surrounding forest.

IMPORTANT RULES: Do NOT mention trees from ground level, forest
interiors, or trunks. Do NOT use words like 'lush', 'towering', or
'canopy from below'. Keep answer under 40 words. Output will be used
inside a Stable Diffusion prompt starting with 'optical satellite RGB
image, nadir view, Sentinel-2-like'.

Return ONLY valid JSON: {\"prompt_body\": \"...\", \"neg_prompt\": \"...\"}
neg_prompt must include: ground level view, eye level, forest interior,
tree trunks, perspective distortion, clouds, smoke, flames, cartoon,
blurry";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub positive: String,
    pub negative: String,
    pub source: PromptSource,
    /// Content tokens of `positive`.
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorDescriptor {
    pub name: String,
    #[serde(rename = "rgb")]
    pub rgb_anchor: Rgb,
}

/// Versioned nearest-anchor colour vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorTable {
    pub version: String,
    pub entries: Vec<ColorDescriptor>,
}

impl DescriptorTable {
    pub fn from_json(json: &str) -> Result<Self> {
        let table: DescriptorTable = serde_json::from_str(json)?;
        if table.entries.is_empty() {
            return Err(Error::Config("descriptor table has no entries".into()));
        }
        Ok(table)
    }

    /// Nearest anchor by Euclidean distance; the earlier entry wins ties.
    pub fn describe(&self, rgb: Rgb) -> &ColorDescriptor {
        let mut best = &self.entries[0];
        let mut best_d = euclidean(rgb, best.rgb_anchor);
        for e in &self.entries[1..] {
            let d = euclidean(rgb, e.rgb_anchor);
            if d < best_d {
                best = e;
                best_d = d;
            }
        }
        best
    }
}

pub fn describe_color(rgb: Rgb, table: &DescriptorTable) -> ColorDescriptor {
    table.describe(rgb).clone()
}

/// Everything needed to build prompts: tokenizer, descriptor table and budget.
#[derive(Debug, Clone)]
pub struct PromptForge {
    pub tokenizer: BpeTokenizer,
    pub descriptors: DescriptorTable,
    pub token_budget: usize,
}

impl PromptForge {
    pub fn new(tokenizer: BpeTokenizer, descriptors: DescriptorTable) -> Self {
        PromptForge {
            tokenizer,
            descriptors,
            token_budget: PROMPT_TOKEN_BUDGET,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.token_budget = budget;
        self
    }

    pub fn p3_text(&self, palette: &PaletteStats) -> Result<String> {
        let burn = palette.burned.mean().ok_or(Error::UndefinedStats(Region::Burned))?;
        let intact = palette.intact.mean().ok_or(Error::UndefinedStats(Region::Intact))?;
        Ok(PROMPT_P3_TEMPLATE
            .replace("{burn}", &self.descriptors.describe(burn).name)
            .replace("{intact}", &self.descriptors.describe(intact).name))
    }

    /// Builds P1, P2 or P3 (P3 requires `palette`).
    pub fn build_prompt(&self, source: PromptSource, palette: Option<&PaletteStats>) -> Result<PromptBundle> {
        let positive = match source {
            PromptSource::P1 => PROMPT_P1.to_string(),
            PromptSource::P2 => PROMPT_P2.to_string(),
            PromptSource::P3 => {
                let palette = palette.ok_or_else(|| Error::Config("P3 needs palette statistics".into()))?;
                self.p3_text(palette)?
            }
            PromptSource::Vlm => {
                return Err(Error::Config(
                    "VLM prompts come from validated responses, not build_prompt".into(),
                ))
            }
        };
        let token_count = self.tokenizer.count_tokens(&positive);
        if token_count > self.token_budget {
            return Err(Error::TokenBudget {
                source_name: source.to_string(),
                count: token_count,
                budget: self.token_budget,
            });
        }
        Ok(PromptBundle {
            positive,
            negative: NEGATIVE_PROMPT.to_string(),
            source,
            token_count,
        })
    }

    /// Parses a raw VLM reply, enforces the body limit and mandated negatives, and
    /// prepends the fixed satellite prefix.
    pub fn validate_vlm_response(&self, raw: &str) -> Result<PromptBundle> {
        #[derive(Deserialize)]
        struct Reply {
            prompt_body: String,
            neg_prompt: String,
        }
        let reply: Reply = serde_json::from_str(raw.trim()).map_err(|e| Error::VlmParse(e.to_string()))?;
        let body = reply.prompt_body.trim();
        let body_tokens = self.tokenizer.count_tokens(body);
        if body_tokens > VLM_BODY_TOKEN_LIMIT {
            return Err(Error::TokenBudget {
                source_name: "VLM prompt body".into(),
                count: body_tokens,
                budget: VLM_BODY_TOKEN_LIMIT,
            });
        }
        let negative_lower = reply.neg_prompt.to_lowercase();
        if let Some(missing) = MANDATED_NEGATIVE_PHRASES.iter().find(|p| !negative_lower.contains(*p)) {
            return Err(Error::MissingNegativePhrase(missing.to_string()));
        }
        let positive = format!("{VLM_PREFIX}{VLM_PREFIX_JOIN}{body}");
        Ok(PromptBundle {
            token_count: self.tokenizer.count_tokens(&positive),
            positive,
            negative: reply.neg_prompt,
            source: PromptSource::Vlm,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRef {
    pub role: String,
    pub label: String,
    pub path: PathBuf,
}

/// Request document handed to an external VLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmRequest {
    pub sample_id: String,
    pub corpus_id: String,
    pub instruction: String,
    /// Left to right: before, mask, after.
    pub panels: Vec<PanelRef>,
    pub response_schema: serde_json::Value,
    pub max_body_tokens: usize,
    pub prompt_prefix: String,
}

pub fn build_vlm_request(sample: &SampleRecord) -> Result<VlmRequest> {
    if sample.after.is_none() {
        return Err(Error::Config("VLM request needs a real after tile".into()).for_sample(&sample.sample_id));
    }
    let dir: &Path = sample.source_dir.as_deref().ok_or_else(|| {
        Error::Config("VLM request needs the sample's corpus directory".into()).for_sample(&sample.sample_id)
    })?;
    let panel = |role: &str, label: &str, file: &str| PanelRef {
        role: role.into(),
        label: label.into(),
        path: dir.join(file),
    };
    Ok(VlmRequest {
        sample_id: sample.sample_id.clone(),
        corpus_id: sample.corpus_id.clone(),
        instruction: VLM_INSTRUCTION.to_string(),
        panels: vec![
            panel("before", "BEFORE fire", "before.png"),
            panel("mask", "MASK of burned area", "mask.png"),
            panel("after", "REAL AFTER fire", "after.png"),
        ],
        response_schema: serde_json::json!({
            "type": "object",
            "required": ["prompt_body", "neg_prompt"],
            "properties": {
                "prompt_body": { "type": "string" },
                "neg_prompt": { "type": "string" }
            },
            "additionalProperties": false
        }),
        max_body_tokens: VLM_BODY_TOKEN_LIMIT,
        prompt_prefix: VLM_PREFIX.to_string(),
    })
}
