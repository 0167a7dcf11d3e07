//! Tokenizer vocabulary and colour descriptor table.
//!
//! Both ship inside the crate. `BURNBENCH_ASSETS` may point at a directory holding
//! replacements: `clip_merges.txt` (plus optional `vocab.json`) and/or
//! `color_descriptors.json`. Missing files fall back to the bundled copies.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::Serialize;

use crate::bpe::{load_vocabulary, BpeTokenizer, BpeVocabulary};
use crate::error::{Error, Result};
use crate::prompt::DescriptorTable;

pub const ASSETS_ENV: &str = "BURNBENCH_ASSETS";
pub const MERGES_FILE: &str = "clip_merges.txt";
pub const VOCAB_FILE: &str = "vocab.json";
pub const DESCRIPTORS_FILE: &str = "color_descriptors.json";

const BUNDLED_MERGES: &str = include_str!("../assets/clip_merges.txt");
const BUNDLED_DESCRIPTORS: &str = include_str!("../assets/color_descriptors.json");

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct AssetOrigin {
    pub merges: String,
    pub descriptors: String,
    pub descriptor_version: String,
    pub merge_count: usize,
}

#[derive(Debug, Clone)]
pub struct Assets {
    tokenizer: BpeTokenizer,
    descriptors: DescriptorTable,
    origin: AssetOrigin,
}

impl Assets {
    /// The copies compiled into the crate (parsed once per process).
    pub fn bundled() -> &'static Assets {
        static BUNDLED: OnceLock<Assets> = OnceLock::new();
        BUNDLED.get_or_init(|| {
            let vocab =
                BpeVocabulary::parse_merges(BUNDLED_MERGES, "bundled clip_merges.txt").expect("bundled merges parse");
            let descriptors = DescriptorTable::from_json(BUNDLED_DESCRIPTORS).expect("bundled descriptors parse");
            Assets::assemble(vocab, descriptors, "bundled".into(), "bundled".into())
        })
    }

    fn assemble(
        vocab: BpeVocabulary,
        descriptors: DescriptorTable,
        merges: String,
        descriptors_origin: String,
    ) -> Assets {
        let origin = AssetOrigin {
            merges,
            descriptors: descriptors_origin,
            descriptor_version: descriptors.version.clone(),
            merge_count: vocab.merges().len(),
        };
        Assets {
            tokenizer: BpeTokenizer::new(vocab),
            descriptors,
            origin,
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Assets> {
        let merges_path = dir.join(MERGES_FILE);
        let (vocab, merges_origin) = if merges_path.is_file() {
            let mut vocab = load_vocabulary(&merges_path)?;
            let vocab_path = dir.join(VOCAB_FILE);
            if vocab_path.is_file() {
                let json = read(&vocab_path)?;
                vocab = vocab.with_token_table_json(&json)?;
            }
            (vocab, merges_path.display().to_string())
        } else {
            (Assets::bundled().tokenizer.vocabulary().clone(), "bundled".to_string())
        };
        let desc_path = dir.join(DESCRIPTORS_FILE);
        let (descriptors, desc_origin) = if desc_path.is_file() {
            (
                DescriptorTable::from_json(&read(&desc_path)?)?,
                desc_path.display().to_string(),
            )
        } else {
            (Assets::bundled().descriptors.clone(), "bundled".to_string())
        };
        Ok(Assets::assemble(vocab, descriptors, merges_origin, desc_origin))
    }

    /// Honors `BURNBENCH_ASSETS`, otherwise the bundled assets.
    pub fn from_env() -> Result<Assets> {
        match std::env::var_os(ASSETS_ENV) {
            Some(dir) if !dir.is_empty() => Assets::from_dir(&PathBuf::from(dir)),
            _ => Ok(Assets::bundled().clone()),
        }
    }

    pub fn tokenizer(&self) -> &BpeTokenizer {
        &self.tokenizer
    }

    pub fn descriptors(&self) -> &DescriptorTable {
        &self.descriptors
    }

    pub fn origin(&self) -> &AssetOrigin {
        &self.origin
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
