use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lang::{self, LanguagePreset};

pub const DEFAULT_ROWS_PER_LANGUAGE: i64 = 1500;
pub const DEFAULT_PER_TRUTH_QUOTA: usize = 750;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateLanguageMode {
    #[default]
    EnglishOnly,
    Translated,
}

/// Either a named preset or an explicit list of language codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LanguageSelection {
    Preset(LanguagePreset),
    Explicit(Vec<String>),
}

impl Default for LanguageSelection {
    fn default() -> Self {
        LanguageSelection::Preset(LanguagePreset::Langs11)
    }
}

impl LanguageSelection {
    pub fn codes(&self) -> Vec<String> {
        match self {
            LanguageSelection::Preset(p) => p.codes(),
            LanguageSelection::Explicit(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureEntry {
    pub dataset_id: String,
    pub task_id: String,
    /// Corpus manifest, relative to the spec file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Restricts the entry to these languages; defaults to the spec's set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub languages: Option<Vec<String>>,
}

/// Declarative recipe for a statement mixture build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    #[serde(default)]
    pub entries: Vec<MixtureEntry>,
    #[serde(default = "default_rows")]
    pub rows_per_language_cap: i64,
    #[serde(default = "default_quota")]
    pub per_truth_quota: usize,
    #[serde(default = "default_true")]
    pub include_mt: bool,
    #[serde(default)]
    pub template_language_mode: TemplateLanguageMode,
    #[serde(default)]
    pub languages: LanguageSelection,
    /// Codes accepted in addition to the 25-language table.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_languages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Overall size ceiling; when the mixture would exceed it the per-group
    /// quota is scaled down uniformly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_total: Option<usize>,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    /// Template pack; the built-in English pack when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pack: Option<PathBuf>,
    /// Directory of `<lang>.json` translated packs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translated_pack_dir: Option<PathBuf>,
    /// Extra task schemas merged over the built-in catalog.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<PathBuf>,
}

fn default_rows() -> i64 {
    DEFAULT_ROWS_PER_LANGUAGE
}
fn default_quota() -> usize {
    DEFAULT_PER_TRUTH_QUOTA
}
fn default_true() -> bool {
    true
}
fn default_validation() -> f64 {
    DEFAULT_VALIDATION_FRACTION
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            entries: Vec::new(),
            rows_per_language_cap: DEFAULT_ROWS_PER_LANGUAGE,
            per_truth_quota: DEFAULT_PER_TRUTH_QUOTA,
            include_mt: true,
            template_language_mode: TemplateLanguageMode::EnglishOnly,
            languages: LanguageSelection::default(),
            extra_languages: Vec::new(),
            seed: None,
            target_total: None,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            pack: None,
            translated_pack_dir: None,
            tasks: None,
        }
    }
}

impl MixtureSpec {
    /// One of the three canonical setups: English-only, 11 and 25 languages.
    /// The English-only and 11-language builds are capped at 123k statements,
    /// the 25-language build at 185k.
    pub fn preset(preset: LanguagePreset, entries: Vec<MixtureEntry>) -> Self {
        let target = match preset {
            LanguagePreset::EnglishOnly | LanguagePreset::Langs11 => 123_000,
            LanguagePreset::Langs25 => 185_000,
        };
        MixtureSpec {
            entries,
            languages: LanguageSelection::Preset(preset),
            target_total: Some(target),
            ..MixtureSpec::default()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    /// Hex SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Languages a record may carry, in code order.
    pub fn language_set(&self) -> BTreeSet<String> {
        self.languages.codes().into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows_per_language_cap < 0 {
            return Err(Error::InvalidSpec(format!(
                "rows_per_language_cap must be non-negative, got {}",
                self.rows_per_language_cap
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidSpec(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        let preset_codes: BTreeSet<String> = match &self.languages {
            LanguageSelection::Preset(p) => p.codes().into_iter().collect(),
            LanguageSelection::Explicit(_) => BTreeSet::new(),
        };
        let allowed = |code: &str| {
            lang::is_known(code)
                || preset_codes.contains(code)
                || self.extra_languages.iter().any(|e| e == code)
        };
        for code in self.languages.codes() {
            if !allowed(&code) {
                return Err(Error::InvalidSpec(format!(
                    "language `{code}` is not in the language table; register it under extra_languages"
                )));
            }
        }
        let spec_langs = self.language_set();
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(&e.dataset_id) {
                return Err(Error::InvalidSpec(format!("duplicate dataset_id `{}`", e.dataset_id)));
            }
            for l in e.languages.iter().flatten() {
                if !spec_langs.contains(l) {
                    return Err(Error::InvalidSpec(format!(
                        "entry `{}` lists language `{l}` outside the spec's language set",
                        e.dataset_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Languages an entry contributes, in code order.
    pub fn entry_languages(&self, entry: &MixtureEntry) -> Vec<String> {
        let all = self.language_set();
        match &entry.languages {
            Some(v) => {
                let mut v: Vec<String> = v.iter().filter(|l| all.contains(*l)).cloned().collect();
                v.sort();
                v.dedup();
                v
            }
            None => all.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_defaults() {
        let spec = MixtureSpec::from_toml(
            r#"
            languages = "langs11"
            seed = 3
            [[entries]]
            dataset_id = "sib"
            task_id = "sib200"
            "#,
        )
        .unwrap();
        assert_eq!(spec.rows_per_language_cap, 1500);
        assert_eq!(spec.per_truth_quota, 750);
        assert!(spec.include_mt);
        assert_eq!(spec.language_set().len(), 11);
        spec.validate().unwrap();
    }

    #[test]
    fn explicit_languages_and_unknown_keys() {
        let spec = MixtureSpec::from_toml(r#"languages = ["en", "de"]"#).unwrap();
        assert_eq!(spec.languages.codes(), vec!["en", "de"]);
        let err = MixtureSpec::from_toml("rows_per_languge_cap = 3").unwrap_err();
        assert!(err.to_string().contains("rows_per_languge_cap"));
    }

    #[test]
    fn negative_cap_is_invalid() {
        let spec = MixtureSpec {
            rows_per_language_cap: -1,
            ..MixtureSpec::default()
        };
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn unknown_language_needs_registration() {
        let mut spec = MixtureSpec {
            languages: LanguageSelection::Explicit(vec!["en".into(), "qu".into()]),
            ..MixtureSpec::default()
        };
        assert!(spec.validate().is_err());
        spec.extra_languages.push("qu".into());
        spec.validate().unwrap();
        // sw is accepted through the 11-language preset even though the
        // 25-language table lacks it.
        MixtureSpec::preset(LanguagePreset::Langs11, vec![]).validate().unwrap();
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = MixtureSpec::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = Some(1);
        assert_ne!(a.digest(), b.digest());
    }
}
