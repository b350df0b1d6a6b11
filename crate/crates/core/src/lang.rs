//! Language inventory and the language presets used for mixtures.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResourceLevel {
    High,
    Low,
}

#[derive(Debug, Clone, Copy)]
pub struct LanguageInfo {
    pub code: &'static str,
    pub name: &'static str,
    pub family: &'static str,
    pub subgrouping: &'static str,
    pub script: &'static str,
    pub resource: ResourceLevel,
}

macro_rules! lang {
    ($code:literal, $name:literal, $fam:literal, $sub:literal, $script:literal, $res:ident) => {
        LanguageInfo {
            code: $code,
            name: $name,
            family: $fam,
            subgrouping: $sub,
            script: $script,
            resource: ResourceLevel::$res,
        }
    };
}

/// The 25 training languages, sorted by ISO 639-1 code.
pub const LANGUAGES: [LanguageInfo; 25] = [
    lang!("af", "Afrikaans", "Indo-European", "Germanic", "Latin", High),
    lang!("ar", "Arabic", "Afro-Asiatic", "Semitic", "Arabic", High),
    lang!("de", "German", "Indo-European", "Germanic", "Latin", High),
    lang!("en", "English", "Indo-European", "Germanic", "Latin", High),
    lang!("es", "Spanish", "Indo-European", "Italic", "Latin", High),
    lang!("fr", "French", "Indo-European", "Italic", "Latin", High),
    lang!("ga", "Irish", "Indo-European", "Celtic", "Latin", Low),
    lang!("gu", "Gujarati", "Indo-European", "Indo-Aryan", "Gujarati", Low),
    lang!("ha", "Hausa", "Afro-Asiatic", "Chadic", "Latin", Low),
    lang!("hi", "Hindi", "Indo-European", "Indo-Aryan", "Devanagari", High),
    lang!("id", "Indonesian", "Austronesian", "Malayo-Polynesian", "Latin", High),
    lang!("ig", "Igbo", "Atlantic-Congo", "Benue-Congo", "Latin", Low),
    lang!("is", "Icelandic", "Indo-European", "Germanic", "Latin", High),
    lang!("it", "Italian", "Indo-European", "Italic", "Latin", High),
    lang!("kk", "Kazakh", "Turkic", "Common Turkic", "Cyrillic", High),
    lang!("ky", "Kyrgyz", "Turkic", "Common Turkic", "Cyrillic", Low),
    lang!("lo", "Lao", "Tai-Kadai", "Kam-Tai", "Lao", Low),
    lang!("mt", "Maltese", "Afro-Asiatic", "Semitic", "Latin", High),
    lang!("ny", "Nyanja", "Atlantic-Congo", "Benue-Congo", "Latin", Low),
    lang!("pt", "Portuguese", "Indo-European", "Italic", "Latin", High),
    lang!("ru", "Russian", "Indo-European", "Balto-Slavic", "Cyrillic", High),
    lang!("si", "Sinhala", "Indo-European", "Indo-Aryan", "Sinhala", Low),
    lang!("tr", "Turkish", "Turkic", "Common Turkic", "Latin", High),
    lang!("vi", "Vietnamese", "Austroasiatic", "Vietic", "Latin", High),
    lang!("zh", "Chinese", "Sino-Tibetan", "Sinitic", "Han", High),
];

/// The intermediate 11-language subset.
pub const LANGS11: [&str; 11] = ["zh", "en", "fr", "vi", "sw", "ru", "ar", "hi", "de", "id", "it"];

pub fn lookup(code: &str) -> Option<&'static LanguageInfo> {
    LANGUAGES.iter().find(|l| l.code == code)
}

pub fn is_known(code: &str) -> bool {
    lookup(code).is_some()
}

/// Named language setups for a mixture build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguagePreset {
    EnglishOnly,
    Langs11,
    Langs25,
}

impl LanguagePreset {
    pub fn codes(self) -> Vec<String> {
        match self {
            LanguagePreset::EnglishOnly => vec!["en".to_string()],
            LanguagePreset::Langs11 => LANGS11.iter().map(|s| s.to_string()).collect(),
            LanguagePreset::Langs25 => LANGUAGES.iter().map(|l| l.code.to_string()).collect(),
        }
    }

    /// Preset members missing from the 25-language table.
    pub fn off_table(self) -> Vec<String> {
        self.codes().into_iter().filter(|c| !is_known(c)).collect()
    }
}
