use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{select_device, EncoderConfig, HashTokenizer, ModelHandle, Provenance};
use crate::error::{Error, Result};

pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const CONFIG_FILE: &str = "config.json";
pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfigFile {
    backend_id: String,
    encoder: EncoderConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes weights, tokenizer settings, encoder shape and provenance to `dir`.
pub fn save_model(handle: &ModelHandle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    handle.varmap().save(dir.join(WEIGHTS_FILE))?;
    write_json(&dir.join(TOKENIZER_FILE), &handle.tokenizer)?;
    write_json(
        &dir.join(CONFIG_FILE),
        &ModelConfigFile {
            backend_id: handle.backend_id.clone(),
            encoder: handle.encoder_config().clone(),
        },
    )?;
    write_json(&dir.join(PROVENANCE_FILE), &handle.provenance)
}

pub fn load_model(dir: &Path) -> Result<ModelHandle> {
    let fail = |message: String| Error::CheckpointLoad {
        path: dir.to_path_buf(),
        message,
    };
    let read = |name: &str| -> Result<String> {
        std::fs::read_to_string(dir.join(name)).map_err(|e| fail(format!("{name}: {e}")))
    };
    let config: ModelConfigFile =
        serde_json::from_str(&read(CONFIG_FILE)?).map_err(|e| fail(format!("{CONFIG_FILE}: {e}")))?;
    let tokenizer: HashTokenizer = serde_json::from_str(&read(TOKENIZER_FILE)?)
        .map_err(|e| fail(format!("{TOKENIZER_FILE}: {e}")))?;
    let provenance: Provenance = serde_json::from_str(&read(PROVENANCE_FILE)?)
        .map_err(|e| fail(format!("{PROVENANCE_FILE}: {e}")))?;
    let mut handle = ModelHandle::init_with(
        &config.backend_id,
        config.encoder,
        provenance.seed,
        tokenizer.max_sequence_length,
        select_device()?,
    )?;
    let mut varmap = handle.varmap().clone();
    varmap
        .load(dir.join(WEIGHTS_FILE))
        .map_err(|e| fail(format!("{WEIGHTS_FILE}: {e}")))?;
    handle.tokenizer = tokenizer;
    handle.provenance = provenance;
    handle.checkpoint = Some(dir.to_path_buf());
    Ok(handle)
}
