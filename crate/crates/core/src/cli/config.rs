use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::calib::{CalibrationConfig, Distance, SeparatorPolicy, DEFAULT_SOFT_TOKEN, OOD_SOFT_TOKEN};
use crate::error::{Error, Result};
use crate::harness::ReportFormat;
use crate::lm::{ModelConfig, PretrainConfig};

/// Everything a pipeline run reads, after the config file and flag overrides
/// have been merged.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub train_corpus: PathBuf,
    pub eval_corpus: PathBuf,
    /// `None` selects the bundled prompt file.
    pub prompts: Option<PathBuf>,
    pub model: PathBuf,
    pub calibrator: PathBuf,
    pub report_dir: PathBuf,
    pub seed: u64,
    pub model_config: ModelConfig,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    pub pretrain_patience: usize,
    pub calibration: CalibrationConfig,
    pub soft_token: String,
    pub ood_token: String,
    pub report_format: ReportFormat,
    pub summary_len: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let pre = PretrainConfig::default();
        Self {
            train_corpus: "data/train.jsonl".into(),
            eval_corpus: "data/test.jsonl".into(),
            prompts: None,
            model: "out/model.sclm".into(),
            calibrator: "out/calibrator.scsp".into(),
            report_dir: "out/reports".into(),
            seed: 0,
            model_config: pre.model,
            pretrain_epochs: pre.max_epochs,
            pretrain_lr: pre.learning_rate,
            pretrain_batch: pre.batch_size,
            pretrain_patience: pre.patience,
            calibration: CalibrationConfig::default(),
            soft_token: DEFAULT_SOFT_TOKEN.to_string(),
            ood_token: OOD_SOFT_TOKEN.to_string(),
            report_format: ReportFormat::Csv,
            summary_len: crate::calib::summarize::DEFAULT_SUMMARY_LEN,
        }
    }
}

pub const KEYS: [&str; 28] = [
    "train_corpus",
    "eval_corpus",
    "prompts",
    "model",
    "calibrator",
    "report_dir",
    "seed",
    "d_model",
    "heads",
    "encoder_layers",
    "decoder_layers",
    "ffn_dim",
    "max_seq_len",
    "pretrain_epochs",
    "pretrain_lr",
    "pretrain_batch",
    "pretrain_patience",
    "distance",
    "learning_rate",
    "max_epochs",
    "convergence_tol",
    "patience",
    "separator",
    "batch_size",
    "soft_token",
    "ood_token",
    "report_format",
    "summary_len",
];

/// Parses `key = value` lines; `#` starts a comment line. Later duplicates win.
pub fn parse_pairs(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg,
        };
        let (k, v) = line.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(err(format!("unknown key {k:?}")));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::contract(format!("{key}: cannot parse {v:?}")))
}

fn separator(v: &str) -> Result<SeparatorPolicy> {
    match v {
        "prompt-first" => Ok(SeparatorPolicy::PromptFirst),
        "note-first" => Ok(SeparatorPolicy::NoteFirst),
        _ => Err(Error::contract(format!("separator: expected prompt-first or note-first, got {v:?}"))),
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "train_corpus" => self.train_corpus = v.into(),
            "eval_corpus" => self.eval_corpus = v.into(),
            "prompts" => self.prompts = (!v.is_empty() && v != "bundled").then(|| v.into()),
            "model" => self.model = v.into(),
            "calibrator" => self.calibrator = v.into(),
            "report_dir" => self.report_dir = v.into(),
            "seed" => self.seed = num(key, v)?,
            "d_model" => self.model_config.d_model = num(key, v)?,
            "heads" => self.model_config.heads = num(key, v)?,
            "encoder_layers" => self.model_config.encoder_layers = num(key, v)?,
            "decoder_layers" => self.model_config.decoder_layers = num(key, v)?,
            "ffn_dim" => self.model_config.ffn_dim = num(key, v)?,
            "max_seq_len" => self.model_config.max_seq_len = num(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = num(key, v)?,
            "pretrain_lr" => self.pretrain_lr = num(key, v)?,
            "pretrain_batch" => self.pretrain_batch = num(key, v)?,
            "pretrain_patience" => self.pretrain_patience = num(key, v)?,
            "distance" => self.calibration.distance = v.parse::<Distance>()?,
            "learning_rate" => self.calibration.learning_rate = num(key, v)?,
            "max_epochs" => self.calibration.max_epochs = num(key, v)?,
            "convergence_tol" => self.calibration.convergence_tol = num(key, v)?,
            "patience" => self.calibration.patience = num(key, v)?,
            "separator" => self.calibration.separator_policy = separator(v)?,
            "batch_size" => {
                self.calibration.batch_size = match v {
                    "" | "epoch" | "full" => None,
                    _ => Some(num(key, v)?),
                }
            }
            "soft_token" => self.soft_token = v.to_string(),
            "ood_token" => self.ood_token = v.to_string(),
            "report_format" => self.report_format = v.parse()?,
            "summary_len" => self.summary_len = num(key, v)?,
            other => return Err(Error::contract(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Defaults, then the optional file, then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = crate::fsutil::read_to_string(path)?;
            for (k, v) in parse_pairs(&text, path)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.model_config.validate()?;
        cfg.calibration.seed = cfg.seed;
        cfg.calibration.validate()?;
        Ok(cfg)
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            model: self.model_config,
            learning_rate: self.pretrain_lr,
            batch_size: self.pretrain_batch,
            max_epochs: self.pretrain_epochs,
            patience: self.pretrain_patience,
            seed: self.seed,
            extra_vocab: Vec::new(),
            ..PretrainConfig::default()
        }
    }
}

/// Fails with a usage error naming `what` when `path` does not exist.
pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::contract(format!("{what} not found: {}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nseed = 3\ndistance=cross-entropy\nbatch_size = 8\n").unwrap();
        let cfg = PipelineConfig::load(Some(&path), &[("seed".into(), "9".into())]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.calibration.seed, 9);
        assert_eq!(cfg.calibration.distance, Distance::CrossEntropy);
        assert_eq!(cfg.calibration.batch_size, Some(8));
    }

    #[test]
    fn bad_lines_are_located() {
        let err = parse_pairs("seed=1\nnonsense\n", Path::new("x.conf")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_pairs("colour=red", Path::new("x.conf")).is_err());
        assert!(PipelineConfig::load(None, &[("seed".into(), "-1".into())]).is_err());
    }
}
