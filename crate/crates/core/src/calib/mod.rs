//! Soft-prompt calibration of a frozen summarizer.

pub mod checkpoint;
pub mod soft;
pub mod summarize;
pub mod train;

pub use checkpoint::{load_calibrator, save_calibrator, StoredCalibrator};
pub use soft::{
    encode_soft, infosum_loss, prompted_embedding, Distance, SeparatorPolicy, SoftPromptEncoder, SoftPromptToken,
    DEFAULT_SOFT_TOKEN, OOD_SOFT_TOKEN,
};
pub use summarize::{decode_soft_prompt, summarize, Calibration, SummarizeOptions};
pub use train::{train_calibrator, CalibrationConfig, CalibrationReport};
