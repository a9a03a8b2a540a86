//! Text-as-Mask anomaly localization toolkit.
//!
//! * [`mask_grid`]: pixel masks, patch grids and resizing
//! * [`tam_codec`]: the coordinate-string encoding of patch grids
//! * [`response_parser`]: `<seg>/<think>/<answer>` response parsing
//! * [`rewards`]: verifiable rewards and group-relative advantages
//! * [`metrics`]: threshold-free detection metrics, baseline threshold sweep
//!   and multiple-choice scoring
//! * [`dataset_io`]: manifests, dataset ingestion and prompt assembly
//! * [`sim_policy`]: seeded mock rollouts for exercising the reward pipeline
//! * [`score_map`]: float score maps for baseline sweeps

pub mod dataset_io;
pub mod error;
pub mod mask_grid;
pub mod metrics;
pub mod response_parser;
pub mod rewards;
pub mod score_map;
pub mod sim_policy;
pub mod tam_codec;

pub use error::{Error, ParseError, Result};
pub use mask_grid::{BinaryMask, GridSpec, PatchLabelGrid};
pub use response_parser::{AnswerLetter, StructuredResponse};
pub use rewards::{RewardBreakdown, RewardConfig};
pub use tam_codec::TamString;
