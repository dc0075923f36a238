//! Synthetic NER dataset generation with a chat-completion model.
//!
//! The crate is organised by pipeline role:
//!
//! - [`schema`]: task specs, NER samples, tokenization, BIO conversion,
//!   validation and deduplication.
//! - [`diversity`]: sampling of attribute and entity diversity requirements.
//! - [`prompting`]: rendering of every prompt family from text templates.
//! - [`gateway`]: completion transport (live HTTP or record/replay), retries
//!   and cost accounting.
//! - [`parser`]: turning free-form completions into samples, entity lists
//!   and correction directives.
//! - [`correction`]: uncertainty scoring, challenge-set selection and
//!   application of correction directives.
//! - [`eval`]: exact and partial micro precision/recall/F1.
//! - [`pipeline`]: configuration, stage orchestration and export.

pub mod correction;
pub mod diversity;
pub mod eval;
pub mod gateway;
pub mod parser;
pub mod pipeline;
pub mod prompting;
pub mod schema;

pub use correction::{AnnotationRecord, CorrectionDirective, CorrectionStats, SelectionParams};
pub use diversity::DiversityConfig;
pub use eval::{EvalReport, MatchCounts};
pub use gateway::{CompletionRequest, CompletionResponse, CostLedger, Dollars, PriceTable};
pub use parser::ParseOutcome;
pub use prompting::PromptBundle;
pub use schema::{Annotation, EntityClass, NerSample, TaskSpec, TokenizedSample};
