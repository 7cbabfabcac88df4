//! Engine for guided meta-analysis: scoping and review bookkeeping, dynamic
//! extraction and quality forms, effect sizes, DerSimonian–Laird pooling,
//! quantile dotplots, triage/grouping and the analysis/forest-plot output that
//! the HTTP service, CLI and browser demo all share.

pub mod analysis;
pub mod dotplot;
pub mod effect;
pub mod form;
pub mod meta;
pub mod model;
pub mod normal;
pub mod svg;
pub mod triage;

pub use analysis::{analyze, AnalysisParams, AnalysisResponse, SortOrder, UnitsMode};
pub use dotplot::{DotplotData, DOT_COUNT};
pub use effect::{EffectEstimate, EffectKind};
pub use meta::{PooledResult, StudyEstimate};
pub use model::{Project, ProjectError};


