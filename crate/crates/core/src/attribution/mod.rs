//! Shapley explanations of predictions and their rendering.

pub mod explain;
pub mod render;
pub mod shapley;

pub use explain::{
    explain_record, AttributionReport, ExplainConfig, FeatureAttribution, Granularity, Method, MethodChoice, Prescreen,
    DEFAULT_PRESCREEN_K,
};
pub use render::{color, render_html, render_terminal};
pub use shapley::{shapley_exact, shapley_sampled, DEFAULT_EXACT_LIMIT};
