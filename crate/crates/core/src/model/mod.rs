//! The restoration transformer: conv head, patch embedding, attention blocks whose
//! feed-forward is a mixture of multi-scale experts, linear expansion and conv tail,
//! with a parallel weather classifier whose tokens steer the routers.

mod attention;
mod classifier;
mod config;
pub mod layers;
mod moe;
mod network;
mod params;
mod routing;
#[cfg(test)]
mod tests;

pub use attention::{Attention, AttentionOutput};
pub use classifier::{ClassifierOutput, EncoderBlock, WeatherClassifier};
pub use config::{ExpertGroup, ModelConfig, RouterKind, PRESETS};
pub use moe::{gate_logits, Expert, MoeFfn, MoeOutput, Router, Routing, RoutingRecord};
pub use network::{ForwardOutput, MoweModel, Restoration, TransformerBlock, CLASSIFIER_PREFIX};
pub use params::{Graph, ParamId, ParamStore};
pub use routing::{js_divergence, mean_js_divergence, routing_scores, RoutingTable};
