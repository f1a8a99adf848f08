//! Bridges remote chat-completion endpoints into the matrix-game agent
//! interface: builds implicit game prompts, sends requests with retry and
//! backoff, and classifies responses as legal or illegal token choices.

pub mod agent;
pub mod client;
pub mod parse;
pub mod prompt;

#[cfg(feature = "test-util")]
pub mod mock;

pub use agent::RemoteAgent;
pub use client::{EndpointConfig, GatewayClient, GatewayError};
pub use parse::parse_action;
pub use prompt::{build_prompt, PromptSpec, RowOrder};
