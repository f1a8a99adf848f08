//! Adapter plugging a remote endpoint into the evaluation protocol.

use moralsim_core::eval::{AgentContext, AgentReply, EvalAgent};
use moralsim_core::game::{TokenChoice, TokenVocabulary};

use crate::client::GatewayClient;
use crate::parse::parse_action;
use crate::prompt::{build_prompt, PromptSpec, RowOrder};

/// A remote agent: each move is one prompt/completion round trip. Transport
/// failures become illegal choices with the transport flag set, so an
/// unreachable endpoint degrades a run instead of aborting it.
pub struct RemoteAgent {
    client: GatewayClient,
    row_order: RowOrder,
}

impl RemoteAgent {
    pub fn new(client: GatewayClient) -> Self {
        RemoteAgent {
            client,
            row_order: RowOrder::CooperateFirst,
        }
    }

    pub fn with_row_order(mut self, order: RowOrder) -> Self {
        self.row_order = order;
        self
    }
}

impl EvalAgent for RemoteAgent {
    fn reply(&mut self, ctx: &AgentContext<'_>) -> AgentReply {
        let vocab = match TokenVocabulary::new(
            ctx.mapping.c_token.clone(),
            ctx.mapping.d_token.clone(),
            vec![],
        ) {
            Ok(v) => v,
            Err(e) => {
                return AgentReply {
                    choice: TokenChoice::Illegal(format!("<bad mapping: {e}>")),
                    transport_failure: true,
                }
            }
        };
        let prompt = build_prompt(&PromptSpec {
            game: ctx.game,
            state: ctx.state,
            vocab: &vocab,
            ordering_seed: ctx.ordering_seed,
            payoff_row_order: self.row_order,
        });
        match self.client.complete(&prompt) {
            Ok(text) => AgentReply {
                choice: parse_action(&text, &vocab),
                transport_failure: false,
            },
            Err(e) => AgentReply {
                choice: TokenChoice::Illegal(format!("<transport: {e}>")),
                transport_failure: true,
            },
        }
    }
}
