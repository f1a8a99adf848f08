//! Game prompts for remote agents: an implicit description of the matrix
//! game in token terms, the opponent's previous move, and an instruction to
//! answer with exactly one of the two legal tokens.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use moralsim_core::game::{Action, GameSpec, GameState, TokenVocabulary, ACTIONS};

/// Which action's rows lead the payoff listing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RowOrder {
    #[default]
    CooperateFirst,
    DefectFirst,
}

/// Everything that shapes one prompt.
#[derive(Clone, Debug)]
pub struct PromptSpec<'a> {
    pub game: &'a GameSpec,
    pub state: GameState,
    pub vocab: &'a TokenVocabulary,
    /// Decides which legal token is mentioned first wherever both appear.
    pub ordering_seed: u64,
    pub payoff_row_order: RowOrder,
}

fn points(n: i64) -> String {
    if n == 1 || n == -1 {
        format!("{n} point")
    } else {
        format!("{n} points")
    }
}

/// Deterministic prompt text for a spec.
///
/// The game is described without naming it: both legal tokens, the full
/// payoff listing in token terms, the other agent's previous move, and the
/// reply instruction. The mention order of the two tokens follows
/// `ordering_seed`.
pub fn build_prompt(spec: &PromptSpec<'_>) -> String {
    let c_tok = spec.vocab.c_legal();
    let d_tok = spec.vocab.d_legal();
    let mut order_rng = ChaCha8Rng::seed_from_u64(spec.ordering_seed);
    let (first, second) = if order_rng.gen::<bool>() {
        (c_tok, d_tok)
    } else {
        (d_tok, c_tok)
    };

    let token_of = |a: Action| match a {
        Action::Cooperate => c_tok,
        Action::Defect => d_tok,
    };
    let row_actions: [Action; 2] = match spec.payoff_row_order {
        RowOrder::CooperateFirst => [Action::Cooperate, Action::Defect],
        RowOrder::DefectFirst => [Action::Defect, Action::Cooperate],
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        "You are playing a repeated round-based game with another agent called A."
    );
    let _ = writeln!(
        out,
        "In every round, you and A simultaneously pick one of two moves: '{first}' or '{second}'."
    );
    let _ = writeln!(out, "The points received in a round depend on both picks:");
    for own in row_actions {
        for opp in match spec.payoff_row_order {
            RowOrder::CooperateFirst => ACTIONS,
            RowOrder::DefectFirst => [Action::Defect, Action::Cooperate],
        } {
            let p = spec.game.payoff(own, opp);
            let _ = writeln!(
                out,
                "- if you pick '{}' and A picks '{}': you receive {} and A receives {}.",
                token_of(own),
                token_of(opp),
                points(p.self_points),
                points(p.opp_points),
            );
        }
    }
    let _ = writeln!(
        out,
        "You have played rounds of this game with A before. In the previous round, A picked '{}'.",
        token_of(spec.state.opp_prev)
    );
    let _ = write!(
        out,
        "Answer with exactly one word, either '{first}' or '{second}', and nothing else."
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use moralsim_core::game::{all_builtin_games, builtin_game, GameState, STATES};

    fn vocab() -> TokenVocabulary {
        TokenVocabulary::new("action1", "action2", vec![]).unwrap()
    }

    fn spec<'a>(game: &'a GameSpec, v: &'a TokenVocabulary, seed: u64) -> PromptSpec<'a> {
        PromptSpec {
            game,
            state: GameState::new(Action::Cooperate, Action::Defect),
            vocab: v,
            ordering_seed: seed,
            payoff_row_order: RowOrder::CooperateFirst,
        }
    }

    #[test]
    fn prompt_is_deterministic() {
        let game = builtin_game("IPD").unwrap();
        let v = vocab();
        assert_eq!(
            build_prompt(&spec(&game, &v, 3)),
            build_prompt(&spec(&game, &v, 3))
        );
    }

    #[test]
    fn golden_prompt_text() {
        let game = builtin_game("IPD").unwrap();
        let v = vocab();
        // Seed 1 mentions the Cooperate token first.
        let text = build_prompt(&spec(&game, &v, 1));
        let expected = "\
You are playing a repeated round-based game with another agent called A.
In every round, you and A simultaneously pick one of two moves: 'action1' or 'action2'.
The points received in a round depend on both picks:
- if you pick 'action1' and A picks 'action1': you receive 3 points and A receives 3 points.
- if you pick 'action1' and A picks 'action2': you receive 0 points and A receives 4 points.
- if you pick 'action2' and A picks 'action1': you receive 4 points and A receives 0 points.
- if you pick 'action2' and A picks 'action2': you receive 1 point and A receives 1 point.
You have played rounds of this game with A before. In the previous round, A picked 'action1'.
Answer with exactly one word, either 'action1' or 'action2', and nothing else.";
        assert_eq!(text, expected);
    }

    #[test]
    fn prompt_never_names_the_game_or_the_actions() {
        let v = vocab();
        for game in all_builtin_games() {
            for state in STATES {
                for seed in [0, 1, 2] {
                    let text = build_prompt(&PromptSpec {
                        game: &game,
                        state,
                        vocab: &v,
                        ordering_seed: seed,
                        payoff_row_order: RowOrder::CooperateFirst,
                    })
                    .to_lowercase();
                    for needle in ["prisoner", "cooperat", "defect"] {
                        assert!(!text.contains(needle), "found '{needle}'");
                    }
                }
            }
        }
    }

    #[test]
    fn both_tokens_appear_exactly_once_in_the_answer_sentence() {
        let game = builtin_game("Chicken").unwrap();
        let v = vocab();
        for seed in 0..8 {
            let text = build_prompt(&spec(&game, &v, seed));
            let answer_line = text.lines().last().unwrap();
            assert_eq!(answer_line.matches("'action1'").count(), 1);
            assert_eq!(answer_line.matches("'action2'").count(), 1);
        }
    }

    #[test]
    fn mention_order_is_balanced_over_seeds() {
        let game = builtin_game("IPD").unwrap();
        let v = vocab();
        let mut c_first = 0usize;
        let total = 1000;
        for seed in 0..total {
            let text = build_prompt(&spec(&game, &v, seed as u64));
            let line = text.lines().nth(1).unwrap();
            let c_pos = line.find("'action1'").unwrap();
            let d_pos = line.find("'action2'").unwrap();
            if c_pos < d_pos {
                c_first += 1;
            }
        }
        let frac = c_first as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.05, "fraction {frac}");
    }

    #[test]
    fn prompts_differ_across_payoffs_history_and_presentation() {
        let v = vocab();
        let games = all_builtin_games();
        let mut texts = std::collections::HashSet::new();
        for game in &games {
            for opp_prev in ACTIONS {
                for order in [RowOrder::CooperateFirst, RowOrder::DefectFirst] {
                    for seed in [1u64, 2] {
                        // Seeds 1 and 2 produce opposite mention orders.
                        let text = build_prompt(&PromptSpec {
                            game,
                            state: GameState::new(opp_prev, Action::Cooperate),
                            vocab: &v,
                            ordering_seed: seed,
                            payoff_row_order: order,
                        });
                        assert!(texts.insert(text), "collision for {}", game.name());
                    }
                }
            }
        }
    }

    #[test]
    fn swapped_vocabulary_swaps_the_payoff_rows() {
        let game = builtin_game("IPD").unwrap();
        let swapped = TokenVocabulary::new("action2", "action1", vec![]).unwrap();
        let text = build_prompt(&PromptSpec {
            game: &game,
            state: GameState::new(Action::Cooperate, Action::Cooperate),
            vocab: &swapped,
            ordering_seed: 1,
            payoff_row_order: RowOrder::CooperateFirst,
        });
        // Mutual cooperation now reads as mutual 'action2'.
        assert!(
            text.contains("- if you pick 'action2' and A picks 'action2': you receive 3 points")
        );
    }
}
