//! Fixed-strategy opponents used for training and evaluation.

use rand::Rng;

use crate::game::{Action, GameState};

/// The four fixed strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpponentStrategy {
    TitForTat,
    AlwaysCooperate,
    AlwaysDefect,
    Random,
}

impl OpponentStrategy {
    pub fn name(self) -> &'static str {
        match self {
            OpponentStrategy::TitForTat => "tft",
            OpponentStrategy::AlwaysCooperate => "ac",
            OpponentStrategy::AlwaysDefect => "ad",
            OpponentStrategy::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<OpponentStrategy> {
        match s {
            "tft" => Some(OpponentStrategy::TitForTat),
            "ac" => Some(OpponentStrategy::AlwaysCooperate),
            "ad" => Some(OpponentStrategy::AlwaysDefect),
            "random" => Some(OpponentStrategy::Random),
            _ => None,
        }
    }
}

/// Next move for a strategy given its own state. `own_state.opp_prev` is the
/// learning agent's last legal move. Deterministic strategies never touch the
/// rng.
pub fn opponent_action<R: Rng>(
    strategy: OpponentStrategy,
    own_state: GameState,
    rng: &mut R,
) -> Action {
    match strategy {
        OpponentStrategy::TitForTat => own_state.opp_prev,
        OpponentStrategy::AlwaysCooperate => Action::Cooperate,
        OpponentStrategy::AlwaysDefect => Action::Defect,
        OpponentStrategy::Random => {
            if rng.gen::<bool>() {
                Action::Cooperate
            } else {
                Action::Defect
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::STATES;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const C: Action = Action::Cooperate;
    const D: Action = Action::Defect;

    #[test]
    fn tit_for_tat_copies_last_agent_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = GameState::new(D, C);
        assert_eq!(opponent_action(OpponentStrategy::TitForTat, s, &mut rng), D);
        let s = GameState::new(C, D);
        assert_eq!(opponent_action(OpponentStrategy::TitForTat, s, &mut rng), C);
    }

    #[test]
    fn constant_strategies() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in STATES {
            assert_eq!(
                opponent_action(OpponentStrategy::AlwaysCooperate, s, &mut rng),
                C
            );
            assert_eq!(
                opponent_action(OpponentStrategy::AlwaysDefect, s, &mut rng),
                D
            );
        }
    }

    #[test]
    fn random_is_a_fair_coin() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut coop = 0usize;
        for _ in 0..draws {
            if opponent_action(OpponentStrategy::Random, GameState::new(C, C), &mut rng) == C {
                coop += 1;
            }
        }
        let freq = coop as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn deterministic_strategies_ignore_the_rng() {
        for strategy in [
            OpponentStrategy::TitForTat,
            OpponentStrategy::AlwaysCooperate,
            OpponentStrategy::AlwaysDefect,
        ] {
            for s in STATES {
                let mut a = ChaCha8Rng::seed_from_u64(1);
                let mut b = ChaCha8Rng::seed_from_u64(99);
                assert_eq!(
                    opponent_action(strategy, s, &mut a),
                    opponent_action(strategy, s, &mut b)
                );
                // The rng state is untouched.
                assert_eq!(a, ChaCha8Rng::seed_from_u64(1));
            }
        }
    }

    #[test]
    fn tit_for_tat_never_defects_first() {
        // If every prior legal agent move was C, TFT's state always carries
        // opp_prev = C, so its move is C at every step.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = GameState::new(C, C);
        for _ in 0..50 {
            let mv = opponent_action(OpponentStrategy::TitForTat, state, &mut rng);
            assert_eq!(mv, C);
            // Agent keeps cooperating; TFT's own next state reflects that.
            state = GameState::new(C, mv);
        }
    }
}
