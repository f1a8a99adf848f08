//! The four intrinsic reward functions, the illegal-token penalty,
//! episode-indexed reward schedules, and the reward bounds used to normalize
//! regret.

use crate::error::{CoreError, Result};
use crate::game::{Action, GameSpec, TokenChoice, ACTIONS};

/// Which reward signal drives an update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RewardKind {
    /// Own game payoff (the selfish baseline).
    Game,
    /// Penalty for defecting against an opponent who cooperated last round.
    Deontological,
    /// Sum of both players' payoffs this round.
    Utilitarian,
    /// Own payoff with the defection penalty folded in.
    GameDeontological,
}

pub const REWARD_KINDS: [RewardKind; 4] = [
    RewardKind::Game,
    RewardKind::Deontological,
    RewardKind::Utilitarian,
    RewardKind::GameDeontological,
];

impl RewardKind {
    pub fn name(self) -> &'static str {
        match self {
            RewardKind::Game => "game",
            RewardKind::Deontological => "deontological",
            RewardKind::Utilitarian => "utilitarian",
            RewardKind::GameDeontological => "game_deontological",
        }
    }

    pub fn parse(s: &str) -> Option<RewardKind> {
        match s {
            "game" => Some(RewardKind::Game),
            "deontological" => Some(RewardKind::Deontological),
            "utilitarian" => Some(RewardKind::Utilitarian),
            "game_deontological" => Some(RewardKind::GameDeontological),
            _ => None,
        }
    }

    /// True when the reward formula reads game payoffs.
    pub fn needs_payoffs(self) -> bool {
        !matches!(self, RewardKind::Deontological)
    }
}

/// Penalty magnitudes shared by every reward kind.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardParams {
    /// Size of the norm-violation penalty. Must be >= 0.
    pub xi: f64,
    /// Reward for emitting a token outside the legal pair. Must be < 0.
    pub r_illegal: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            xi: 3.0,
            r_illegal: -6.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if self.xi < 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "xi must be >= 0, got {}",
                self.xi
            )));
        }
        if self.r_illegal >= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "r_illegal must be < 0, got {}",
                self.r_illegal
            )));
        }
        Ok(())
    }
}

/// Piecewise-constant mapping from episode index to reward kind.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardSchedule {
    /// (first episode, kind) segments; the first starts at 0 and the starts
    /// are strictly increasing.
    segments: Vec<(u32, RewardKind)>,
    pub params: RewardParams,
}

impl RewardSchedule {
    pub fn new(segments: Vec<(u32, RewardKind)>, params: RewardParams) -> Result<Self> {
        params.validate()?;
        match segments.first() {
            Some((0, _)) => {}
            _ => {
                return Err(CoreError::InvalidConfig(
                    "reward schedule must start at episode 0".into(),
                ))
            }
        }
        for w in segments.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(CoreError::InvalidConfig(format!(
                    "reward schedule segment starts must increase, got {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(RewardSchedule { segments, params })
    }

    pub fn constant(kind: RewardKind, params: RewardParams) -> Self {
        RewardSchedule::new(vec![(0, kind)], params).expect("single segment is valid")
    }

    /// First half one kind, second half another.
    pub fn switched(
        first: RewardKind,
        second: RewardKind,
        switch_episode: u32,
        params: RewardParams,
    ) -> Result<Self> {
        RewardSchedule::new(vec![(0, first), (switch_episode, second)], params)
    }

    pub fn segments(&self) -> &[(u32, RewardKind)] {
        &self.segments
    }

    /// Kind of the last segment whose start is <= episode.
    pub fn kind_at(&self, episode: u32) -> RewardKind {
        self.segments
            .iter()
            .take_while(|(start, _)| *start <= episode)
            .last()
            .expect("first segment starts at 0")
            .1
    }
}

/// Everything a reward formula may read about one step, from the acting
/// player's side. Payoffs are present iff both simultaneous choices were
/// legal.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardContext {
    pub self_choice: TokenChoice,
    /// The opponent's move on the previous round.
    pub opp_prev: Action,
    pub self_payoff: Option<f64>,
    pub opp_payoff: Option<f64>,
}

impl RewardContext {
    pub fn legal(action: Action, opp_prev: Action, self_payoff: f64, opp_payoff: f64) -> Self {
        RewardContext {
            self_choice: TokenChoice::Legal(action),
            opp_prev,
            self_payoff: Some(self_payoff),
            opp_payoff: Some(opp_payoff),
        }
    }

    pub fn illegal(token: impl Into<String>, opp_prev: Action) -> Self {
        RewardContext {
            self_choice: TokenChoice::Illegal(token.into()),
            opp_prev,
            self_payoff: None,
            opp_payoff: None,
        }
    }
}

/// Evaluate one reward formula on one step context.
///
/// Any illegal token earns `r_illegal` regardless of kind. Payoff-reading
/// kinds fail if a legal choice arrives without payoffs.
pub fn moral_reward(kind: RewardKind, params: &RewardParams, ctx: &RewardContext) -> Result<f64> {
    let action = match &ctx.self_choice {
        TokenChoice::Illegal(_) => return Ok(params.r_illegal),
        TokenChoice::Legal(a) => *a,
    };
    let own = || ctx.self_payoff.ok_or(CoreError::MissingPayoff { kind });
    let both = || -> Result<(f64, f64)> {
        match (ctx.self_payoff, ctx.opp_payoff) {
            (Some(s), Some(o)) => Ok((s, o)),
            _ => Err(CoreError::MissingPayoff { kind }),
        }
    };
    let violates_norm = action == Action::Defect && ctx.opp_prev == Action::Cooperate;
    let reward = match kind {
        RewardKind::Game => own()?,
        RewardKind::Deontological => {
            if violates_norm {
                -params.xi
            } else {
                0.0
            }
        }
        RewardKind::Utilitarian => {
            let (s, o) = both()?;
            s + o
        }
        RewardKind::GameDeontological => {
            let base = own()?;
            if violates_norm {
                base - params.xi
            } else {
                base
            }
        }
    };
    Ok(reward)
}

/// Min and max moral reward over the agent's two legal actions, holding the
/// previous state and the opponent's realized simultaneous action fixed.
/// Illegal emissions are excluded.
pub fn state_bounds(
    kind: RewardKind,
    params: &RewardParams,
    game: &GameSpec,
    opp_prev: Action,
    opp_now: Action,
) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for own in ACTIONS {
        let p = game.payoff(own, opp_now);
        let ctx = RewardContext::legal(own, opp_prev, p.self_points as f64, p.opp_points as f64);
        let r = moral_reward(kind, params, &ctx).expect("payoffs present");
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi)
}

/// Min and max moral reward over every legal (own action, opponent action,
/// opponent previous action) context of a game. The spread `max - min` is the
/// per-game regret denominator; a zero spread is an error because it cannot
/// normalize anything.
pub fn game_bounds(kind: RewardKind, params: &RewardParams, game: &GameSpec) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for opp_prev in ACTIONS {
        for opp_now in ACTIONS {
            let (s_lo, s_hi) = state_bounds(kind, params, game, opp_prev, opp_now);
            lo = lo.min(s_lo);
            hi = hi.max(s_hi);
        }
    }
    if lo == hi {
        return Err(CoreError::DegenerateRange {
            kind,
            game: game.name().to_string(),
            value: lo,
        });
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{all_builtin_games, builtin_game};

    const C: Action = Action::Cooperate;
    const D: Action = Action::Defect;

    fn params() -> RewardParams {
        RewardParams::default()
    }

    // Independent case table, written straight from the reward definitions
    // with payoff tables retyped by hand. Deliberately not sharing any code
    // with the implementation above.
    mod oracle {
        use super::{RewardKind, C, D};
        use crate::game::Action;

        // [own][opp] -> (own points, opp points), per game name.
        pub fn payoff_table(game: &str) -> [[(f64, f64); 2]; 2] {
            match game {
                "IPD" => [[(3., 3.), (0., 4.)], [(4., 0.), (1., 1.)]],
                "StagHunt" => [[(4., 4.), (0., 3.)], [(3., 0.), (1., 1.)]],
                "Chicken" => [[(2., 2.), (1., 4.)], [(4., 1.), (0., 0.)]],
                "BachStravinsky" => [[(3., 2.), (0., 0.)], [(0., 0.), (2., 3.)]],
                "DefectiveCoordination" => [[(1., 1.), (0., 0.)], [(0., 0.), (4., 4.)]],
                _ => panic!("unknown game {game}"),
            }
        }

        fn idx(a: Action) -> usize {
            if a == C {
                0
            } else {
                1
            }
        }

        /// None encodes "the formula needs payoffs and has none".
        pub fn reward(
            kind: RewardKind,
            xi: f64,
            r_illegal: f64,
            game: &str,
            own: Option<Action>, // None = illegal token
            opp_prev: Action,
            opp_now: Option<Action>, // None = opponent had no legal move
        ) -> Option<f64> {
            let own = match own {
                None => return Some(r_illegal),
                Some(a) => a,
            };
            let pay = opp_now.map(|o| payoff_table(game)[idx(own)][idx(o)]);
            match kind {
                RewardKind::Game => pay.map(|(s, _)| s),
                RewardKind::Deontological => {
                    if own == D && opp_prev == C {
                        Some(-xi)
                    } else {
                        Some(0.0)
                    }
                }
                RewardKind::Utilitarian => pay.map(|(s, o)| s + o),
                RewardKind::GameDeontological => {
                    pay.map(|(s, _)| if own == D && opp_prev == C { s - xi } else { s })
                }
            }
        }
    }

    #[test]
    fn matches_brute_force_case_table_everywhere() {
        let p = params();
        for game in all_builtin_games() {
            for kind in REWARD_KINDS {
                for opp_prev in ACTIONS {
                    // Illegal emission.
                    let ctx = RewardContext::illegal("junk", opp_prev);
                    let got = moral_reward(kind, &p, &ctx).unwrap();
                    let want =
                        oracle::reward(kind, p.xi, p.r_illegal, game.name(), None, opp_prev, None)
                            .unwrap();
                    assert_eq!(got, want);

                    for own in ACTIONS {
                        // Legal move with a resolved game.
                        for opp_now in ACTIONS {
                            let pay = game.payoff(own, opp_now);
                            let ctx = RewardContext::legal(
                                own,
                                opp_prev,
                                pay.self_points as f64,
                                pay.opp_points as f64,
                            );
                            let got = moral_reward(kind, &p, &ctx).unwrap();
                            let want = oracle::reward(
                                kind,
                                p.xi,
                                p.r_illegal,
                                game.name(),
                                Some(own),
                                opp_prev,
                                Some(opp_now),
                            )
                            .unwrap();
                            assert_eq!(got, want, "{} {kind:?}", game.name());
                        }
                        // Legal move without payoffs.
                        let ctx = RewardContext {
                            self_choice: TokenChoice::Legal(own),
                            opp_prev,
                            self_payoff: None,
                            opp_payoff: None,
                        };
                        let got = moral_reward(kind, &p, &ctx);
                        let want = oracle::reward(
                            kind,
                            p.xi,
                            p.r_illegal,
                            game.name(),
                            Some(own),
                            opp_prev,
                            None,
                        );
                        match want {
                            Some(w) => assert_eq!(got.unwrap(), w),
                            None => assert!(matches!(got, Err(CoreError::MissingPayoff { .. }))),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reward_examples() {
        let p = params();
        let deont = |own, opp_prev| {
            moral_reward(
                RewardKind::Deontological,
                &p,
                &RewardContext::legal(own, opp_prev, 0.0, 0.0),
            )
            .unwrap()
        };
        assert_eq!(deont(D, C), -3.0);
        assert_eq!(deont(C, C), 0.0);

        for kind in REWARD_KINDS {
            let r = moral_reward(kind, &p, &RewardContext::illegal("x", C)).unwrap();
            assert_eq!(r, -6.0);
        }

        let util = moral_reward(
            RewardKind::Utilitarian,
            &p,
            &RewardContext::legal(D, C, 4.0, 0.0),
        )
        .unwrap();
        assert_eq!(util, 4.0);

        let gd = moral_reward(
            RewardKind::GameDeontological,
            &p,
            &RewardContext::legal(D, C, 4.0, 0.0),
        )
        .unwrap();
        assert_eq!(gd, 1.0);
    }

    #[test]
    fn deontological_rewards_take_only_three_values() {
        let p = params();
        let allowed = [-p.xi, 0.0, p.r_illegal];
        for opp_prev in ACTIONS {
            for choice in [
                TokenChoice::Legal(C),
                TokenChoice::Legal(D),
                TokenChoice::Illegal("q".into()),
            ] {
                let ctx = RewardContext {
                    self_choice: choice,
                    opp_prev,
                    self_payoff: Some(2.0),
                    opp_payoff: Some(2.0),
                };
                let r = moral_reward(RewardKind::Deontological, &p, &ctx).unwrap();
                assert!(allowed.contains(&r));
            }
        }
    }

    #[test]
    fn utilitarian_is_symmetric_in_payoffs() {
        let p = params();
        for game in all_builtin_games() {
            for own in ACTIONS {
                for opp in ACTIONS {
                    let pay = game.payoff(own, opp);
                    let a =
                        RewardContext::legal(own, C, pay.self_points as f64, pay.opp_points as f64);
                    let b =
                        RewardContext::legal(own, C, pay.opp_points as f64, pay.self_points as f64);
                    assert_eq!(
                        moral_reward(RewardKind::Utilitarian, &p, &a).unwrap(),
                        moral_reward(RewardKind::Utilitarian, &p, &b).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn game_deontological_decomposes() {
        let p = params();
        for game in all_builtin_games() {
            for own in ACTIONS {
                for opp_prev in ACTIONS {
                    for opp_now in ACTIONS {
                        let pay = game.payoff(own, opp_now);
                        let ctx = RewardContext::legal(
                            own,
                            opp_prev,
                            pay.self_points as f64,
                            pay.opp_points as f64,
                        );
                        let combined =
                            moral_reward(RewardKind::GameDeontological, &p, &ctx).unwrap();
                        let base = moral_reward(RewardKind::Game, &p, &ctx).unwrap();
                        let deont = moral_reward(RewardKind::Deontological, &p, &ctx).unwrap();
                        assert_eq!(combined, base + deont);
                    }
                }
            }
        }
    }

    #[test]
    fn schedule_switches_kinds() {
        let sched =
            RewardSchedule::switched(RewardKind::Game, RewardKind::Deontological, 500, params())
                .unwrap();
        assert_eq!(sched.kind_at(250), RewardKind::Game);
        assert_eq!(sched.kind_at(499), RewardKind::Game);
        assert_eq!(sched.kind_at(500), RewardKind::Deontological);
        assert_eq!(sched.kind_at(750), RewardKind::Deontological);

        let flat = RewardSchedule::constant(RewardKind::Utilitarian, params());
        for ep in [0, 1, 999, 10_000] {
            assert_eq!(flat.kind_at(ep), RewardKind::Utilitarian);
        }
    }

    #[test]
    fn schedule_rejects_bad_segments() {
        assert!(RewardSchedule::new(vec![(1, RewardKind::Game)], params()).is_err());
        assert!(RewardSchedule::new(
            vec![(0, RewardKind::Game), (0, RewardKind::Utilitarian)],
            params()
        )
        .is_err());
        assert!(RewardSchedule::new(vec![], params()).is_err());
    }

    #[test]
    fn state_bounds_examples() {
        let p = params();
        let ipd = builtin_game("IPD").unwrap();
        // Own C gives 3+3=6, own D gives 4+0=4.
        assert_eq!(
            state_bounds(RewardKind::Utilitarian, &p, &ipd, C, C),
            (4.0, 6.0)
        );
        for game in all_builtin_games() {
            for opp_now in ACTIONS {
                assert_eq!(
                    state_bounds(RewardKind::Deontological, &p, &game, C, opp_now),
                    (-3.0, 0.0)
                );
                assert_eq!(
                    state_bounds(RewardKind::Deontological, &p, &game, D, opp_now),
                    (0.0, 0.0)
                );
            }
        }
    }

    #[test]
    fn state_bounds_bracket_every_realizable_reward() {
        let p = params();
        for game in all_builtin_games() {
            for kind in REWARD_KINDS {
                for opp_prev in ACTIONS {
                    for opp_now in ACTIONS {
                        let (lo, hi) = state_bounds(kind, &p, &game, opp_prev, opp_now);
                        for own in ACTIONS {
                            let pay = game.payoff(own, opp_now);
                            let ctx = RewardContext::legal(
                                own,
                                opp_prev,
                                pay.self_points as f64,
                                pay.opp_points as f64,
                            );
                            let r = moral_reward(kind, &p, &ctx).unwrap();
                            assert!(lo <= r && r <= hi);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn game_bounds_examples() {
        let p = params();
        let dc = builtin_game("DefectiveCoordination").unwrap();
        assert_eq!(
            game_bounds(RewardKind::Utilitarian, &p, &dc).unwrap(),
            (0.0, 8.0)
        );
        let chicken = builtin_game("Chicken").unwrap();
        assert_eq!(
            game_bounds(RewardKind::Utilitarian, &p, &chicken).unwrap(),
            (0.0, 5.0)
        );
        let ipd = builtin_game("IPD").unwrap();
        assert_eq!(
            game_bounds(RewardKind::Deontological, &p, &ipd).unwrap(),
            (-3.0, 0.0)
        );
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn deontological_range_holds_for_any_params(
                xi in 0.0f64..100.0,
                r_illegal in -100.0f64..-0.01,
                own_legal in proptest::bool::ANY,
                own_defects in proptest::bool::ANY,
                opp_prev_defects in proptest::bool::ANY,
                payoff in -50.0f64..50.0,
            ) {
                let p = RewardParams { xi, r_illegal };
                let opp_prev = if opp_prev_defects { D } else { C };
                let ctx = if own_legal {
                    RewardContext::legal(if own_defects { D } else { C }, opp_prev, payoff, payoff)
                } else {
                    RewardContext::illegal("zzz", opp_prev)
                };
                let r = moral_reward(RewardKind::Deontological, &p, &ctx).unwrap();
                prop_assert!(r == -xi || r == 0.0 || r == r_illegal);
            }

            #[test]
            fn utilitarian_symmetry_holds_for_any_payoffs(
                own in -50.0f64..50.0,
                opp in -50.0f64..50.0,
            ) {
                let p = RewardParams::default();
                let a = RewardContext::legal(C, C, own, opp);
                let b = RewardContext::legal(C, C, opp, own);
                prop_assert_eq!(
                    moral_reward(RewardKind::Utilitarian, &p, &a).unwrap(),
                    moral_reward(RewardKind::Utilitarian, &p, &b).unwrap()
                );
            }
        }
    }

    #[test]
    fn game_bounds_degenerate_range_is_an_error() {
        let p = RewardParams {
            xi: 0.0,
            r_illegal: -6.0,
        };
        let ipd = builtin_game("IPD").unwrap();
        let err = game_bounds(RewardKind::Deontological, &p, &ipd).unwrap_err();
        assert!(matches!(err, CoreError::DegenerateRange { .. }));
    }
}
