//! The five built-in iterated 2x2 games, one-step-memory states, and the
//! simultaneous step transition including illegal-move semantics.

use std::fmt;

use rand::Rng;

use crate::error::{CoreError, Result};

/// One of the two legal moves of every game in the library.
///
/// The ordering `Cooperate < Defect` is fixed and used everywhere a state or
/// action is serialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Cooperate,
    Defect,
}

pub const ACTIONS: [Action; 2] = [Action::Cooperate, Action::Defect];

impl Action {
    pub fn opposite(self) -> Action {
        match self {
            Action::Cooperate => Action::Defect,
            Action::Defect => Action::Cooperate,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Action::Cooperate => 0,
            Action::Defect => 1,
        }
    }

    pub fn from_index(i: usize) -> Action {
        ACTIONS[i]
    }

    pub fn to_char(self) -> char {
        match self {
            Action::Cooperate => 'C',
            Action::Defect => 'D',
        }
    }

    pub fn from_char(c: char) -> Option<Action> {
        match c {
            'C' => Some(Action::Cooperate),
            'D' => Some(Action::Defect),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_char())
    }
}

/// The token strings an agent may emit: two legal tokens plus any number of
/// distractors. All strings must be pairwise distinct and CSV-safe.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenVocabulary {
    c_legal: String,
    d_legal: String,
    distractors: Vec<String>,
}

impl TokenVocabulary {
    pub fn new(
        c_legal: impl Into<String>,
        d_legal: impl Into<String>,
        distractors: Vec<String>,
    ) -> Result<Self> {
        let c_legal = c_legal.into();
        let d_legal = d_legal.into();
        let mut all: Vec<&str> = vec![&c_legal, &d_legal];
        all.extend(distractors.iter().map(|s| s.as_str()));
        for (i, tok) in all.iter().enumerate() {
            if tok.is_empty() || tok.contains(',') || tok.contains(char::is_whitespace) {
                return Err(CoreError::InvalidConfig(format!(
                    "token '{tok}' must be non-empty and contain no commas or whitespace"
                )));
            }
            if all[..i].contains(tok) {
                return Err(CoreError::InvalidConfig(format!(
                    "token '{tok}' appears more than once in the vocabulary"
                )));
            }
        }
        Ok(TokenVocabulary {
            c_legal,
            d_legal,
            distractors,
        })
    }

    /// Default training vocabulary: `action1` means Cooperate, `action2`
    /// means Defect, plus `k` synthetic distractor tokens.
    pub fn training_default(k: usize) -> Self {
        let distractors = (1..=k).map(|i| format!("dud{i}")).collect();
        TokenVocabulary::new("action1", "action2", distractors).expect("static tokens are valid")
    }

    pub fn c_legal(&self) -> &str {
        &self.c_legal
    }

    pub fn d_legal(&self) -> &str {
        &self.d_legal
    }

    pub fn distractors(&self) -> &[String] {
        &self.distractors
    }

    /// Legal slots plus distractors.
    pub fn len(&self) -> usize {
        2 + self.distractors.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Token string at a slot index: 0 is the Cooperate token, 1 the Defect
    /// token, 2.. the distractors.
    pub fn token_at(&self, index: usize) -> &str {
        match index {
            0 => &self.c_legal,
            1 => &self.d_legal,
            i => &self.distractors[i - 2],
        }
    }

    /// Interpretation of an emitted slot index.
    pub fn choice_at(&self, index: usize) -> TokenChoice {
        match index {
            0 => TokenChoice::Legal(Action::Cooperate),
            1 => TokenChoice::Legal(Action::Defect),
            i => TokenChoice::Illegal(self.distractors[i - 2].clone()),
        }
    }

    /// Slot index of a choice produced by this vocabulary, if any.
    pub fn index_of(&self, choice: &TokenChoice) -> Option<usize> {
        match choice {
            TokenChoice::Legal(Action::Cooperate) => Some(0),
            TokenChoice::Legal(Action::Defect) => Some(1),
            TokenChoice::Illegal(tok) => self
                .distractors
                .iter()
                .position(|d| d == tok)
                .map(|i| i + 2),
        }
    }
}

/// An emitted action token: either one of the two legal moves, or an illegal
/// token carried verbatim.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TokenChoice {
    Legal(Action),
    Illegal(String),
}

impl TokenChoice {
    pub fn is_legal(&self) -> bool {
        matches!(self, TokenChoice::Legal(_))
    }

    pub fn action(&self) -> Option<Action> {
        match self {
            TokenChoice::Legal(a) => Some(*a),
            TokenChoice::Illegal(_) => None,
        }
    }
}

/// Points received by both players for one joint action.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PayoffPair {
    pub self_points: i64,
    pub opp_points: i64,
}

impl PayoffPair {
    pub fn new(self_points: i64, opp_points: i64) -> Self {
        PayoffPair {
            self_points,
            opp_points,
        }
    }
}

/// A named 2x2 payoff matrix. Payoffs are exact integers, indexed by
/// (own action, opponent action).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GameSpec {
    name: String,
    // [own action][opponent action]
    payoffs: [[PayoffPair; 2]; 2],
}

pub const BUILTIN_GAMES: [&str; 5] = [
    "IPD",
    "StagHunt",
    "Chicken",
    "BachStravinsky",
    "DefectiveCoordination",
];

impl GameSpec {
    pub fn new(name: impl Into<String>, payoffs: [[PayoffPair; 2]; 2]) -> Self {
        GameSpec {
            name: name.into(),
            payoffs,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Exact table lookup, total over the enum inputs.
    pub fn payoff(&self, own: Action, opp: Action) -> PayoffPair {
        self.payoffs[own.index()][opp.index()]
    }

    /// Serialize to the flat text table accepted back by [`GameSpec::from_table`]:
    /// one `self,opp,self_points,opp_points` row per joint action.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for own in ACTIONS {
            for opp in ACTIONS {
                let p = self.payoff(own, opp);
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    own.to_char(),
                    opp.to_char(),
                    p.self_points,
                    p.opp_points
                ));
            }
        }
        out
    }

    /// Parse the flat text table. All four joint actions must appear exactly
    /// once; blank lines and `#` comments are ignored.
    pub fn from_table(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut seen = [[false; 2]; 2];
        let mut payoffs = [[PayoffPair::new(0, 0); 2]; 2];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(CoreError::BadGameTable(format!(
                    "line {}: expected 'self,opp,self_points,opp_points', got '{line}'",
                    lineno + 1
                )));
            }
            let parse_action = |s: &str| -> Result<Action> {
                let mut chars = s.chars();
                match (chars.next().and_then(Action::from_char), chars.next()) {
                    (Some(a), None) => Ok(a),
                    _ => Err(CoreError::BadGameTable(format!(
                        "line {}: action must be C or D, got '{s}'",
                        lineno + 1
                    ))),
                }
            };
            let own = parse_action(fields[0])?;
            let opp = parse_action(fields[1])?;
            let parse_points = |s: &str| -> Result<i64> {
                s.parse().map_err(|_| {
                    CoreError::BadGameTable(format!(
                        "line {}: payoff must be an integer, got '{s}'",
                        lineno + 1
                    ))
                })
            };
            if seen[own.index()][opp.index()] {
                return Err(CoreError::BadGameTable(format!(
                    "line {}: duplicate row for ({},{})",
                    lineno + 1,
                    own.to_char(),
                    opp.to_char()
                )));
            }
            seen[own.index()][opp.index()] = true;
            payoffs[own.index()][opp.index()] =
                PayoffPair::new(parse_points(fields[2])?, parse_points(fields[3])?);
        }
        for own in ACTIONS {
            for opp in ACTIONS {
                if !seen[own.index()][opp.index()] {
                    return Err(CoreError::BadGameTable(format!(
                        "missing row for ({},{})",
                        own.to_char(),
                        opp.to_char()
                    )));
                }
            }
        }
        Ok(GameSpec::new(name, payoffs))
    }
}

/// Look up one of the five built-in games by name.
pub fn builtin_game(name: &str) -> Result<GameSpec> {
    let table = |cc: (i64, i64), cd: (i64, i64), dc: (i64, i64), dd: (i64, i64)| {
        [
            [PayoffPair::new(cc.0, cc.1), PayoffPair::new(cd.0, cd.1)],
            [PayoffPair::new(dc.0, dc.1), PayoffPair::new(dd.0, dd.1)],
        ]
    };
    let spec = match name {
        "IPD" => GameSpec::new("IPD", table((3, 3), (0, 4), (4, 0), (1, 1))),
        "StagHunt" => GameSpec::new("StagHunt", table((4, 4), (0, 3), (3, 0), (1, 1))),
        "Chicken" => GameSpec::new("Chicken", table((2, 2), (1, 4), (4, 1), (0, 0))),
        "BachStravinsky" => GameSpec::new("BachStravinsky", table((3, 2), (0, 0), (0, 0), (2, 3))),
        "DefectiveCoordination" => GameSpec::new(
            "DefectiveCoordination",
            table((1, 1), (0, 0), (0, 0), (4, 4)),
        ),
        _ => {
            return Err(CoreError::UnknownGame {
                name: name.to_string(),
                valid: BUILTIN_GAMES.join(", "),
            })
        }
    };
    Ok(spec)
}

/// All five built-in games in their canonical order.
pub fn all_builtin_games() -> Vec<GameSpec> {
    BUILTIN_GAMES
        .iter()
        .map(|n| builtin_game(n).expect("builtin"))
        .collect()
}

/// One player's one-step memory: the opponent's previous legal move and the
/// player's own previous legal move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GameState {
    pub opp_prev: Action,
    pub self_prev: Action,
}

/// The four reachable states in canonical order (CC, CD, DC, DD reading
/// opp_prev then self_prev).
pub const STATES: [GameState; 4] = [
    GameState {
        opp_prev: Action::Cooperate,
        self_prev: Action::Cooperate,
    },
    GameState {
        opp_prev: Action::Cooperate,
        self_prev: Action::Defect,
    },
    GameState {
        opp_prev: Action::Defect,
        self_prev: Action::Cooperate,
    },
    GameState {
        opp_prev: Action::Defect,
        self_prev: Action::Defect,
    },
];

impl GameState {
    pub fn new(opp_prev: Action, self_prev: Action) -> Self {
        GameState {
            opp_prev,
            self_prev,
        }
    }

    pub fn index(self) -> usize {
        self.opp_prev.index() * 2 + self.self_prev.index()
    }

    pub fn from_index(i: usize) -> GameState {
        STATES[i]
    }

    /// The same previous round seen from the other player's side.
    pub fn mirrored(self) -> GameState {
        GameState::new(self.self_prev, self.opp_prev)
    }

    pub fn parse(s: &str) -> Option<GameState> {
        let mut chars = s.chars();
        let opp = chars.next().and_then(Action::from_char)?;
        let own = chars.next().and_then(Action::from_char)?;
        if chars.next().is_some() {
            return None;
        }
        Some(GameState::new(opp, own))
    }
}

impl fmt::Display for GameState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.opp_prev.to_char(), self.self_prev.to_char())
    }
}

/// Everything produced by one simultaneous step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub self_choice: TokenChoice,
    pub opp_choice: TokenChoice,
    /// Present iff both choices were legal.
    pub self_payoff: Option<i64>,
    /// Present iff both choices were legal.
    pub opp_payoff: Option<i64>,
    pub next_self_state: GameState,
    pub next_opp_state: GameState,
    pub self_legal: bool,
    pub opp_legal: bool,
}

/// Resolve one simultaneous round.
///
/// Payoffs are assigned only when both choices are legal. An illegal choice
/// never reaches the other player's state: that player keeps their state
/// unchanged, while the illegal mover keeps their own previous-move component
/// and still observes the opponent's legal action.
pub fn step(
    game: &GameSpec,
    self_state: GameState,
    opp_state: GameState,
    self_choice: TokenChoice,
    opp_choice: TokenChoice,
) -> StepOutcome {
    let self_action = self_choice.action();
    let opp_action = opp_choice.action();

    let (self_payoff, opp_payoff) = match (self_action, opp_action) {
        (Some(a), Some(o)) => {
            let p = game.payoff(a, o);
            (Some(p.self_points), Some(p.opp_points))
        }
        _ => (None, None),
    };

    // A player's state moves only when the other player produced a legal
    // action; the mover's own slot keeps its last legal move.
    let next_self_state = match opp_action {
        Some(o) => GameState::new(o, self_action.unwrap_or(self_state.self_prev)),
        None => self_state,
    };
    let next_opp_state = match self_action {
        Some(a) => GameState::new(a, opp_action.unwrap_or(opp_state.self_prev)),
        None => opp_state,
    };

    StepOutcome {
        self_legal: self_action.is_some(),
        opp_legal: opp_action.is_some(),
        self_choice,
        opp_choice,
        self_payoff,
        opp_payoff,
        next_self_state,
        next_opp_state,
    }
}

/// Uniform draw over the four (opp_prev, self_prev) pairs.
pub fn random_initial_state<R: Rng>(rng: &mut R) -> GameState {
    GameState::from_index(rng.gen_range(0..4))
}
