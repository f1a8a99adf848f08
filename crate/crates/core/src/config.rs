//! Flat key-value run configuration: strict parsing (unknown keys are hard
//! errors), documented defaults, and a lossless emitter.
//!
//! # Key reference
//!
//! | key               | default                         | meaning |
//! |-------------------|---------------------------------|---------|
//! | `game`            | (required unless `game_file`)   | built-in game name |
//! | `game_file`       | –                               | path to a custom payoff table |
//! | `reward`          | (required)                      | `game`, `deontological`, `utilitarian`, `game_deontological`, `game_then_deontological`, `game_then_utilitarian` |
//! | `switch_episode`  | `episodes / 2`                  | episode where `*_then_*` schedules switch |
//! | `xi`              | `3`                             | norm-violation penalty magnitude |
//! | `r_illegal`       | `-6`                            | illegal-token reward |
//! | `opponent`        | (required)                      | `tft`, `ac`, `ad`, `random`, `learner`, `llm` |
//! | `episodes`        | `1000`                          | training episodes |
//! | `batch_size`      | `5` (`3` when opponent=learner) | steps per episode |
//! | `seed`            | (required)                      | run seed |
//! | `out_dir`         | `runs/<game>_<reward>_<opponent>_seed<seed>` | output directory |
//! | `c_token`         | `action1`                       | token meaning Cooperate in training |
//! | `d_token`         | `action2`                       | token meaning Defect in training |
//! | `clip_epsilon`    | `0.2`                           | PPO ratio clip |
//! | `learning_rate`   | `0.05`                          | ascent step size |
//! | `update_epochs`   | `4`                             | passes per update |
//! | `kl_target`       | `0.05`                          | target policy shift per update (nats) |
//! | `kl_coef_init`    | `0.2`                           | initial KL penalty weight |
//! | `kl_gain`         | `0.1`                           | controller proportional gain |
//! | `kl_clamp`        | `0.5`                           | controller error clamp |
//! | `max_grad_norm`   | `1`                             | global gradient-norm ceiling |
//! | `distractor_count`| `3`                             | synthetic illegal tokens |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::policy::PPOConfig;
use crate::rewards::{RewardKind, RewardParams, RewardSchedule};
use crate::trainer::{GameRef, OpponentKind, RunConfig};

/// One `key = value` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvPair {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parse `key = value` lines; `#` comments and blank lines are skipped.
/// Duplicate keys are errors.
pub fn parse_kv(label: &str, text: &str) -> Result<Vec<KvPair>> {
    let mut pairs: Vec<KvPair> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| CoreError::ConfigParse {
                path: label.to_string(),
                line,
                msg: format!("expected 'key = value', got '{trimmed}'"),
            })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(CoreError::ConfigParse {
                path: label.to_string(),
                line,
                msg: "empty key".into(),
            });
        }
        if let Some(prev) = pairs.iter().find(|p| p.key == key) {
            return Err(CoreError::ConfigParse {
                path: label.to_string(),
                line,
                msg: format!("duplicate key '{key}' (first on line {})", prev.line),
            });
        }
        pairs.push(KvPair { line, key, value });
    }
    Ok(pairs)
}

pub(crate) struct KvReader<'a> {
    label: &'a str,
    pairs: Vec<KvPair>,
    used: Vec<bool>,
}

impl<'a> KvReader<'a> {
    pub fn new(label: &'a str, pairs: Vec<KvPair>) -> Self {
        let used = vec![false; pairs.len()];
        KvReader { label, pairs, used }
    }

    pub fn take(&mut self, key: &str) -> Option<(usize, String)> {
        for (i, p) in self.pairs.iter().enumerate() {
            if p.key == key && !self.used[i] {
                self.used[i] = true;
                return Some((p.line, p.value.clone()));
            }
        }
        None
    }

    pub fn parse_err(&self, line: usize, msg: String) -> CoreError {
        CoreError::ConfigParse {
            path: self.label.to_string(),
            line,
            msg,
        }
    }

    pub fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, value)) => value
                .parse::<T>()
                .map(Some)
                .map_err(|_| self.parse_err(line, format!("bad value '{value}' for '{key}'"))),
        }
    }

    /// Error out on the first key nothing consumed.
    pub fn finish(self) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            if !self.used[i] {
                return Err(CoreError::UnknownKey {
                    path: self.label.to_string(),
                    line: p.line,
                    key: p.key.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Reward-schedule names accepted by the `reward` key.
pub const REWARD_NAMES: [&str; 6] = [
    "game",
    "deontological",
    "utilitarian",
    "game_deontological",
    "game_then_deontological",
    "game_then_utilitarian",
];

fn schedule_from_name(
    name: &str,
    switch_episode: u32,
    params: RewardParams,
) -> Result<Option<RewardSchedule>> {
    let sched = match name {
        "game_then_deontological" => Some(RewardSchedule::switched(
            RewardKind::Game,
            RewardKind::Deontological,
            switch_episode,
            params,
        )?),
        "game_then_utilitarian" => Some(RewardSchedule::switched(
            RewardKind::Game,
            RewardKind::Utilitarian,
            switch_episode,
            params,
        )?),
        other => RewardKind::parse(other).map(|k| RewardSchedule::constant(k, params)),
    };
    Ok(sched)
}

/// Short label for a schedule, inverse of the `reward` key.
pub fn reward_label(schedule: &RewardSchedule) -> String {
    let segments = schedule.segments();
    match segments {
        [(0, kind)] => kind.name().to_string(),
        [(0, first), (_, second)] => format!("{}_then_{}", first.name(), second.name()),
        _ => segments
            .iter()
            .map(|(ep, k)| format!("{}@{ep}", k.name()))
            .collect::<Vec<_>>()
            .join("+"),
    }
}

pub fn default_output_dir(
    game: &GameRef,
    schedule: &RewardSchedule,
    opponent: &OpponentKind,
    seed: u64,
) -> PathBuf {
    PathBuf::from("runs").join(format!(
        "{}_{}_{}_seed{}",
        game.label(),
        reward_label(schedule),
        opponent.label(),
        seed
    ))
}

pub(crate) fn run_config_from_reader(
    reader: &mut KvReader<'_>,
    require_seed: bool,
) -> Result<RunConfig> {
    let game = match (reader.take("game"), reader.take("game_file")) {
        (Some((line, _)), Some(_)) => {
            return Err(reader.parse_err(line, "give either 'game' or 'game_file', not both".into()))
        }
        (Some((_, name)), None) => {
            // Validate the name now so typos fail at load time.
            crate::game::builtin_game(&name)?;
            GameRef::Builtin(name)
        }
        (None, Some((_, path))) => GameRef::Table(PathBuf::from(path)),
        (None, None) => {
            return Err(CoreError::InvalidConfig(
                "missing required key 'game' (or 'game_file')".into(),
            ))
        }
    };

    let opponent = match reader.take("opponent") {
        Some((line, value)) => OpponentKind::parse(&value).ok_or_else(|| {
            reader.parse_err(
                line,
                format!("unknown opponent '{value}', valid: tft, ac, ad, random, learner, llm"),
            )
        })?,
        None => {
            return Err(CoreError::InvalidConfig(
                "missing required key 'opponent'".into(),
            ))
        }
    };

    let episodes: u32 = reader.take_parsed("episodes")?.unwrap_or(1000);
    let default_batch = if opponent == OpponentKind::Learner {
        3
    } else {
        5
    };
    let batch_size: u32 = reader.take_parsed("batch_size")?.unwrap_or(default_batch);

    let params = RewardParams {
        xi: reader.take_parsed("xi")?.unwrap_or(3.0),
        r_illegal: reader.take_parsed("r_illegal")?.unwrap_or(-6.0),
    };
    let switch_given = reader.take("switch_episode");
    let switch_episode: u32 = match &switch_given {
        Some((line, value)) => value.parse().map_err(|_| {
            reader.parse_err(*line, format!("bad value '{value}' for 'switch_episode'"))
        })?,
        None => episodes / 2,
    };
    let schedule = match reader.take("reward") {
        Some((line, value)) => {
            if let Some((switch_line, _)) = &switch_given {
                if !value.contains("_then_") {
                    return Err(reader.parse_err(
                        *switch_line,
                        format!("'switch_episode' only applies to *_then_* rewards, not '{value}'"),
                    ));
                }
            }
            schedule_from_name(&value, switch_episode, params)?.ok_or_else(|| {
                reader.parse_err(
                    line,
                    format!(
                        "unknown reward '{value}', valid: {}",
                        REWARD_NAMES.join(", ")
                    ),
                )
            })?
        }
        None => {
            return Err(CoreError::InvalidConfig(
                "missing required key 'reward'".into(),
            ))
        }
    };

    let seed: u64 = match reader.take_parsed("seed")? {
        Some(s) => s,
        None if require_seed => {
            return Err(CoreError::InvalidConfig(
                "missing required key 'seed'".into(),
            ))
        }
        None => 0,
    };

    let defaults = PPOConfig::default();
    let agent = PPOConfig {
        clip_epsilon: reader
            .take_parsed("clip_epsilon")?
            .unwrap_or(defaults.clip_epsilon),
        learning_rate: reader
            .take_parsed("learning_rate")?
            .unwrap_or(defaults.learning_rate),
        update_epochs: reader
            .take_parsed("update_epochs")?
            .unwrap_or(defaults.update_epochs),
        kl_target: reader
            .take_parsed("kl_target")?
            .unwrap_or(defaults.kl_target),
        kl_coef_init: reader
            .take_parsed("kl_coef_init")?
            .unwrap_or(defaults.kl_coef_init),
        kl_gain: reader.take_parsed("kl_gain")?.unwrap_or(defaults.kl_gain),
        kl_clamp: reader.take_parsed("kl_clamp")?.unwrap_or(defaults.kl_clamp),
        max_grad_norm: reader
            .take_parsed("max_grad_norm")?
            .unwrap_or(defaults.max_grad_norm),
        distractor_count: reader
            .take_parsed("distractor_count")?
            .unwrap_or(defaults.distractor_count),
    };

    let c_token = reader
        .take("c_token")
        .map(|(_, v)| v)
        .unwrap_or_else(|| "action1".into());
    let d_token = reader
        .take("d_token")
        .map(|(_, v)| v)
        .unwrap_or_else(|| "action2".into());

    let output_dir = reader
        .take("out_dir")
        .map(|(_, v)| PathBuf::from(v))
        .unwrap_or_else(|| default_output_dir(&game, &schedule, &opponent, seed));

    let cfg = RunConfig {
        game,
        opponent,
        schedule,
        episodes,
        batch_size,
        seed,
        agent,
        c_token,
        d_token,
        output_dir,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a run configuration from text. `label` names the source in errors.
pub fn run_config_from_str(label: &str, text: &str) -> Result<RunConfig> {
    let mut reader = KvReader::new(label, parse_kv(label, text)?);
    let cfg = run_config_from_reader(&mut reader, true)?;
    reader.finish()?;
    Ok(cfg)
}

/// Load a run configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::io(format!("reading config {}", path.display()), e))?;
    run_config_from_str(&path.display().to_string(), &text)
}

/// Serialize a configuration with every value explicit; parsing the output
/// reproduces the configuration exactly.
pub fn run_config_to_string(cfg: &RunConfig) -> String {
    let mut out = String::new();
    match &cfg.game {
        GameRef::Builtin(name) => {
            let _ = writeln!(out, "game = {name}");
        }
        GameRef::Table(path) => {
            let _ = writeln!(out, "game_file = {}", path.display());
        }
    }
    let _ = writeln!(out, "reward = {}", reward_label(&cfg.schedule));
    if let [(0, _), (switch, _)] = cfg.schedule.segments() {
        let _ = writeln!(out, "switch_episode = {switch}");
    }
    let _ = writeln!(out, "xi = {}", cfg.schedule.params.xi);
    let _ = writeln!(out, "r_illegal = {}", cfg.schedule.params.r_illegal);
    let _ = writeln!(out, "opponent = {}", cfg.opponent.label());
    let _ = writeln!(out, "episodes = {}", cfg.episodes);
    let _ = writeln!(out, "batch_size = {}", cfg.batch_size);
    let _ = writeln!(out, "seed = {}", cfg.seed);
    let _ = writeln!(out, "out_dir = {}", cfg.output_dir.display());
    let _ = writeln!(out, "c_token = {}", cfg.c_token);
    let _ = writeln!(out, "d_token = {}", cfg.d_token);
    let _ = writeln!(out, "clip_epsilon = {}", cfg.agent.clip_epsilon);
    let _ = writeln!(out, "learning_rate = {}", cfg.agent.learning_rate);
    let _ = writeln!(out, "update_epochs = {}", cfg.agent.update_epochs);
    let _ = writeln!(out, "kl_target = {}", cfg.agent.kl_target);
    let _ = writeln!(out, "kl_coef_init = {}", cfg.agent.kl_coef_init);
    let _ = writeln!(out, "kl_gain = {}", cfg.agent.kl_gain);
    let _ = writeln!(out, "kl_clamp = {}", cfg.agent.kl_clamp);
    let _ = writeln!(out, "max_grad_norm = {}", cfg.agent.max_grad_norm);
    let _ = writeln!(out, "distractor_count = {}", cfg.agent.distractor_count);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opponents::OpponentStrategy;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let cfg = run_config_from_str(
            "test",
            "game = IPD\nreward = deontological\nopponent = tft\nseed = 1\n",
        )
        .unwrap();
        assert_eq!(cfg.episodes, 1000);
        assert_eq!(cfg.batch_size, 5);
        assert_eq!(cfg.schedule.params.xi, 3.0);
        assert_eq!(cfg.schedule.params.r_illegal, -6.0);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.c_token, "action1");
        assert_eq!(cfg.agent.distractor_count, 3);
        assert_eq!(
            cfg.opponent,
            OpponentKind::Fixed(OpponentStrategy::TitForTat)
        );
        assert_eq!(
            cfg.output_dir,
            PathBuf::from("runs/IPD_deontological_tft_seed1")
        );
    }

    #[test]
    fn learner_opponent_defaults_to_batch_of_three() {
        let cfg = run_config_from_str(
            "test",
            "game = IPD\nreward = game\nopponent = learner\nseed = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.batch_size, 3);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let err = run_config_from_str(
            "test",
            "game = IPD\nreward = game\nopponent = tft\nseed = 1\nfoo = 1\n",
        )
        .unwrap_err();
        match err {
            CoreError::UnknownKey { key, line, .. } => {
                assert_eq!(key, "foo");
                assert_eq!(line, 5);
            }
            other => panic!("expected unknown-key error, got {other}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = run_config_from_str("test", "game = IPD\nnot a pair\n").unwrap_err();
        match err {
            CoreError::ConfigParse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
        let err = run_config_from_str(
            "test",
            "game = IPD\nreward = game\nopponent = tft\nseed = 1\nepisodes = many\n",
        )
        .unwrap_err();
        match err {
            CoreError::ConfigParse { line, .. } => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn domain_validation_is_enforced() {
        let err = run_config_from_str(
            "test",
            "game = IPD\nreward = game\nopponent = tft\nseed = 1\nepisodes = 0\n",
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::InvalidConfig(_)));
        let err = run_config_from_str(
            "test",
            "game = Monopoly\nreward = game\nopponent = tft\nseed = 1\n",
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::UnknownGame { .. }));
    }

    #[test]
    fn unlearning_schedule_switches_at_half_by_default() {
        let cfg = run_config_from_str(
            "test",
            "game = IPD\nreward = game_then_deontological\nopponent = tft\nseed = 1\n",
        )
        .unwrap();
        assert_eq!(cfg.schedule.segments().len(), 2);
        assert_eq!(cfg.schedule.segments()[1].0, 500);
        assert_eq!(cfg.schedule.kind_at(499), RewardKind::Game);
        assert_eq!(cfg.schedule.kind_at(500), RewardKind::Deontological);
    }

    #[test]
    fn round_trip_is_lossless() {
        let texts = [
            "game = IPD\nreward = deontological\nopponent = tft\nseed = 1\n",
            "game = Chicken\nreward = game_then_utilitarian\nopponent = random\nseed = 9\n\
             episodes = 64\nbatch_size = 2\nswitch_episode = 10\nxi = 2.5\nr_illegal = -4\n\
             learning_rate = 0.01\ndistractor_count = 0\nc_token = xx\nd_token = yy\n",
        ];
        for text in texts {
            let cfg = run_config_from_str("test", text).unwrap();
            let emitted = run_config_to_string(&cfg);
            let back = run_config_from_str("emitted", &emitted).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(run_config_to_string(&back), emitted);
        }
    }

    #[test]
    fn switch_episode_requires_a_switching_reward() {
        let err = run_config_from_str(
            "test",
            "game = IPD\nreward = game\nopponent = tft\nseed = 1\nswitch_episode = 100\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("switch_episode"), "{err}");
        // And it still works where it belongs.
        let cfg = run_config_from_str(
            "test",
            "game = IPD\nreward = game_then_utilitarian\nopponent = tft\nseed = 1\nswitch_episode = 100\n",
        )
        .unwrap();
        assert_eq!(cfg.schedule.segments()[1].0, 100);
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = parse_kv("test", "a = 1\na = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }
}
