//! Episode orchestration: state sampling, N-step batches, reward computation
//! under the active schedule segment, PPO updates, and learner-vs-learner
//! co-training, with line-delimited step logs and per-episode metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config;
use crate::error::{CoreError, Result};
use crate::game::{
    random_initial_state, step, Action, GameSpec, GameState, TokenChoice, TokenVocabulary,
};
use crate::opponents::{opponent_action, OpponentStrategy};
use crate::policy::{
    ppo_update, ExperienceRecord, KLController, PPOConfig, Policy, RewardNormalizer,
};
use crate::rewards::{moral_reward, RewardContext, RewardKind, RewardSchedule, REWARD_KINDS};

/// Who the learning agent plays against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpponentKind {
    Fixed(OpponentStrategy),
    /// Another learner, trained simultaneously (co-training only).
    Learner,
    /// A remote endpoint. Accepted by the config surface but only meaningful
    /// for evaluation; training against it is rejected.
    Llm,
}

impl OpponentKind {
    pub fn label(&self) -> &'static str {
        match self {
            OpponentKind::Fixed(s) => s.name(),
            OpponentKind::Learner => "learner",
            OpponentKind::Llm => "llm",
        }
    }

    pub fn parse(s: &str) -> Option<OpponentKind> {
        match s {
            "learner" => Some(OpponentKind::Learner),
            "llm" => Some(OpponentKind::Llm),
            other => OpponentStrategy::parse(other).map(OpponentKind::Fixed),
        }
    }
}

/// Which game a run plays: a built-in name or a payoff table on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GameRef {
    Builtin(String),
    Table(PathBuf),
}

impl GameRef {
    pub fn label(&self) -> String {
        match self {
            GameRef::Builtin(name) => name.clone(),
            GameRef::Table(path) => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "custom".into()),
        }
    }

    pub fn resolve(&self) -> Result<GameSpec> {
        match self {
            GameRef::Builtin(name) => crate::game::builtin_game(name),
            GameRef::Table(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CoreError::io(format!("reading game table {}", path.display()), e)
                })?;
                GameSpec::from_table(self.label(), &text)
            }
        }
    }
}

/// Everything one training run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub game: GameRef,
    pub opponent: OpponentKind,
    pub schedule: RewardSchedule,
    pub episodes: u32,
    pub batch_size: u32,
    pub seed: u64,
    pub agent: PPOConfig,
    pub c_token: String,
    pub d_token: String,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes < 1 {
            return Err(CoreError::InvalidConfig("episodes must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(CoreError::InvalidConfig("batch_size must be >= 1".into()));
        }
        self.agent.validate()?;
        self.schedule.params.validate()?;
        self.vocabulary()?;
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<TokenVocabulary> {
        let distractors = (1..=self.agent.distractor_count)
            .map(|i| format!("dud{i}"))
            .collect();
        TokenVocabulary::new(self.c_token.clone(), self.d_token.clone(), distractors)
    }
}

/// One step row of the trajectory log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub episode: u32,
    pub step: u32,
    pub reward_kind: RewardKind,
    pub self_state: GameState,
    pub opp_state: GameState,
    pub self_token: String,
    pub self_legal: bool,
    pub opp_choice: TokenChoice,
    pub self_payoff: Option<i64>,
    pub opp_payoff: Option<i64>,
    pub reward_raw: f64,
}

pub const TRAJECTORY_HEADER: &str = "episode,step,reward_kind,self_state,opp_state,self_token,self_legal,opp_action,self_payoff,opp_payoff,reward_raw";

impl TrajectoryRow {
    pub fn to_csv(&self) -> String {
        let opp = match &self.opp_choice {
            TokenChoice::Legal(a) => a.to_string(),
            TokenChoice::Illegal(tok) => format!("!{tok}"),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.step,
            self.reward_kind.name(),
            self.self_state,
            self.opp_state,
            self.self_token,
            self.self_legal,
            opp,
            self.self_payoff.map(|p| p.to_string()).unwrap_or_default(),
            self.opp_payoff.map(|p| p.to_string()).unwrap_or_default(),
            self.reward_raw,
        )
    }

    pub fn from_csv(line: &str) -> Option<TrajectoryRow> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return None;
        }
        let opp_choice = match f[7].strip_prefix('!') {
            Some(tok) => TokenChoice::Illegal(tok.to_string()),
            None => TokenChoice::Legal(Action::from_char(f[7].chars().next()?)?),
        };
        let opt_i64 = |s: &str| -> Option<Option<i64>> {
            if s.is_empty() {
                Some(None)
            } else {
                s.parse().ok().map(Some)
            }
        };
        Some(TrajectoryRow {
            episode: f[0].parse().ok()?,
            step: f[1].parse().ok()?,
            reward_kind: RewardKind::parse(f[2])?,
            self_state: GameState::parse(f[3])?,
            opp_state: GameState::parse(f[4])?,
            self_token: f[5].to_string(),
            self_legal: f[6].parse().ok()?,
            opp_choice,
            self_payoff: opt_i64(f[8])?,
            opp_payoff: opt_i64(f[9])?,
            reward_raw: f[10].parse().ok()?,
        })
    }

    /// The reward context this row describes, as seen by the acting player.
    pub fn reward_context(&self, vocab: &TokenVocabulary) -> RewardContext {
        let self_choice = if self.self_legal {
            if self.self_token == vocab.c_legal() {
                TokenChoice::Legal(Action::Cooperate)
            } else {
                TokenChoice::Legal(Action::Defect)
            }
        } else {
            TokenChoice::Illegal(self.self_token.clone())
        };
        RewardContext {
            self_choice,
            opp_prev: self.self_state.opp_prev,
            self_payoff: self.self_payoff.map(|p| p as f64),
            opp_payoff: self.opp_payoff.map(|p| p as f64),
        }
    }
}

pub fn parse_trajectory(text: &str) -> Result<Vec<TrajectoryRow>> {
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line == TRAJECTORY_HEADER || line.trim().is_empty() {
            continue;
        }
        rows.push(
            TrajectoryRow::from_csv(line).ok_or_else(|| CoreError::BadLog {
                path: "<trajectory>".into(),
                msg: format!("bad row: {line}"),
            })?,
        );
    }
    Ok(rows)
}

/// Per-episode aggregates, logged for every episode with no thinning.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: u32,
    pub reward_kind: RewardKind,
    pub mean_reward_raw: f64,
    /// What each reward kind would have paid on this episode's steps, in
    /// [`REWARD_KINDS`] order.
    pub mean_reward_by_kind: [f64; 4],
    /// Unconditional shares over the episode's steps; together with
    /// `illegal_rate` they partition 1.
    pub freq_c_after_c: f64,
    pub freq_d_after_c: f64,
    pub freq_c_after_d: f64,
    pub freq_d_after_d: f64,
    pub illegal_rate: f64,
    pub kl_observed: f64,
    pub kl_coef: f64,
}

pub const METRICS_HEADER: &str = "episode,reward_kind,mean_reward_raw,mean_game,mean_deontological,mean_utilitarian,mean_game_deontological,freq_c_after_c,freq_d_after_c,freq_c_after_d,freq_d_after_d,illegal_rate,kl_observed,kl_coef";

impl EpisodeMetrics {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.reward_kind.name(),
            self.mean_reward_raw,
            self.mean_reward_by_kind[0],
            self.mean_reward_by_kind[1],
            self.mean_reward_by_kind[2],
            self.mean_reward_by_kind[3],
            self.freq_c_after_c,
            self.freq_d_after_c,
            self.freq_c_after_d,
            self.freq_d_after_d,
            self.illegal_rate,
            self.kl_observed,
            self.kl_coef,
        )
    }

    pub fn from_csv(line: &str) -> Option<EpisodeMetrics> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return None;
        }
        let num = |s: &str| s.parse::<f64>().ok();
        Some(EpisodeMetrics {
            episode: f[0].parse().ok()?,
            reward_kind: RewardKind::parse(f[1])?,
            mean_reward_raw: num(f[2])?,
            mean_reward_by_kind: [num(f[3])?, num(f[4])?, num(f[5])?, num(f[6])?],
            freq_c_after_c: num(f[7])?,
            freq_d_after_c: num(f[8])?,
            freq_c_after_d: num(f[9])?,
            freq_d_after_d: num(f[10])?,
            illegal_rate: num(f[11])?,
            kl_observed: num(f[12])?,
            kl_coef: num(f[13])?,
        })
    }
}

pub fn parse_episode_metrics(text: &str) -> Result<Vec<EpisodeMetrics>> {
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line == METRICS_HEADER || line.trim().is_empty() {
            continue;
        }
        rows.push(
            EpisodeMetrics::from_csv(line).ok_or_else(|| CoreError::BadLog {
                path: "<metrics>".into(),
                msg: format!("bad row: {line}"),
            })?,
        );
    }
    Ok(rows)
}

/// A run counts as non-convergent when essentially no legal token appeared
/// over the last 100 episodes (mean illegal rate above 0.99). Flagged, never
/// dropped.
pub fn detect_non_convergent(metrics: &[EpisodeMetrics]) -> bool {
    let window = metrics.len().min(100);
    if window == 0 {
        return false;
    }
    let tail = &metrics[metrics.len() - window..];
    tail.iter().map(|m| m.illegal_rate).sum::<f64>() / window as f64 > 0.99
}

/// What a finished run leaves behind.
#[derive(Debug)]
pub struct RunArtifacts {
    pub episode_metrics: Vec<EpisodeMetrics>,
    pub final_policy: Policy,
    pub trajectory_log_path: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Set when the run produced essentially no legal tokens over the last
    /// 100 episodes (illegal rate > 0.99). Such runs are flagged, not
    /// dropped.
    pub non_convergent: bool,
}

/// Reward actually assigned to a logged step.
///
/// Delegates to [`moral_reward`]; the one extra rule is for a legal move in a
/// round the opponent failed to resolve (their token was illegal, so there
/// are no payoffs): payoff-reading kinds then score the round as zero game
/// points. Norm penalties still apply.
pub fn step_reward(
    kind: RewardKind,
    params: &crate::rewards::RewardParams,
    ctx: &RewardContext,
) -> f64 {
    match moral_reward(kind, params, ctx) {
        Ok(r) => r,
        Err(CoreError::MissingPayoff { .. }) => {
            let zeroed = RewardContext {
                self_payoff: Some(0.0),
                opp_payoff: Some(0.0),
                ..ctx.clone()
            };
            moral_reward(kind, params, &zeroed).expect("payoffs supplied")
        }
        Err(e) => unreachable!("moral_reward only fails on missing payoffs: {e}"),
    }
}

/// One player's view of a played step, as handed to the logger.
struct StepView<'a> {
    choice: &'a TokenChoice,
    logprob: f64,
    opp_choice: &'a TokenChoice,
    self_payoff: Option<i64>,
    opp_payoff: Option<i64>,
}

/// Accumulates one learner's episode: batch, log lines, and counters.
struct LearnerRun {
    policy: Policy,
    kl: KLController,
    norm: RewardNormalizer,
    cfg: RunConfig,
    log: String,
    metrics: Vec<EpisodeMetrics>,
    batch: Vec<ExperienceRecord>,
    raw_rewards: Vec<f64>,
    kind_sums: [f64; 4],
    pair_counts: [u32; 4],
    illegal_count: u32,
}

impl LearnerRun {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let vocab = cfg.vocabulary()?;
        let mut log = String::new();
        let _ = writeln!(log, "# seed={}", cfg.seed);
        let _ = writeln!(log, "{TRAJECTORY_HEADER}");
        Ok(LearnerRun {
            policy: Policy::new(vocab),
            kl: KLController::new(&cfg.agent),
            norm: RewardNormalizer::new(),
            cfg: cfg.clone(),
            log,
            metrics: Vec::with_capacity(cfg.episodes as usize),
            batch: Vec::new(),
            raw_rewards: Vec::new(),
            kind_sums: [0.0; 4],
            pair_counts: [0; 4],
            illegal_count: 0,
        })
    }

    /// Record one played step: reward under the active kind, log row, batch
    /// entry, and per-episode counters.
    fn record_step(
        &mut self,
        episode: u32,
        step_idx: u32,
        kind: RewardKind,
        state_before: GameState,
        opp_state_before: GameState,
        view: StepView<'_>,
    ) {
        let StepView {
            choice,
            logprob,
            opp_choice,
            self_payoff,
            opp_payoff,
        } = view;
        let params = &self.cfg.schedule.params;
        let ctx = RewardContext {
            self_choice: choice.clone(),
            opp_prev: state_before.opp_prev,
            self_payoff: self_payoff.map(|p| p as f64),
            opp_payoff: opp_payoff.map(|p| p as f64),
        };
        let reward = step_reward(kind, params, &ctx);
        for (i, k) in REWARD_KINDS.iter().enumerate() {
            self.kind_sums[i] += step_reward(*k, params, &ctx);
        }

        match choice.action() {
            Some(a) => {
                let idx = state_before.opp_prev.index() * 2 + a.index();
                self.pair_counts[idx] += 1;
            }
            None => self.illegal_count += 1,
        }

        let token = match choice {
            TokenChoice::Legal(Action::Cooperate) => self.policy.vocabulary().c_legal().to_string(),
            TokenChoice::Legal(Action::Defect) => self.policy.vocabulary().d_legal().to_string(),
            TokenChoice::Illegal(tok) => tok.clone(),
        };
        let row = TrajectoryRow {
            episode,
            step: step_idx,
            reward_kind: kind,
            self_state: state_before,
            opp_state: opp_state_before,
            self_token: token,
            self_legal: choice.is_legal(),
            opp_choice: opp_choice.clone(),
            self_payoff,
            opp_payoff,
            reward_raw: reward,
        };
        let _ = writeln!(self.log, "{}", row.to_csv());

        let token_index = self
            .policy
            .vocabulary()
            .index_of(choice)
            .expect("choice came from this vocabulary");
        self.batch.push(ExperienceRecord {
            state: state_before,
            token_index,
            logprob_old: logprob,
            reward_raw: reward,
        });
        self.raw_rewards.push(reward);
    }

    fn finish_episode(&mut self, episode: u32, kind: RewardKind) -> Result<()> {
        let n = self.raw_rewards.len() as f64;
        let advantages = self.norm.normalize_rewards(&self.raw_rewards);
        let stats = ppo_update(
            &mut self.policy,
            &self.batch,
            &advantages,
            &self.cfg.agent,
            &mut self.kl,
        )?;
        self.metrics.push(EpisodeMetrics {
            episode,
            reward_kind: kind,
            mean_reward_raw: self.raw_rewards.iter().sum::<f64>() / n,
            mean_reward_by_kind: [
                self.kind_sums[0] / n,
                self.kind_sums[1] / n,
                self.kind_sums[2] / n,
                self.kind_sums[3] / n,
            ],
            freq_c_after_c: self.pair_counts[0] as f64 / n,
            freq_d_after_c: self.pair_counts[1] as f64 / n,
            freq_c_after_d: self.pair_counts[2] as f64 / n,
            freq_d_after_d: self.pair_counts[3] as f64 / n,
            illegal_rate: self.illegal_count as f64 / n,
            kl_observed: stats.kl_observed,
            kl_coef: stats.coef_after,
        });
        self.batch.clear();
        self.raw_rewards.clear();
        self.kind_sums = [0.0; 4];
        self.pair_counts = [0; 4];
        self.illegal_count = 0;
        Ok(())
    }

    fn finalize(self) -> Result<RunArtifacts> {
        let dir = &self.cfg.output_dir;
        fs::create_dir_all(dir)
            .map_err(|e| CoreError::io(format!("creating {}", dir.display()), e))?;
        let traj_path = dir.join("trajectory.csv");
        fs::write(&traj_path, &self.log)
            .map_err(|e| CoreError::io(format!("writing {}", traj_path.display()), e))?;

        let mut metrics_csv = format!("# seed={}\n{METRICS_HEADER}\n", self.cfg.seed);
        for m in &self.metrics {
            let _ = writeln!(metrics_csv, "{}", m.to_csv());
        }
        let metrics_path = dir.join("episode_metrics.csv");
        fs::write(&metrics_path, metrics_csv)
            .map_err(|e| CoreError::io(format!("writing {}", metrics_path.display()), e))?;

        self.policy.save(&dir.join("policy.txt"))?;

        fs::write(
            dir.join("config.txt"),
            config::run_config_to_string(&self.cfg),
        )
        .map_err(|e| CoreError::io("writing config.txt", e))?;

        let non_convergent = detect_non_convergent(&self.metrics);

        fs::write(
            dir.join("run_info.txt"),
            format!(
                "seed={}\nepisodes={}\nnon_convergent={}\n",
                self.cfg.seed,
                self.metrics.len(),
                non_convergent
            ),
        )
        .map_err(|e| CoreError::io("writing run_info.txt", e))?;

        Ok(RunArtifacts {
            episode_metrics: self.metrics,
            final_policy: self.policy,
            trajectory_log_path: traj_path,
            output_dir: dir.clone(),
            seed: self.cfg.seed,
            non_convergent,
        })
    }
}

/// Train one agent against a fixed-strategy opponent.
///
/// Each episode samples a fresh random previous round, plays `batch_size`
/// simultaneous steps (the opponent responding from its own state), scores
/// them under the schedule's active reward kind, whitens the batch, and runs
/// one PPO update. Fully deterministic given the seed.
pub fn run_training(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let strategy = match &cfg.opponent {
        OpponentKind::Fixed(s) => *s,
        other => {
            return Err(CoreError::InvalidConfig(format!(
                "training needs a fixed-strategy opponent; '{}' is only valid elsewhere \
                 (learner: cotrain, llm: eval)",
                other.label()
            )))
        }
    };
    let game = cfg.game.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut run = LearnerRun::new(cfg)?;

    for episode in 0..cfg.episodes {
        let kind = cfg.schedule.kind_at(episode);
        let initial = random_initial_state(&mut rng);
        let mut self_state = initial;
        let mut opp_state = initial.mirrored();
        for step_idx in 0..cfg.batch_size {
            let (choice, logprob) = run.policy.sample(self_state, &mut rng);
            let opp_move = TokenChoice::Legal(opponent_action(strategy, opp_state, &mut rng));
            let outcome = step(&game, self_state, opp_state, choice.clone(), opp_move);
            run.record_step(
                episode,
                step_idx,
                kind,
                self_state,
                opp_state,
                StepView {
                    choice: &choice,
                    logprob,
                    opp_choice: &outcome.opp_choice,
                    self_payoff: outcome.self_payoff,
                    opp_payoff: outcome.opp_payoff,
                },
            );
            self_state = outcome.next_self_state;
            opp_state = outcome.next_opp_state;
        }
        run.finish_episode(episode, kind)?;
    }
    run.finalize()
}

/// Train two learners against each other. Both sample simultaneously every
/// step, each is rewarded under its own schedule, and each updates once per
/// episode. Environment draws come from learner A's stream; learner B's token
/// sampling has its own stream, so the pair (seed_a, seed_b) pins the run.
pub fn run_cotraining(
    cfg_a: &RunConfig,
    cfg_b: &RunConfig,
) -> Result<(RunArtifacts, RunArtifacts)> {
    cfg_a.validate()?;
    cfg_b.validate()?;
    for (label, cfg) in [("a", cfg_a), ("b", cfg_b)] {
        if cfg.opponent != OpponentKind::Learner {
            return Err(CoreError::CotrainMismatch(format!(
                "config {label} must set opponent = learner"
            )));
        }
    }
    if cfg_a.episodes != cfg_b.episodes {
        return Err(CoreError::CotrainMismatch(format!(
            "episode counts differ: {} vs {}",
            cfg_a.episodes, cfg_b.episodes
        )));
    }
    if cfg_a.batch_size != cfg_b.batch_size {
        return Err(CoreError::CotrainMismatch(format!(
            "batch sizes differ: {} vs {}",
            cfg_a.batch_size, cfg_b.batch_size
        )));
    }
    if cfg_a.game != cfg_b.game {
        return Err(CoreError::CotrainMismatch(
            "both learners must play the same game".into(),
        ));
    }
    if cfg_a.output_dir == cfg_b.output_dir {
        return Err(CoreError::CotrainMismatch(
            "output directories must differ".into(),
        ));
    }

    let game = cfg_a.game.resolve()?;
    let mut rng_a = ChaCha8Rng::seed_from_u64(cfg_a.seed);
    let mut rng_b = ChaCha8Rng::seed_from_u64(cfg_b.seed);
    let mut run_a = LearnerRun::new(cfg_a)?;
    let mut run_b = LearnerRun::new(cfg_b)?;

    for episode in 0..cfg_a.episodes {
        let kind_a = cfg_a.schedule.kind_at(episode);
        let kind_b = cfg_b.schedule.kind_at(episode);
        let initial = random_initial_state(&mut rng_a);
        let mut state_a = initial;
        let mut state_b = initial.mirrored();
        for step_idx in 0..cfg_a.batch_size {
            let (choice_a, logp_a) = run_a.policy.sample(state_a, &mut rng_a);
            let (choice_b, logp_b) = run_b.policy.sample(state_b, &mut rng_b);
            let outcome = step(&game, state_a, state_b, choice_a.clone(), choice_b.clone());
            run_a.record_step(
                episode,
                step_idx,
                kind_a,
                state_a,
                state_b,
                StepView {
                    choice: &choice_a,
                    logprob: logp_a,
                    opp_choice: &choice_b,
                    self_payoff: outcome.self_payoff,
                    opp_payoff: outcome.opp_payoff,
                },
            );
            run_b.record_step(
                episode,
                step_idx,
                kind_b,
                state_b,
                state_a,
                StepView {
                    choice: &choice_b,
                    logprob: logp_b,
                    opp_choice: &choice_a,
                    self_payoff: outcome.opp_payoff,
                    opp_payoff: outcome.self_payoff,
                },
            );
            state_a = outcome.next_self_state;
            state_b = outcome.next_opp_state;
        }
        run_a.finish_episode(episode, kind_a)?;
        run_b.finish_episode(episode, kind_b)?;
    }
    Ok((run_a.finalize()?, run_b.finalize()?))
}
