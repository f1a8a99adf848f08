//! Tabular softmax policy over a token vocabulary, trained with clipped
//! surrogate PPO, a KL penalty toward a frozen reference, adaptive KL
//! coefficient control, and running reward whitening.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::game::{GameState, TokenChoice, TokenVocabulary, STATES};

/// Sum that is invariant to the order of its inputs: sorting first makes the
/// float rounding identical for any permutation of the same values, which
/// keeps updates exactly equivariant under token relabeling.
fn sum_stable(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let mut sorted = exps.clone();
    let total = sum_stable(&mut sorted);
    for e in exps.iter_mut() {
        *e /= total;
    }
    exps
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let log_total = sum_stable(&mut exps).ln();
    logits.iter().map(|z| z - max - log_total).collect()
}

/// KL(p || q) between two logit vectors over the same support.
fn kl_divergence(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let p = softmax(p_logits);
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    let mut terms: Vec<f64> = (0..p.len()).map(|k| p[k] * (lp[k] - lq[k])).collect();
    sum_stable(&mut terms)
}

/// Mean KL across the four states between two policy tables.
pub fn mean_state_kl(a: &[Vec<f64>; 4], b: &[Vec<f64>; 4]) -> f64 {
    let total: f64 = (0..4).map(|s| kl_divergence(&a[s], &b[s])).sum();
    total / 4.0
}

/// One logit vector per reachable state, plus a frozen reference snapshot
/// taken at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    vocab: TokenVocabulary,
    logits: [Vec<f64>; 4],
    reference_logits: [Vec<f64>; 4],
}

impl Policy {
    /// Fresh policy: all logits zero, i.e. uniform over the vocabulary, with
    /// the reference snapshot equal to that uniform start.
    pub fn new(vocab: TokenVocabulary) -> Self {
        let zeros = || std::array::from_fn(|_| vec![0.0; vocab.len()]);
        Policy {
            logits: zeros(),
            reference_logits: zeros(),
            vocab,
        }
    }

    pub fn vocabulary(&self) -> &TokenVocabulary {
        &self.vocab
    }

    pub fn logits(&self, state: GameState) -> &[f64] {
        &self.logits[state.index()]
    }

    pub fn reference_logits(&self, state: GameState) -> &[f64] {
        &self.reference_logits[state.index()]
    }

    pub fn set_logits(&mut self, state: GameState, logits: Vec<f64>) {
        assert_eq!(logits.len(), self.vocab.len());
        self.logits[state.index()] = logits;
    }

    pub fn probabilities(&self, state: GameState) -> Vec<f64> {
        softmax(&self.logits[state.index()])
    }

    pub fn reference_probabilities(&self, state: GameState) -> Vec<f64> {
        softmax(&self.reference_logits[state.index()])
    }

    /// Mean KL across states from the live table to the frozen reference.
    pub fn kl_to_reference(&self) -> f64 {
        mean_state_kl(&self.logits, &self.reference_logits)
    }

    /// A copy with the two legal slots exchanged in every state of both the
    /// live table and the reference. This is the table permutation that
    /// corresponds to reversing which token means which action.
    pub fn swap_legal_slots(&self) -> Policy {
        let swap = |table: &[Vec<f64>; 4]| {
            let mut out = table.clone();
            for row in out.iter_mut() {
                row.swap(0, 1);
            }
            out
        };
        Policy {
            vocab: self.vocab.clone(),
            logits: swap(&self.logits),
            reference_logits: swap(&self.reference_logits),
        }
    }

    /// Sample a token from the state's softmax. Returns the interpretation of
    /// the sampled slot and its log-probability. One uniform draw per call.
    pub fn sample<R: Rng>(&self, state: GameState, rng: &mut R) -> (TokenChoice, f64) {
        let probs = self.probabilities(state);
        let logps = log_softmax(&self.logits[state.index()]);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut slot = probs.len() - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                slot = k;
                break;
            }
        }
        (self.vocab.choice_at(slot), logps[slot].min(0.0))
    }

    /// Serialize to the flat text format: vocabulary header then one
    /// `state,token,logit` row per cell in canonical order.
    pub fn to_table_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "c_legal={}", self.vocab.c_legal());
        let _ = writeln!(out, "d_legal={}", self.vocab.d_legal());
        let _ = writeln!(out, "distractors={}", self.vocab.distractors().join(","));
        let _ = writeln!(out, "state,token,logit");
        for state in STATES {
            for k in 0..self.vocab.len() {
                let _ = writeln!(
                    out,
                    "{},{},{}",
                    state,
                    self.vocab.token_at(k),
                    self.logits[state.index()][k]
                );
            }
        }
        out
    }

    /// Parse the flat text format. The reference snapshot of the loaded
    /// policy is the loaded table itself.
    pub fn from_table_string(text: &str) -> Result<Policy> {
        let bad = |msg: String| CoreError::BadPolicyFile {
            path: "<string>".into(),
            msg,
        };
        let mut lines = text.lines().enumerate();
        let mut header = |prefix: &str| -> Result<String> {
            match lines.next() {
                Some((_, line)) if line.starts_with(prefix) => Ok(line[prefix.len()..].to_string()),
                other => Err(bad(format!(
                    "expected '{prefix}...' line, got {:?}",
                    other.map(|(_, l)| l)
                ))),
            }
        };
        let c_legal = header("c_legal=")?;
        let d_legal = header("d_legal=")?;
        let distractors_raw = header("distractors=")?;
        let distractors: Vec<String> = if distractors_raw.is_empty() {
            vec![]
        } else {
            distractors_raw.split(',').map(str::to_string).collect()
        };
        let vocab = TokenVocabulary::new(c_legal, d_legal, distractors)?;
        match lines.next() {
            Some((_, "state,token,logit")) => {}
            other => {
                return Err(bad(format!(
                    "expected 'state,token,logit' header, got {:?}",
                    other.map(|(_, l)| l)
                )))
            }
        }
        let mut table: [Vec<Option<f64>>; 4] = std::array::from_fn(|_| vec![None; vocab.len()]);
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(bad(format!("line {}: expected 3 fields", lineno + 1)));
            }
            let state = GameState::parse(fields[0])
                .ok_or_else(|| bad(format!("line {}: bad state '{}'", lineno + 1, fields[0])))?;
            let token_choice = if fields[1] == vocab.c_legal() {
                TokenChoice::Legal(crate::game::Action::Cooperate)
            } else if fields[1] == vocab.d_legal() {
                TokenChoice::Legal(crate::game::Action::Defect)
            } else {
                TokenChoice::Illegal(fields[1].to_string())
            };
            let slot = vocab.index_of(&token_choice).ok_or_else(|| {
                bad(format!(
                    "line {}: unknown token '{}'",
                    lineno + 1,
                    fields[1]
                ))
            })?;
            let logit: f64 = fields[2]
                .parse()
                .map_err(|_| bad(format!("line {}: bad logit '{}'", lineno + 1, fields[2])))?;
            if !logit.is_finite() {
                return Err(bad(format!("line {}: non-finite logit", lineno + 1)));
            }
            let cell = &mut table[state.index()][slot];
            if cell.is_some() {
                return Err(bad(format!("line {}: duplicate cell", lineno + 1)));
            }
            *cell = Some(logit);
        }
        let mut logits: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; vocab.len()]);
        for s in 0..4 {
            for k in 0..vocab.len() {
                logits[s][k] = table[s][k].ok_or_else(|| {
                    bad(format!(
                        "missing cell for state {} token {}",
                        STATES[s],
                        vocab.token_at(k)
                    ))
                })?;
            }
        }
        Ok(Policy {
            vocab,
            reference_logits: logits.clone(),
            logits,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_table_string())
            .map_err(|e| CoreError::io(format!("writing policy {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Policy> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::io(format!("reading policy {}", path.display()), e))?;
        Policy::from_table_string(&text).map_err(|e| match e {
            CoreError::BadPolicyFile { msg, .. } => CoreError::BadPolicyFile {
                path: path.display().to_string(),
                msg,
            },
            other => other,
        })
    }
}

/// One sampled step as stored in a PPO batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperienceRecord {
    pub state: GameState,
    pub token_index: usize,
    pub logprob_old: f64,
    pub reward_raw: f64,
}

/// Hyperparameters of the tabular PPO learner. The numeric defaults are the
/// library's own choices and every one of them is overridable in run
/// configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PPOConfig {
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub update_epochs: u32,
    pub kl_target: f64,
    pub kl_coef_init: f64,
    pub kl_gain: f64,
    pub kl_clamp: f64,
    /// Global gradient-norm ceiling applied before every ascent step.
    pub max_grad_norm: f64,
    /// Number of synthetic illegal tokens in the training vocabulary.
    pub distractor_count: usize,
}

impl Default for PPOConfig {
    fn default() -> Self {
        PPOConfig {
            clip_epsilon: 0.2,
            learning_rate: 0.05,
            update_epochs: 4,
            kl_target: 0.05,
            kl_coef_init: 0.2,
            kl_gain: 0.1,
            kl_clamp: 0.5,
            max_grad_norm: 1.0,
            distractor_count: 3,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clip_epsilon", self.clip_epsilon),
            ("learning_rate", self.learning_rate),
            ("kl_target", self.kl_target),
            ("kl_coef_init", self.kl_coef_init),
            ("kl_gain", self.kl_gain),
            ("kl_clamp", self.kl_clamp),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(CoreError::InvalidConfig(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.update_epochs == 0 {
            return Err(CoreError::InvalidConfig(
                "update_epochs must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Proportional controller for the KL penalty weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KLController {
    pub coef: f64,
    pub target: f64,
    pub gain: f64,
    pub clamp: f64,
}

impl KLController {
    pub fn new(cfg: &PPOConfig) -> Self {
        KLController {
            coef: cfg.kl_coef_init,
            target: cfg.kl_target,
            gain: cfg.kl_gain,
            clamp: cfg.kl_clamp,
        }
    }
}

impl Default for KLController {
    fn default() -> Self {
        KLController::new(&PPOConfig::default())
    }
}

/// coef <- coef * (1 + gain * clamp_to(+-clamp, observed/target - 1)).
/// Returns the new coefficient.
pub fn adaptive_kl_update(kl: &mut KLController, observed: f64) -> f64 {
    let error = (observed / kl.target - 1.0).clamp(-kl.clamp, kl.clamp);
    kl.coef *= 1.0 + kl.gain * error;
    kl.coef
}

/// Running whitening statistics over every reward ever seen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardNormalizer {
    running_mean: f64,
    /// Sum of squared deviations from the running mean.
    m2: f64,
    count: u64,
    epsilon: f64,
}

impl Default for RewardNormalizer {
    fn default() -> Self {
        RewardNormalizer::new()
    }
}

impl RewardNormalizer {
    pub fn new() -> Self {
        RewardNormalizer {
            running_mean: 0.0,
            m2: 0.0,
            count: 0,
            epsilon: 1e-8,
        }
    }

    pub fn running_mean(&self) -> f64 {
        self.running_mean
    }

    /// Population variance over everything observed so far.
    pub fn running_var(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Fold the batch into the running statistics, then whiten each element
    /// with the updated mean and standard deviation.
    pub fn normalize_rewards(&mut self, rewards: &[f64]) -> Vec<f64> {
        assert!(!rewards.is_empty(), "reward batch must be non-empty");
        let n = rewards.len() as f64;
        let batch_mean = rewards.iter().sum::<f64>() / n;
        let batch_m2 = rewards
            .iter()
            .map(|r| (r - batch_mean).powi(2))
            .sum::<f64>();

        let delta = batch_mean - self.running_mean;
        let total = self.count as f64 + n;
        self.running_mean += delta * n / total;
        self.m2 += batch_m2 + delta * delta * self.count as f64 * n / total;
        self.count += rewards.len() as u64;

        let scale = self.running_var().sqrt() + self.epsilon;
        rewards
            .iter()
            .map(|r| (r - self.running_mean) / scale)
            .collect()
    }
}

/// Clipped surrogate objective with the weighted KL penalty to the reference:
/// mean_i min(ratio_i * A_i, clip(ratio_i) * A_i) - coef * mean_state KL.
pub fn clipped_objective(
    logits: &[Vec<f64>; 4],
    reference: &[Vec<f64>; 4],
    batch: &[ExperienceRecord],
    advantages: &[f64],
    clip_epsilon: f64,
    kl_coef: f64,
) -> f64 {
    let log_probs: Vec<Vec<f64>> = (0..4).map(|s| log_softmax(&logits[s])).collect();
    let mut surrogate = 0.0;
    for (rec, &adv) in batch.iter().zip(advantages) {
        let ratio = (log_probs[rec.state.index()][rec.token_index] - rec.logprob_old).exp();
        let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
        surrogate += (ratio * adv).min(clipped * adv);
    }
    surrogate /= batch.len() as f64;
    surrogate - kl_coef * mean_state_kl(logits, reference)
}

/// Analytic gradient of [`clipped_objective`] with respect to the logits.
pub fn clipped_objective_gradient(
    logits: &[Vec<f64>; 4],
    reference: &[Vec<f64>; 4],
    batch: &[ExperienceRecord],
    advantages: &[f64],
    clip_epsilon: f64,
    kl_coef: f64,
) -> [Vec<f64>; 4] {
    let width = logits[0].len();
    let probs: Vec<Vec<f64>> = (0..4).map(|s| softmax(&logits[s])).collect();
    let log_probs: Vec<Vec<f64>> = (0..4).map(|s| log_softmax(&logits[s])).collect();
    let mut grad: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; width]);

    // Surrogate part: d/dr of min(r*A, clip(r)*A) is A inside the trust
    // region and 0 on the clipped-and-worse side.
    let n = batch.len() as f64;
    for (rec, &adv) in batch.iter().zip(advantages) {
        let s = rec.state.index();
        let ratio = (log_probs[s][rec.token_index] - rec.logprob_old).exp();
        let active = if adv >= 0.0 {
            ratio <= 1.0 + clip_epsilon
        } else {
            ratio >= 1.0 - clip_epsilon
        };
        if !active {
            continue;
        }
        let coeff = adv * ratio / n;
        for (k, g) in grad[s].iter_mut().enumerate() {
            let indicator = if k == rec.token_index { 1.0 } else { 0.0 };
            *g += coeff * (indicator - probs[s][k]);
        }
    }

    // KL part: d KL(p||q) / d z_k = p_k * ((log p_k - log q_k) - KL).
    for s in 0..4 {
        let kl = kl_divergence(&logits[s], &reference[s]);
        let ref_log = log_softmax(&reference[s]);
        for (k, g) in grad[s].iter_mut().enumerate() {
            let d_kl = probs[s][k] * ((log_probs[s][k] - ref_log[k]) - kl);
            *g -= kl_coef / 4.0 * d_kl;
        }
    }
    grad
}

fn clip_global_norm(grad: &mut [Vec<f64>; 4], max_norm: f64) {
    let mut squares: Vec<f64> = grad.iter().flatten().map(|g| g * g).collect();
    let norm = sum_stable(&mut squares).sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for row in grad.iter_mut() {
            for g in row.iter_mut() {
                *g *= scale;
            }
        }
    }
}

/// Diagnostics from one PPO update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    /// Mean per-state KL between the post-update policy and the policy the
    /// update started from; this is what feeds the adaptive controller.
    pub kl_observed: f64,
    /// Mean probability ratio of the batch tokens after the update.
    pub mean_ratio: f64,
    /// KL coefficient after the controller step.
    pub coef_after: f64,
}

/// Run `update_epochs` ascent passes on the clipped surrogate objective with
/// the KL penalty toward the frozen reference, then let the controller adapt
/// the penalty weight from the observed policy shift.
pub fn ppo_update(
    policy: &mut Policy,
    batch: &[ExperienceRecord],
    advantages: &[f64],
    cfg: &PPOConfig,
    kl: &mut KLController,
) -> Result<UpdateStats> {
    if batch.len() != advantages.len() {
        return Err(CoreError::LengthMismatch {
            batch: batch.len(),
            advantages: advantages.len(),
        });
    }
    assert!(!batch.is_empty(), "batch must be non-empty");
    for rec in batch {
        assert!(rec.token_index < policy.vocab.len(), "token index in range");
    }

    let before = policy.logits.clone();
    for _ in 0..cfg.update_epochs {
        let mut grad = clipped_objective_gradient(
            &policy.logits,
            &policy.reference_logits,
            batch,
            advantages,
            cfg.clip_epsilon,
            kl.coef,
        );
        clip_global_norm(&mut grad, cfg.max_grad_norm);
        for (row, g_row) in policy.logits.iter_mut().zip(&grad) {
            for (z, g) in row.iter_mut().zip(g_row) {
                *z += cfg.learning_rate * g;
            }
        }
    }

    let kl_observed = mean_state_kl(&policy.logits, &before);
    let log_probs: Vec<Vec<f64>> = (0..4).map(|s| log_softmax(&policy.logits[s])).collect();
    let mean_ratio = batch
        .iter()
        .map(|rec| (log_probs[rec.state.index()][rec.token_index] - rec.logprob_old).exp())
        .sum::<f64>()
        / batch.len() as f64;
    let coef_after = adaptive_kl_update(kl, kl_observed);

    Ok(UpdateStats {
        kl_observed,
        mean_ratio,
        coef_after,
    })
}
