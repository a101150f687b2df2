//! Pure-function kernel for the supervised fine-tuning masked loss and the
//! group-relative policy objective.
//!
//! Nothing in here touches a model: callers supply token roles,
//! log-probabilities, and rewards, and get scalar loss/objective components
//! back. All functions are deterministic and thread-safe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role of a token within a chat-formatted training sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenRole {
    Assistant,
    Instruction,
    ToolResponse,
}

/// A token sequence with per-token roles and (optionally) log-probabilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenRoleSeq {
    pub roles: Vec<TokenRole>,
    /// `log P(x_t | x_<t>)` per token; required by [`sft_loss`].
    pub logprobs: Option<Vec<f64>>,
}

impl TokenRoleSeq {
    pub fn new(roles: Vec<TokenRole>, logprobs: Option<Vec<f64>>) -> Result<Self> {
        if let Some(lp) = &logprobs {
            if lp.len() != roles.len() {
                return Err(Error::invalid(format!(
                    "roles ({}) and logprobs ({}) must have equal length",
                    roles.len(),
                    lp.len()
                )));
            }
        }
        Ok(Self { roles, logprobs })
    }
}

/// Per-rollout token-level log-probabilities under the new, old, and
/// reference policies, with the token roles that determine masking.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutLogprobs {
    pub roles: Vec<TokenRole>,
    pub logp_new: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
}

impl RolloutLogprobs {
    fn check(&self) -> Result<()> {
        let n = self.roles.len();
        if self.logp_new.len() != n || self.logp_old.len() != n || self.logp_ref.len() != n {
            return Err(Error::invalid(
                "rollout logprob arrays must match role array length".to_string(),
            ));
        }
        Ok(())
    }

    /// Sequence-level importance ratio: exp of the summed per-token
    /// log-probability differences over assistant (unmasked) tokens.
    pub fn sequence_ratio(&self) -> Result<f64> {
        self.check()?;
        let mask = loss_mask(&self.roles);
        let delta: f64 = mask
            .iter()
            .zip(self.logp_new.iter().zip(&self.logp_old))
            .filter(|(m, _)| **m == 1)
            .map(|(_, (new, old))| new - old)
            .sum();
        Ok(delta.exp())
    }

    /// Mean per-token KL penalty over assistant tokens; zero when the
    /// sequence has no assistant tokens.
    pub fn mean_kl(&self) -> Result<f64> {
        self.check()?;
        let mask = loss_mask(&self.roles);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, m) in mask.iter().enumerate() {
            if *m == 1 {
                sum += kl_penalty(self.logp_new[i], self.logp_ref[i]);
                count += 1;
            }
        }
        if count == 0 {
            Ok(0.0)
        } else {
            Ok(sum / count as f64)
        }
    }
}

/// A group of G rollouts for the same query: scalar rewards plus the token
/// logprob triples needed for the surrogate terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub rewards: Vec<f64>,
    pub rollouts: Vec<RolloutLogprobs>,
}

impl RolloutGroup {
    pub fn new(rewards: Vec<f64>, rollouts: Vec<RolloutLogprobs>) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::invalid("a rollout group needs G >= 1 rewards"));
        }
        if rewards.len() != rollouts.len() {
            return Err(Error::invalid(format!(
                "rewards ({}) and rollouts ({}) must have equal length",
                rewards.len(),
                rollouts.len()
            )));
        }
        Ok(Self { rewards, rollouts })
    }
}

/// Clip range and KL coefficient for the group-relative objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub epsilon: f64,
    pub beta: f64,
}

impl GrpoConfig {
    pub fn new(epsilon: f64, beta: f64) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        if beta < 0.0 {
            return Err(Error::invalid("beta must be >= 0"));
        }
        Ok(Self { epsilon, beta })
    }
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            beta: 0.0,
        }
    }
}

/// Per-token 0/1 mask: 1 exactly at assistant positions.
pub fn loss_mask(roles: &[TokenRole]) -> Vec<u8> {
    roles
        .iter()
        .map(|r| u8::from(*r == TokenRole::Assistant))
        .collect()
}

/// Masked cross-entropy: the negative sum of log-probabilities over assistant
/// positions. Values at masked positions never contribute.
pub fn sft_loss(seq: &TokenRoleSeq) -> Result<f64> {
    let logprobs = seq
        .logprobs
        .as_ref()
        .ok_or_else(|| Error::invalid("sft_loss requires logprobs"))?;
    if logprobs.len() != seq.roles.len() {
        return Err(Error::invalid(
            "roles and logprobs must have equal length".to_string(),
        ));
    }
    let mask = loss_mask(&seq.roles);
    Ok(-mask
        .iter()
        .zip(logprobs)
        .filter(|(m, _)| **m == 1)
        .map(|(_, lp)| *lp)
        .sum::<f64>())
}

/// Importance sampling ratio `exp(logp_new - logp_old)`.
pub fn importance_ratio(logp_new: f64, logp_old: f64) -> f64 {
    (logp_new - logp_old).exp()
}

/// Group-relative advantages: the z-score of each reward within its group,
/// under the population standard deviation convention.
///
/// Degenerate groups (G = 1, or zero variance) yield all-zero advantages
/// instead of dividing by zero.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = variance.sqrt();
    if std == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// Clipped surrogate term: `min(ratio * adv, clamp(ratio, 1-eps, 1+eps) * adv)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Per-token KL penalty estimator:
/// `exp(logp_ref - logp_theta) - (logp_ref - logp_theta) - 1`.
///
/// Non-negative for all finite inputs, zero when the policies agree.
pub fn kl_penalty(logp_theta: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_theta;
    d.exp() - d - 1.0
}

/// The group-relative objective:
/// `(1/G) * sum_i min(r_i * A_i, clip(r_i) * A_i) - beta * mean_i KL_i`
/// with advantages from [`group_advantages`] and sequence-level ratios from
/// the rollout token arrays.
pub fn grpo_objective(group: &RolloutGroup, config: &GrpoConfig) -> Result<f64> {
    let g = group.rewards.len() as f64;
    let advantages = group_advantages(&group.rewards);
    let mut surrogate_sum = 0.0;
    let mut kl_sum = 0.0;
    for (rollout, adv) in group.rollouts.iter().zip(&advantages) {
        let ratio = rollout.sequence_ratio()?;
        surrogate_sum += clipped_surrogate(ratio, *adv, config.epsilon);
        kl_sum += rollout.mean_kl()?;
    }
    Ok(surrogate_sum / g - config.beta * (kl_sum / g))
}

/// Component breakdown of the objective for one group, used by the batch CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrpoComponents {
    pub group_size: usize,
    pub advantages: Vec<f64>,
    pub ratios: Vec<f64>,
    pub mean_surrogate: f64,
    pub mean_kl: f64,
    pub objective: f64,
}

/// Compute all per-group components in one pass.
pub fn grpo_components(group: &RolloutGroup, config: &GrpoConfig) -> Result<GrpoComponents> {
    let g = group.rewards.len() as f64;
    let advantages = group_advantages(&group.rewards);
    let mut ratios = Vec::with_capacity(group.rollouts.len());
    let mut surrogate_sum = 0.0;
    let mut kl_sum = 0.0;
    for (rollout, adv) in group.rollouts.iter().zip(&advantages) {
        let ratio = rollout.sequence_ratio()?;
        surrogate_sum += clipped_surrogate(ratio, *adv, config.epsilon);
        kl_sum += rollout.mean_kl()?;
        ratios.push(ratio);
    }
    let mean_surrogate = surrogate_sum / g;
    let mean_kl = kl_sum / g;
    Ok(GrpoComponents {
        group_size: group.rewards.len(),
        advantages,
        ratios,
        mean_surrogate,
        mean_kl,
        objective: mean_surrogate - config.beta * mean_kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles(spec: &str) -> Vec<TokenRole> {
        // i = instruction, a = assistant, t = tool_response
        spec.chars()
            .map(|c| match c {
                'i' => TokenRole::Instruction,
                'a' => TokenRole::Assistant,
                't' => TokenRole::ToolResponse,
                _ => panic!("bad role spec"),
            })
            .collect()
    }

    #[test]
    fn mask_selects_assistant_tokens() {
        assert_eq!(loss_mask(&roles("iata")), vec![0, 1, 0, 1]);
        assert_eq!(loss_mask(&roles("iii")), vec![0, 0, 0]);
        assert_eq!(loss_mask(&[]), Vec::<u8>::new());
    }

    #[test]
    fn sft_loss_hand_sum() {
        let seq = TokenRoleSeq::new(roles("ia"), Some(vec![-5.0, -0.5])).unwrap();
        assert!((sft_loss(&seq).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sft_loss_all_masked_is_zero() {
        let seq = TokenRoleSeq::new(roles("itt"), Some(vec![-1.0, -2.0, -3.0])).unwrap();
        assert_eq!(sft_loss(&seq).unwrap(), 0.0);
    }

    #[test]
    fn sft_loss_ignores_masked_positions() {
        let a = TokenRoleSeq::new(roles("ia"), Some(vec![-5.0, -0.5])).unwrap();
        let b = TokenRoleSeq::new(roles("ia"), Some(vec![987.25, -0.5])).unwrap();
        assert_eq!(sft_loss(&a).unwrap(), sft_loss(&b).unwrap());
    }

    #[test]
    fn sft_loss_requires_logprobs() {
        let seq = TokenRoleSeq::new(roles("ia"), None).unwrap();
        assert!(sft_loss(&seq).is_err());
    }

    #[test]
    fn ratio_identity_and_hand_values() {
        assert!((importance_ratio(-2.5, -2.5) - 1.0).abs() < 1e-12);
        assert!((importance_ratio(-1.0, -1.2) - 1.221402758).abs() < 1e-8);
        assert!((importance_ratio(-1.2, -1.0) - 0.818730753).abs() < 1e-8);
    }

    #[test]
    fn advantages_hand_cases() {
        let advs = group_advantages(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(advs, vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(group_advantages(&[1.0, 1.0, 1.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(group_advantages(&[1.0, 0.0]), vec![1.0, -1.0]);
        assert_eq!(group_advantages(&[0.5]), vec![0.0]);
    }

    #[test]
    fn clipped_surrogate_hand_cases() {
        assert_eq!(clipped_surrogate(1.3, 2.0, 0.2), 2.4);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
        // ratio 1 sits inside the clip band for any epsilon
        assert_eq!(clipped_surrogate(1.0, 3.5, 0.05), 3.5);
    }

    #[test]
    fn kl_zero_for_identical_policies() {
        assert_eq!(kl_penalty(-1.5, -1.5), 0.0);
    }

    #[test]
    fn kl_hand_value() {
        // d = 0.5: e^0.5 - 1.5
        assert!((kl_penalty(-2.0, -1.5) - 0.148721271).abs() < 1e-8);
    }

    fn rollout_with(ratio_delta: f64, kl_delta: f64) -> RolloutLogprobs {
        // one instruction token, one assistant token
        RolloutLogprobs {
            roles: roles("ia"),
            logp_new: vec![-9.0, -1.0],
            logp_old: vec![-9.0, -1.0 - ratio_delta],
            logp_ref: vec![-9.0, -1.0 + kl_delta],
        }
    }

    #[test]
    fn objective_zero_mean_when_ratios_one() {
        let group = RolloutGroup::new(
            vec![1.0, 0.0, 1.0],
            vec![rollout_with(0.0, 0.0), rollout_with(0.0, 0.0), rollout_with(0.0, 0.0)],
        )
        .unwrap();
        let cfg = GrpoConfig::new(0.2, 0.0).unwrap();
        assert!(grpo_objective(&group, &cfg).unwrap().abs() < 1e-12);
    }

    #[test]
    fn objective_composes_hand_values() {
        // rewards [1, 0] -> advantages [1, -1]
        // ratios e^0.2 and e^-0.2, eps 0.2, beta 0.1, per-token KL at d=0.5
        let group = RolloutGroup::new(
            vec![1.0, 0.0],
            vec![rollout_with(0.2, 0.5), rollout_with(-0.2, 0.5)],
        )
        .unwrap();
        let cfg = GrpoConfig::new(0.2, 0.1).unwrap();

        let s1 = clipped_surrogate(importance_ratio(0.2, 0.0), 1.0, 0.2); // min(e^0.2, 1.2) = 1.2
        let s2 = clipped_surrogate(importance_ratio(-0.2, 0.0), -1.0, 0.2); // min(-e^-0.2, -0.8) = -e^-0.2
        let kl = kl_penalty(-1.0, -0.5); // e^0.5 - 1.5
        let expect = (s1 + s2) / 2.0 - 0.1 * kl;

        assert!((grpo_objective(&group, &cfg).unwrap() - expect).abs() < 1e-9);
        assert!((expect - 0.175762496).abs() < 1e-8);
    }

    #[test]
    fn objective_zero_variance_rewards() {
        let group = RolloutGroup::new(
            vec![1.0, 1.0],
            vec![rollout_with(0.3, 0.0), rollout_with(-0.3, 0.0)],
        )
        .unwrap();
        let cfg = GrpoConfig::new(0.2, 0.0).unwrap();
        assert_eq!(grpo_objective(&group, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn sequence_ratio_sums_unmasked_only() {
        let r = RolloutLogprobs {
            roles: roles("iat"),
            logp_new: vec![-1.0, -2.0, -3.0],
            logp_old: vec![-4.0, -2.5, -9.0],
            logp_ref: vec![-1.0, -2.0, -3.0],
        };
        // only the assistant token contributes: exp(-2.0 - (-2.5)) = e^0.5
        assert!((r.sequence_ratio().unwrap() - 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn group_requires_matching_lengths() {
        assert!(RolloutGroup::new(vec![1.0], vec![]).is_err());
        assert!(RolloutGroup::new(vec![], vec![]).is_err());
    }
}
