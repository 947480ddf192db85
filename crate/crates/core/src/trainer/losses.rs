//! Loss terms, as plain values and as tape nodes.
//!
//! The value versions are the reference definitions; the tape versions build
//! the same quantities for back-propagation and are checked against them.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tape::{Tape, Tensor, Var};

/// Probability clamp used by every log.
pub const EPS: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

/// Summed binary cross-entropy.
pub fn bce_loss(preds: &[f64], labels: &[u8]) -> Result<f64> {
    same_len(preds.len(), labels.len(), "bce")?;
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(&p, &r)| {
            let p = clamp_prob(p);
            if r == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum())
}

/// Discounted rewards `R_t = -log(1 - s_t) + γ R_{t+1}`, with `R_{T+1} = 0`.
pub fn rewards(scores: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; scores.len()];
    let mut next = 0.0;
    for (t, &s) in scores.iter().enumerate().rev() {
        let s = s.min(1.0 - EPS);
        next = -(1.0 - s).ln() + gamma * next;
        out[t] = next;
    }
    out
}

/// Sign convention of the adversarial term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AdvSign {
    /// `(1/T) Σ |r̂_t - 0.5| R_t`, minimized as is.
    AsWritten,
    /// The negation, so minimizing the loss maximizes reward-weighted confidence.
    #[default]
    Reinforce,
}

impl AdvSign {
    fn factor(self) -> f64 {
        match self {
            AdvSign::AsWritten => 1.0,
            AdvSign::Reinforce => -1.0,
        }
    }
}

impl fmt::Display for AdvSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdvSign::AsWritten => "as_written",
            AdvSign::Reinforce => "reinforce",
        })
    }
}

impl FromStr for AdvSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_written" => Ok(AdvSign::AsWritten),
            "reinforce" => Ok(AdvSign::Reinforce),
            other => Err(Error::Config(format!("adv_sign must be as_written or reinforce, got {other:?}"))),
        }
    }
}

pub fn adv_loss(preds: &[f64], rewards: &[f64], sign: AdvSign) -> Result<f64> {
    same_len(preds.len(), rewards.len(), "adversarial loss")?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = preds.iter().zip(rewards).map(|(&p, &r)| (p - 0.5).abs() * r).sum();
    Ok(sign.factor() * s / preds.len() as f64)
}

/// `-Σ log p_t[q_{t+1}]`. `dists[t]` predicts `questions[t + 1]`; a trailing
/// distribution for the last step is allowed and ignored.
pub fn ar_loss(dists: &[Vec<f64>], questions: &[usize]) -> Result<f64> {
    let targets = questions.len().saturating_sub(1);
    if dists.len() < targets {
        return Err(Error::Contract(format!(
            "{} distributions for {targets} targets",
            dists.len()
        )));
    }
    let mut loss = 0.0;
    for t in 0..targets {
        let p = *dists[t]
            .get(questions[t + 1])
            .ok_or_else(|| Error::Lookup(format!("question {} outside distribution", questions[t + 1])))?;
        loss -= p.max(EPS).ln();
    }
    Ok(loss)
}

pub fn generator_loss(bce: f64, adv: f64, ar: f64, lambda1: f64, lambda2: f64) -> f64 {
    bce + lambda1 * adv + lambda2 * ar
}

/// `mean(neg) - mean(pos)`.
pub fn dist_loss(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Contract("dist loss needs positive and negative scores".into()));
    }
    Ok(neg.iter().sum::<f64>() / neg.len() as f64 - pos.iter().sum::<f64>() / pos.len() as f64)
}

/// `α (‖g‖ - 1)²` for one gradient.
pub fn gradient_penalty(grad: &[f64], alpha: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    alpha * (norm - 1.0).powi(2)
}

/// How the separation term enters the discriminator objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DiscSign {
    /// `-L_dist + GP`.
    AsWritten,
    /// `L_dist + GP`, which raises positive scores and lowers negative ones.
    #[default]
    Separating,
}

impl DiscSign {
    pub fn factor(self) -> f64 {
        match self {
            DiscSign::AsWritten => -1.0,
            DiscSign::Separating => 1.0,
        }
    }
}

impl fmt::Display for DiscSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscSign::AsWritten => "as_written",
            DiscSign::Separating => "separating",
        })
    }
}

impl FromStr for DiscSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_written" => Ok(DiscSign::AsWritten),
            "separating" => Ok(DiscSign::Separating),
            other => Err(Error::Config(format!(
                "disc_sign must be as_written or separating, got {other:?}"
            ))),
        }
    }
}

pub fn discriminator_loss(dist: f64, gp: f64, sign: DiscSign) -> f64 {
    sign.factor() * dist + gp
}

/// Summed BCE over per-step probability nodes.
pub fn tape_bce(tape: &mut Tape, probs: &[Var], labels: &[u8]) -> Var {
    assert_eq!(probs.len(), labels.len());
    let terms: Vec<Var> = probs
        .iter()
        .zip(labels)
        .map(|(&p, &r)| {
            let q = if r == 1 { p } else { tape.rsub_const(1.0, p) };
            let l = tape.log_clamp(q, EPS);
            tape.scale(l, -1.0)
        })
        .collect();
    tape.sum_scalars(&terms)
}

/// Adversarial term with `rewards` as constants.
pub fn tape_adv(tape: &mut Tape, probs: &[Var], rewards: &[f64], sign: AdvSign) -> Var {
    assert_eq!(probs.len(), rewards.len());
    if probs.is_empty() {
        return tape.constant(Tensor::scalar(0.0));
    }
    let k = sign.factor() / probs.len() as f64;
    let terms: Vec<Var> = probs
        .iter()
        .zip(rewards)
        .map(|(&p, &r)| {
            let c = tape.add_const(p, -0.5);
            let a = tape.abs(c);
            tape.scale(a, k * r)
        })
        .collect();
    tape.sum_scalars(&terms)
}

/// Autoregressive term over `1 x |Q|` distribution nodes.
pub fn tape_ar(tape: &mut Tape, dists: &[Var], questions: &[usize]) -> Var {
    let targets = questions.len().saturating_sub(1);
    assert!(dists.len() >= targets);
    let terms: Vec<Var> = (0..targets)
        .map(|t| {
            let p = tape.pick(dists[t], questions[t + 1]);
            let l = tape.log_clamp(p, EPS);
            tape.scale(l, -1.0)
        })
        .collect();
    if terms.is_empty() {
        return tape.constant(Tensor::scalar(0.0));
    }
    tape.sum_scalars(&terms)
}

/// `α (‖g‖ - 1)²` for a `1 x n` gradient node.
pub fn tape_gradient_penalty(tape: &mut Tape, grad: Var, alpha: f64) -> Var {
    let sq = tape.square(grad);
    let s = tape.sum(sq);
    let norm = tape.sqrt(s);
    let d = tape.add_const(norm, -1.0);
    let p = tape.square(d);
    tape.scale(p, alpha)
}
