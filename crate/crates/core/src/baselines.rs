//! Policy variants compared in experiments.
//!
//! The learned variants share the diffusion actor for server selection and
//! differ only in how the pre-migration fraction is set: learned, forced to
//! 0, or forced to 1. `Random` picks uniformly among feasible servers and
//! draws the fraction from `U[0, 1]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionActor, Mode};
use crate::env::{HybridAction, VehicleAction};
use crate::error::{Error, Result};
use crate::grad::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyVariant {
    HybridGdm,
    NoPre,
    FullPre,
    Random,
}

impl PolicyVariant {
    pub const ALL: [PolicyVariant; 4] = [
        PolicyVariant::HybridGdm,
        PolicyVariant::NoPre,
        PolicyVariant::FullPre,
        PolicyVariant::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyVariant::HybridGdm => "hybrid_gdm",
            PolicyVariant::NoPre => "no_pre",
            PolicyVariant::FullPre => "full_pre",
            PolicyVariant::Random => "random",
        }
    }

    /// The fixed pre-migration fraction, if the variant imposes one.
    pub fn forced_fraction(&self) -> Option<f64> {
        match self {
            PolicyVariant::NoPre => Some(0.0),
            PolicyVariant::FullPre => Some(1.0),
            _ => None,
        }
    }

    pub fn is_learned(&self) -> bool {
        *self != PolicyVariant::Random
    }
}

impl fmt::Display for PolicyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected hybrid_gdm, no_pre, full_pre or random)"
                ))
            })
    }
}

fn uniform_feasible(mask: &[bool], rng: &mut ChaCha8Rng) -> usize {
    let feasible: Vec<usize> = (0..mask.len()).filter(|&s| mask[s]).collect();
    if feasible.is_empty() {
        rng.random_range(0..mask.len())
    } else {
        feasible[rng.random_range(0..feasible.len())]
    }
}

/// Uniform feasible servers for both roles and a uniform fraction. With no
/// feasible server any index is emitted and the environment repairs it.
pub fn random_action(masks: &[Vec<bool>], rng: &mut ChaCha8Rng) -> HybridAction {
    HybridAction(
        masks
            .iter()
            .map(|m| VehicleAction {
                current: uniform_feasible(m, rng),
                pre: uniform_feasible(m, rng),
                pre_fraction: rng.random_range(0.0..=1.0),
            })
            .collect(),
    )
}

/// Overwrites the fraction channel when the variant fixes it.
pub fn apply_variant(variant: PolicyVariant, action: &mut HybridAction) {
    if let Some(k) = variant.forced_fraction() {
        for a in &mut action.0 {
            a.pre_fraction = k;
        }
    }
}

/// Chooses an action for `variant`. Learned variants need `actor`.
pub fn act<F: Real>(
    variant: PolicyVariant,
    actor: Option<&DiffusionActor<F>>,
    obs: &[f64],
    masks: &[Vec<bool>],
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<HybridAction> {
    if variant == PolicyVariant::Random {
        return Ok(random_action(masks, rng));
    }
    let actor = actor.ok_or_else(|| Error::Contract(format!("variant {variant} needs an actor")))?;
    let mut action = actor.generate(obs, masks, mode, rng)?.action;
    apply_variant(variant, &mut action);
    Ok(action)
}
