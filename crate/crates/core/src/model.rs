//! Consensus update and forward simulation of group opinion trajectories.
//!
//! The group mean includes the focal participant's own opinion. Missing
//! opinions are excluded from the mean and stay missing across rounds.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Whether the group mean counts the focal participant. Fixed to the
/// inclusive reading; exposed so downstream tooling can echo it.
pub const MEAN_INCLUDES_SELF: bool = true;

/// Sanity bound applied to influenceabilities fed into simulation.
pub const SIM_ALPHA_BOUNDS: (f64, f64) = (-0.5, 1.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Colour-percentage estimate in [0, 100].
    Gauging,
    /// Item count estimate in [0, 500].
    Counting,
}

impl TaskKind {
    pub fn range_max(self) -> f64 {
        match self {
            TaskKind::Gauging => 100.0,
            TaskKind::Counting => 500.0,
        }
    }

    /// Divisor mapping errors onto the 0-100 scale.
    pub fn report_scale(self) -> f64 {
        match self {
            TaskKind::Gauging => 1.0,
            TaskKind::Counting => 5.0,
        }
    }

    pub fn clamp(self, value: f64) -> f64 {
        value.clamp(0.0, self.range_max())
    }

    pub fn contains(self, value: f64) -> bool {
        value.is_finite() && (0.0..=self.range_max()).contains(&value)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Gauging => "gauging",
            TaskKind::Counting => "counting",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gauging" => Ok(TaskKind::Gauging),
            "counting" => Ok(TaskKind::Counting),
            other => Err(format!("unknown task kind `{other}`")),
        }
    }
}

/// Influenceabilities after the first and second rounds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InfluenceabilityPair {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl InfluenceabilityPair {
    pub const fn new(alpha1: f64, alpha2: f64) -> Self {
        Self { alpha1, alpha2 }
    }

    /// Influenceability applied when moving from `round` to `round + 1`.
    pub fn for_round(&self, round: u8) -> f64 {
        if round == 1 {
            self.alpha1
        } else {
            self.alpha2
        }
    }

    pub fn clamped_for_simulation(&self) -> Self {
        let (lo, hi) = SIM_ALPHA_BOUNDS;
        Self::new(self.alpha1.clamp(lo, hi), self.alpha2.clamp(lo, hi))
    }

    pub fn is_finite(&self) -> bool {
        self.alpha1.is_finite() && self.alpha2.is_finite()
    }
}

/// Opinions of one group at one round.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupState {
    pub round: u8,
    pub ids: Vec<String>,
    pub opinions: Vec<Option<f64>>,
}

impl GroupState {
    pub fn new(round: u8, ids: Vec<String>, opinions: Vec<Option<f64>>) -> Self {
        assert_eq!(ids.len(), opinions.len(), "one opinion slot per member");
        Self {
            round,
            ids,
            opinions,
        }
    }

    /// Round-1 state with anonymous members `m0, m1, ...`.
    pub fn from_values(values: &[f64]) -> Self {
        let ids = (0..values.len()).map(|i| format!("m{i}")).collect();
        Self::new(1, ids, values.iter().copied().map(Some).collect())
    }

    pub fn present(&self) -> usize {
        self.opinions.iter().flatten().count()
    }

    pub fn mean(&self) -> Result<f64> {
        group_mean(&self.opinions)
    }

    pub fn step(&self, alphas: &[f64]) -> Result<GroupState> {
        Ok(GroupState {
            round: self.round + 1,
            ids: self.ids.clone(),
            opinions: consensus_step(&self.opinions, alphas)?,
        })
    }
}

/// Arithmetic mean over present opinions.
pub fn group_mean(opinions: &[Option<f64>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for x in opinions.iter().flatten() {
        sum += x;
        n += 1;
    }
    if n < 2 {
        return Err(Error::DegenerateGroup { present: n });
    }
    Ok(sum / n as f64)
}

/// One application of the consensus update to every present member.
///
/// `alphas` holds one influenceability per member slot; entries for missing
/// members are ignored.
pub fn consensus_step(opinions: &[Option<f64>], alphas: &[f64]) -> Result<Vec<Option<f64>>> {
    if alphas.len() != opinions.len() {
        return Err(Error::AlphaCountMismatch {
            expected: opinions.len(),
            got: alphas.len(),
        });
    }
    let mean = group_mean(opinions)?;
    Ok(opinions
        .iter()
        .zip(alphas)
        .map(|(x, &a)| x.map(|x| revise(x, mean, a)))
        .collect())
}

#[inline]
pub fn revise(own: f64, mean: f64, alpha: f64) -> f64 {
    own + alpha * (mean - own)
}

/// Three rounds of a simulated group.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rounds: [GroupState; 3],
}

/// Consensus step followed by Gaussian noise and clamping to the task range.
///
/// Noise is drawn for present members in slot order.
pub fn advance<R: Rng + ?Sized>(
    state: &GroupState,
    alphas: &[f64],
    noise_std: f64,
    task: TaskKind,
    rng: &mut R,
) -> Result<GroupState> {
    let mut next = state.step(alphas)?;
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("finite noise std");
        for x in next.opinions.iter_mut().flatten() {
            *x = task.clamp(*x + normal.sample(rng));
        }
    } else {
        for x in next.opinions.iter_mut().flatten() {
            *x = task.clamp(*x);
        }
    }
    Ok(next)
}

/// Rounds 2 and 3 from `initial`, using each member's pair (clamped to the
/// simulation bounds), independent zero-mean Gaussian noise of `noise_std`,
/// and clamping to the task range. Deterministic given `seed`.
pub fn simulate_trajectory(
    initial: &GroupState,
    pairs: &[InfluenceabilityPair],
    noise_std: f64,
    task: TaskKind,
    seed: u64,
) -> Result<Trajectory> {
    if pairs.len() != initial.opinions.len() {
        return Err(Error::AlphaCountMismatch {
            expected: initial.opinions.len(),
            got: pairs.len(),
        });
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidSpec(format!("noise_std must be finite and >= 0, got {noise_std}")));
    }
    let pairs: Vec<_> = pairs.iter().map(|p| p.clamped_for_simulation()).collect();
    let mut rng = seed::rng(seed, &[seed::stream::TRAJECTORY]);
    let a1: Vec<f64> = pairs.iter().map(|p| p.alpha1).collect();
    let a2: Vec<f64> = pairs.iter().map(|p| p.alpha2).collect();
    let mut first = initial.clone();
    first.round = 1;
    let second = advance(&first, &a1, noise_std, task, &mut rng)?;
    let third = advance(&second, &a2, noise_std, task, &mut rng)?;
    Ok(Trajectory {
        rounds: [first, second, third],
    })
}
