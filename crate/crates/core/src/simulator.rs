//! Synthetic populations with known influenceabilities.
//!
//! Seeds are split per work unit (see [`crate::seed`]): participant couples
//! use `[POPULATION_COUPLES]`, game `k` of group `g` uses `[GAME, g, k]` and
//! its dropouts `[MISSING, g, k]`, control pair `p` attempt `a` uses
//! `[CONTROL_PAIR, p, a]`. Output is independent of thread scheduling.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{Dataset, GameRecord, DEFAULT_GROUP_SIZE};
use crate::error::{Error, Result};
use crate::estimation::MixtureModel;
use crate::model::{advance, revise, GroupState, InfluenceabilityPair, TaskKind};
use crate::seed::{self, stream};
use crate::unpredictability::{synthesize_replicate, ReplicatePair, SYNTHETIC_PREFIX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n_participants: usize,
    pub group_size: usize,
    pub n_games: usize,
    pub task: TaskKind,
    /// Source of the true couples.
    pub mixture: MixtureModel,
    /// Mean offset of round-1 opinions from truth.
    pub initial_bias: f64,
    /// Standard deviation of round-1 opinions around truth + bias.
    pub initial_spread: f64,
    pub noise_std: f64,
    /// Probability that a participant drops out of a game (at a uniformly
    /// chosen round, missing from then on).
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_participants: 60,
            group_size: DEFAULT_GROUP_SIZE,
            n_games: 30,
            task: TaskKind::Gauging,
            mixture: MixtureModel::isotropic(
                vec![0.6, 0.4],
                vec![InfluenceabilityPair::new(0.32, 0.20), InfluenceabilityPair::new(0.05, 0.02)],
                0.03,
            ),
            initial_bias: 0.0,
            initial_spread: 15.0,
            noise_std: 5.0,
            missing_rate: 0.0,
            seed: 0,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.group_size < 2 {
            return bad(format!("group_size {} < 2", self.group_size));
        }
        if self.n_participants < 2 {
            return bad(format!("n_participants {} < 2", self.n_participants));
        }
        if self.n_games < 1 {
            return bad("n_games must be >= 1".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} must be finite and >= 0", self.noise_std));
        }
        if !(self.initial_spread > 0.0 && self.initial_spread.is_finite()) {
            return bad(format!("initial_spread {} must be > 0", self.initial_spread));
        }
        if !self.initial_bias.is_finite() {
            return bad("initial_bias must be finite".into());
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing_rate {} outside [0, 1)", self.missing_rate));
        }
        Ok(())
    }

    /// Group sizes as balanced as possible with at most `group_size` members.
    pub fn group_sizes(&self) -> Vec<usize> {
        let n_groups = self.n_participants.div_ceil(self.group_size);
        let base = self.n_participants / n_groups;
        let extra = self.n_participants % n_groups;
        (0..n_groups).map(|g| base + usize::from(g < extra)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub couples: BTreeMap<String, InfluenceabilityPair>,
    pub groups: Vec<Vec<String>>,
    pub noise_std: f64,
    pub spec: PopulationSpec,
}

impl GroundTruth {
    /// `participant_id,alpha1,alpha2`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["participant_id", "alpha1", "alpha2"])?;
        for (p, c) in &self.couples {
            w.write_record([p.clone(), c.alpha1.to_string(), c.alpha2.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<writer>", e))
    }
}

pub fn participant_id(i: usize) -> String {
    format!("p{:04}", i + 1)
}

/// Truth drawn uniformly from the central 80% of the task range.
pub fn draw_truth<R: Rng + ?Sized>(task: TaskKind, rng: &mut R) -> f64 {
    let r = task.range_max();
    rng.random_range(0.1 * r..=0.9 * r)
}

pub fn generate_population(spec: &PopulationSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed, &[stream::POPULATION_COUPLES]);
    let ids: Vec<String> = (0..spec.n_participants).map(participant_id).collect();
    let couples: Vec<InfluenceabilityPair> = (0..spec.n_participants)
        .map(|_| spec.mixture.sample(&mut rng).clamped_for_simulation())
        .collect();

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut next = 0;
    for size in spec.group_sizes() {
        groups.push((next..next + size).collect());
        next += size;
    }

    let units: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..spec.n_games).map(move |k| (g, k)))
        .collect();
    let games: Vec<GameRecord> = units
        .par_iter()
        .map(|&(g, k)| simulate_game(spec, g, k, &groups[g], &ids, &couples))
        .collect::<Result<Vec<_>>>()?;

    let truth = GroundTruth {
        couples: ids.iter().cloned().zip(couples.iter().copied()).collect(),
        groups: groups.iter().map(|m| m.iter().map(|&i| ids[i].clone()).collect()).collect(),
        noise_std: spec.noise_std,
        spec: spec.clone(),
    };
    let games = games.into_iter().filter(|g| !g.participants.is_empty()).collect();
    Ok((
        Dataset {
            task: Some(spec.task),
            games,
        },
        truth,
    ))
}

fn simulate_game(
    spec: &PopulationSpec,
    group: usize,
    game: usize,
    members: &[usize],
    ids: &[String],
    couples: &[InfluenceabilityPair],
) -> Result<GameRecord> {
    let mut rng = seed::rng(spec.seed, &[stream::GAME, group as u64, game as u64]);
    let truth = draw_truth(spec.task, &mut rng);
    let spread = Normal::new(spec.initial_bias, spec.initial_spread).expect("validated spread");
    let initial: Vec<Option<f64>> = members
        .iter()
        .map(|_| Some(spec.task.clamp(truth + spread.sample(&mut rng))))
        .collect();

    // dropout round per member, 4 = never
    let mut miss_rng = seed::rng(spec.seed, &[stream::MISSING, group as u64, game as u64]);
    let dropout: Vec<u8> = members
        .iter()
        .map(|_| {
            if spec.missing_rate > 0.0 && miss_rng.random::<f64>() < spec.missing_rate {
                miss_rng.random_range(1..=3)
            } else {
                4
            }
        })
        .collect();

    let member_ids: Vec<String> = members.iter().map(|&i| ids[i].clone()).collect();
    let mut judgments = vec![[None; 3]; members.len()];
    let mut state = GroupState::new(1, member_ids.clone(), initial);
    for round in 1..=3u8 {
        for (slot, d) in dropout.iter().enumerate() {
            if *d <= round {
                state.opinions[slot] = None;
            }
        }
        for (slot, x) in state.opinions.iter().enumerate() {
            judgments[slot][round as usize - 1] = *x;
        }
        if round == 3 || state.present() < 2 {
            break;
        }
        let alphas: Vec<f64> = members.iter().map(|&i| couples[i].for_round(round)).collect();
        state = advance(&state, &alphas, spec.noise_std, spec.task, &mut rng)?;
    }

    let keep: Vec<usize> = (0..members.len()).filter(|&s| judgments[s].iter().any(Option::is_some)).collect();
    Ok(GameRecord {
        session_id: format!("s{:03}", group + 1),
        game_id: format!("g{:03}-{:02}", group + 1, game + 1),
        task: spec.task,
        truth,
        participants: keep.iter().map(|&s| member_ids[s].clone()).collect(),
        judgments: keep.iter().map(|&s| judgments[s]).collect(),
    })
}

/// Control cohort: each pair is one human (focal) participant playing a
/// base game and its shifted replicate with five scripted members.
///
/// The focal participant follows
/// `x(r) = lambda * g_r + (1 - lambda) * h + eta`, where `g_r` is the
/// consensus trajectory from the focal's and others' judgments (shift
/// equivariant), `h` is a picture-dependent anchor and `eta` zero-mean
/// Gaussian noise drawn independently for each replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSpec {
    pub n_pairs: usize,
    pub task: TaskKind,
    pub lambda_round2: f64,
    pub lambda_round3: f64,
    pub noise_std: f64,
    /// Standard deviation of the focal's initial-judgment variation
    /// between the two replicates.
    pub shift_std: f64,
    pub initial_spread: f64,
    /// Offset of the picture anchor `h` from truth.
    pub picture_bias: f64,
    pub focal: InfluenceabilityPair,
    /// Couple of the scripted members when their base judgments are produced.
    pub others: InfluenceabilityPair,
    pub others_noise_std: f64,
    pub group_size: usize,
    /// Redraw a pair (up to this many attempts) while clamping to the task
    /// range would break the shift.
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for ControlSpec {
    fn default() -> Self {
        Self {
            n_pairs: 500,
            task: TaskKind::Gauging,
            lambda_round2: 0.7,
            lambda_round3: 0.7,
            noise_std: 5.0,
            shift_std: 10.0,
            initial_spread: 10.0,
            picture_bias: 0.0,
            focal: InfluenceabilityPair::new(0.3, 0.2),
            others: InfluenceabilityPair::new(0.3, 0.2),
            others_noise_std: 3.0,
            group_size: DEFAULT_GROUP_SIZE,
            max_attempts: 50,
            seed: 0,
        }
    }
}

impl ControlSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.group_size < 2 {
            return bad("group_size must be >= 2".into());
        }
        for (name, l) in [("lambda_round2", self.lambda_round2), ("lambda_round3", self.lambda_round3)] {
            if !(0.0..=1.0).contains(&l) {
                return bad(format!("{name} {l} outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("noise_std", self.noise_std),
            ("shift_std", self.shift_std),
            ("others_noise_std", self.others_noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be finite and >= 0"));
            }
        }
        if !(self.initial_spread > 0.0) {
            return bad("initial_spread must be > 0".into());
        }
        Ok(())
    }
}

pub const FOCAL_PREFIX: &str = "human-";

pub fn generate_control_pairs(spec: &ControlSpec) -> Result<Vec<ReplicatePair>> {
    spec.validate()?;
    (0..spec.n_pairs)
        .into_par_iter()
        .map(|p| {
            let mut last = None;
            for attempt in 0..spec.max_attempts.max(1) {
                let pair = control_pair(spec, p, attempt)?;
                if !pair.clamped {
                    return Ok(pair);
                }
                last = Some(pair);
            }
            Ok(last.expect("at least one attempt"))
        })
        .collect()
}

fn control_pair(spec: &ControlSpec, p: usize, attempt: usize) -> Result<ReplicatePair> {
    let mut rng = seed::rng(spec.seed, &[stream::CONTROL_PAIR, p as u64, attempt as u64]);
    let task = spec.task;
    let truth = draw_truth(task, &mut rng);
    let spread = Normal::new(0.0, spec.initial_spread).expect("validated");
    let n_others = spec.group_size - 1;
    let focal_id = format!("{FOCAL_PREFIX}{:04}", p + 1);
    let mut ids = vec![focal_id.clone()];
    ids.extend((0..n_others).map(|j| format!("{SYNTHETIC_PREFIX}{}", j + 1)));

    // scripted members: a past game replayed with its own dynamics
    let initial: Vec<Option<f64>> = (0..spec.group_size)
        .map(|_| Some(task.clamp(truth + spread.sample(&mut rng))))
        .collect();
    let others_state = GroupState::new(1, ids[1..].to_vec(), initial[1..].to_vec());
    let a1 = vec![spec.others.alpha1; n_others];
    let a2 = vec![spec.others.alpha2; n_others];
    let others2 = advance(&others_state, &a1, spec.others_noise_std, task, &mut rng)?;
    let others3 = advance(&others2, &a2, spec.others_noise_std, task, &mut rng)?;

    let x1 = initial[0].expect("drawn");
    let mut judgments = vec![[Some(x1), None, None]];
    for j in 0..n_others {
        judgments.push([others_state.opinions[j], others2.opinions[j], others3.opinions[j]]);
    }
    let mut base = GameRecord {
        session_id: format!("control-{:04}", p + 1),
        game_id: format!("c{:04}-a", p + 1),
        task,
        truth,
        participants: ids,
        judgments,
    };

    let shift = Normal::new(0.0, spec.shift_std.max(f64::MIN_POSITIVE)).expect("validated").sample(&mut rng);
    let x1_rep = x1 + shift;
    let mut replicate = synthesize_replicate(&base, &focal_id, task.clamp(x1_rep))?;
    replicate.game.game_id = format!("c{:04}-b", p + 1);
    let mut clamped = replicate.clamped || task.clamp(x1_rep) != x1_rep;

    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("validated");
    let picture = truth + spec.picture_bias;
    let mut respond = |game: &mut GameRecord| {
        let x1 = game.judgments[0][0].expect("focal round 1");
        let others = |r: usize| -> (f64, usize) {
            let v: Vec<f64> = game.judgments[1..].iter().filter_map(|j| j[r]).collect();
            (v.iter().sum(), v.len())
        };
        let (s1, n1) = others(0);
        let mean1 = (x1 + s1) / (n1 + 1) as f64;
        let g2 = revise(x1, mean1, spec.focal.alpha1);
        let (s2, n2) = others(1);
        let mean2 = (g2 + s2) / (n2 + 1) as f64;
        let g3 = revise(g2, mean2, spec.focal.alpha2);
        let eta2 = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let eta3 = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let x2 = spec.lambda_round2 * g2 + (1.0 - spec.lambda_round2) * picture + eta2;
        let x3 = spec.lambda_round3 * g3 + (1.0 - spec.lambda_round3) * picture + eta3;
        let (c2, c3) = (task.clamp(x2), task.clamp(x3));
        game.judgments[0][1] = Some(c2);
        game.judgments[0][2] = Some(c3);
        c2 != x2 || c3 != x3
    };
    clamped |= respond(&mut base);
    clamped |= respond(&mut replicate.game);
    let mut pair = ReplicatePair::new(base, replicate.game, &focal_id)?;
    pair.clamped |= clamped;
    Ok(pair)
}
