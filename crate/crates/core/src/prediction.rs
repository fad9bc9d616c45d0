//! Prediction scenarios and their crossvalidation.
//!
//! Three predictors are compared: the null model (opinions never change),
//! the consensus model with the participant's own fitted couple, and the
//! consensus model with a typical population couple picked among `K`
//! mixture means. Only the round-1 judgments of the target game are used
//! as input. For round-3 targets the others' round-2 opinions are either
//! forward-simulated with the population's single typical couple or taken
//! from the record.
//!
//! Crossvalidation splits participants into two halves (whole groups go to
//! one half). One half supplies the population couples, the other is
//! predicted by repeated random sub-sampling of each participant's games,
//! then the roles are swapped. Errors are accumulated in native units and
//! divided by the task's report scale only when the report is built.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::stats::{compensated_sum, quantile_sorted};
use crate::datastore::{Dataset, GameRecord};
use crate::error::{Error, Result};
use crate::estimation::{assign_typical, fit_alpha_pairs, fit_individual, fit_mixture, EmOptions, MixtureModel, DEFAULT_EPSILON};
use crate::model::{revise, InfluenceabilityPair, TaskKind};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OthersMode {
    /// Others advance with the population's single typical couple.
    SimulatedTypical,
    /// Others' recorded round-2 judgments are used.
    Observed,
}

impl FromStr for OthersMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "simulated_typical" | "simulated" => Ok(OthersMode::SimulatedTypical),
            "observed" => Ok(OthersMode::Observed),
            other => Err(format!("unknown others mode `{other}`")),
        }
    }
}

impl fmt::Display for OthersMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OthersMode::SimulatedTypical => "simulated_typical",
            OthersMode::Observed => "observed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Null,
    IndividualAlpha,
    /// Typical couple among the means of a `K`-component mixture.
    Typical(usize),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Null => f.write_str("null"),
            Method::IndividualAlpha => f.write_str("individual_alpha"),
            Method::Typical(k) => write!(f, "typical_k{k}"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "null" => return Ok(Method::Null),
            "individual" | "individual_alpha" => return Ok(Method::IndividualAlpha),
            _ => {}
        }
        let k = s
            .strip_prefix("typical_k")
            .or_else(|| s.strip_prefix("typical"))
            .and_then(|k| k.trim_start_matches(['_', '(']).trim_end_matches(')').parse::<usize>().ok())
            .ok_or_else(|| format!("unknown method `{s}`"))?;
        if k == 0 {
            return Err("typical method needs K >= 1".into());
        }
        Ok(Method::Typical(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub method: Method,
    pub others_mode: OthersMode,
    pub target_round: u8,
}

/// Couples a prediction needs beyond the game itself.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PredictionParams {
    /// The target's couple (individual fit or assigned typical couple).
    pub couple: Option<InfluenceabilityPair>,
    /// Population couple driving simulated others.
    pub population: Option<InfluenceabilityPair>,
}

/// What the predictors see of one target participant in one game.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameView {
    pub game: usize,
    pub x1: f64,
    /// Recorded round-2 and round-3 judgments of the target.
    pub later: [Option<f64>; 2],
    pub others1_sum: f64,
    pub others1_n: usize,
    pub others2_sum: f64,
    pub others2_n: usize,
}

impl GameView {
    /// View of `slot` in `game`. Requires the target's round-1 judgment and
    /// at least one other round-1 judgment.
    pub fn new(game_index: usize, game: &GameRecord, slot: usize) -> Result<Self> {
        let x1 = game.judgments[slot][0].ok_or_else(|| Error::InsufficientData(format!(
            "participant {} has no round-1 judgment in game {}",
            game.participants[slot], game.game_id
        )))?;
        let (mut s1, mut n1, mut s2, mut n2) = (0.0, 0, 0.0, 0);
        for (j, judg) in game.judgments.iter().enumerate() {
            if j == slot {
                continue;
            }
            if let Some(v) = judg[0] {
                s1 += v;
                n1 += 1;
            }
            if let Some(v) = judg[1] {
                s2 += v;
                n2 += 1;
            }
        }
        if n1 == 0 {
            return Err(Error::DegenerateGroup { present: 1 });
        }
        Ok(Self {
            game: game_index,
            x1,
            later: [game.judgments[slot][1], game.judgments[slot][2]],
            others1_sum: s1,
            others1_n: n1,
            others2_sum: s2,
            others2_n: n2,
        })
    }

    /// Complete views usable for fitting and validation: all three target
    /// judgments plus at least one other judgment at rounds 1 and 2.
    pub fn complete(game_index: usize, game: &GameRecord, slot: usize) -> Option<Self> {
        let v = Self::new(game_index, game, slot).ok()?;
        (v.later[0].is_some() && v.later[1].is_some() && v.others2_n > 0).then_some(v)
    }

    pub fn mean1(&self) -> f64 {
        (self.x1 + self.others1_sum) / (1 + self.others1_n) as f64
    }

    pub fn actual(&self, round: u8) -> Option<f64> {
        match round {
            1 => Some(self.x1),
            2 => self.later[0],
            3 => self.later[1],
            _ => None,
        }
    }

    /// Recorded regression pairs `(d, y)` for both transitions.
    pub fn transitions(&self) -> [Option<(f64, f64)>; 2] {
        let t1 = self.later[0].map(|x2| (self.mean1() - self.x1, x2 - self.x1));
        let t2 = match (self.later[0], self.later[1]) {
            (Some(x2), Some(x3)) if self.others2_n > 0 => {
                let mean2 = (x2 + self.others2_sum) / (1 + self.others2_n) as f64;
                Some((mean2 - x2, x3 - x2))
            }
            _ => None,
        };
        [t1, t2]
    }
}

/// Consensus-model prediction of the target at `target_round` (2 or 3)
/// from round-1 judgments. No noise is added.
pub fn predict_view(
    v: &GameView,
    target_round: u8,
    couple: InfluenceabilityPair,
    others_mode: OthersMode,
    population: InfluenceabilityPair,
) -> f64 {
    let mean1 = v.mean1();
    let x2 = revise(v.x1, mean1, couple.alpha1);
    if target_round <= 2 {
        return x2;
    }
    let (others2_sum, others2_n) = match others_mode {
        OthersMode::SimulatedTypical => {
            let n = v.others1_n as f64;
            (v.others1_sum + population.alpha1 * (n * mean1 - v.others1_sum), v.others1_n)
        }
        OthersMode::Observed => (v.others2_sum, v.others2_n),
    };
    let mean2 = (x2 + others2_sum) / (1 + others2_n) as f64;
    revise(x2, mean2, couple.alpha2)
}

/// Prediction for one participant in one game.
pub fn predict(game: &GameRecord, participant: &str, spec: &PredictorSpec, params: &PredictionParams) -> Result<f64> {
    if !(2..=3).contains(&spec.target_round) {
        return Err(Error::InvalidSpec(format!("target round {} not in 2..=3", spec.target_round)));
    }
    let slot = game
        .slot_of(participant)
        .ok_or_else(|| Error::UnknownParticipant(participant.to_string()))?;
    let view = GameView::new(0, game, slot)?;
    if spec.method == Method::Null {
        return Ok(view.x1);
    }
    let couple = params
        .couple
        .ok_or_else(|| Error::MissingModel(format!("{} needs a fitted couple", spec.method)))?;
    let population = match (spec.target_round, spec.others_mode) {
        (3, OthersMode::SimulatedTypical) => params
            .population
            .ok_or_else(|| Error::MissingModel("simulated others need the population couple".into()))?,
        (3, OthersMode::Observed) if view.others2_n == 0 => {
            return Err(Error::DegenerateGroup { present: 1 });
        }
        _ => params.population.unwrap_or_default(),
    };
    Ok(predict_view(&view, spec.target_round, couple, spec.others_mode, population))
}

/// Percentile bootstrap interval of the mean of `errors` (resampling
/// participants).
pub fn bootstrap_ci(errors: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if errors.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "bootstrap needs 2 participants, got {}",
            errors.len()
        )));
    }
    let mut rng = seed::rng(seed, &[seed::stream::BOOTSTRAP]);
    let n = errors.len();
    let mut stats: Vec<f64> = (0..resamples.max(1))
        .map(|_| compensated_sum((0..n).map(|_| errors[rng.random_range(0..n)])) / n as f64)
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&stats, tail), quantile_sorted(&stats, 1.0 - tail)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalOptions {
    pub methods: Vec<Method>,
    pub training_sizes: Vec<usize>,
    pub iterations: usize,
    pub seed: u64,
    pub target_round: u8,
    pub others_mode: OthersMode,
    pub em: EmOptions,
    pub ci_level: f64,
    pub bootstrap_resamples: usize,
}

impl Default for CrossvalOptions {
    fn default() -> Self {
        Self {
            methods: vec![Method::Null, Method::IndividualAlpha, Method::Typical(1), Method::Typical(2)],
            training_sizes: (1..=15).collect(),
            iterations: 300,
            seed: 0,
            target_round: 3,
            others_mode: OthersMode::SimulatedTypical,
            em: EmOptions::default(),
            ci_level: 0.95,
            bootstrap_resamples: 2000,
        }
    }
}

/// One row of the report, in 0-100 units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub training_size: usize,
    /// Mean over participants of RMSE_i.
    pub rmse: f64,
    pub mae: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Root of the mean squared error pooled over all predictions.
    pub rmse_pooled: f64,
    pub participants: usize,
    pub predictions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantError {
    pub method: String,
    pub training_size: usize,
    pub participant_id: String,
    pub rmse: f64,
    pub mae: f64,
    pub predictions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub task: TaskKind,
    pub target_round: u8,
    pub others_mode: OthersMode,
    pub seed: u64,
    pub iterations: usize,
    /// Whether the halves were split by whole groups.
    pub stratified_split: bool,
    /// Typical couples fitted on each half (pass 0 trains on half A).
    pub typical: Vec<BTreeMap<usize, MixtureModel>>,
    pub rows: Vec<ReportRow>,
    pub per_participant: Vec<ParticipantError>,
}

impl PredictionReport {
    pub fn row(&self, method: Method, training_size: usize) -> Option<&ReportRow> {
        let name = method.to_string();
        self.rows.iter().find(|r| r.method == name && r.training_size == training_size)
    }

    /// `method,training_size,rmse,mae,ci_lo,ci_hi` plus the pooled column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,training_size,rmse,mae,ci_lo,ci_hi,rmse_pooled\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.method, r.training_size, r.rmse, r.mae, r.ci_lo, r.ci_hi, r.rmse_pooled
            ));
        }
        out
    }
}

#[derive(Default, Clone, Copy)]
struct Accum {
    sq: f64,
    abs: f64,
    n: u64,
}

impl Accum {
    fn add(&mut self, e: f64) {
        self.sq += e * e;
        self.abs += e.abs();
        self.n += 1;
    }
}

/// Participants connected by shared games.
fn groups(dataset: &Dataset, ids: &[String]) -> Vec<Vec<usize>> {
    let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for game in &dataset.games {
        let members: Vec<usize> = game.participants.iter().filter_map(|p| pos.get(p.as_str()).copied()).collect();
        for w in members.windows(2) {
            let a = find(&mut parent, w[0]);
            let b = find(&mut parent, w[1]);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..ids.len() {
        let r = find(&mut parent, i);
        comps.entry(r).or_default().push(i);
    }
    comps.into_values().collect()
}

/// Two halves of participant indices. Whole groups are assigned to the
/// currently smaller half in random order; a dataset forming a single group
/// falls back to a uniform participant split.
fn split_halves(dataset: &Dataset, ids: &[String], seed: u64) -> (Vec<Vec<usize>>, bool) {
    let mut rng = seed::rng(seed, &[seed::stream::HALF_SPLIT]);
    let mut comps = groups(dataset, ids);
    if comps.len() >= 2 {
        comps.shuffle(&mut rng);
        let mut halves = vec![Vec::new(), Vec::new()];
        for c in comps {
            let target = if halves[0].len() <= halves[1].len() { 0 } else { 1 };
            halves[target].extend(c);
        }
        for h in &mut halves {
            h.sort_unstable();
        }
        (halves, true)
    } else {
        let mut all: Vec<usize> = (0..ids.len()).collect();
        all.shuffle(&mut rng);
        let mid = all.len() / 2;
        let mut a = all[..mid].to_vec();
        let mut b = all[mid..].to_vec();
        a.sort_unstable();
        b.sort_unstable();
        (vec![a, b], false)
    }
}

/// Usable views of every participant, in game order.
pub fn participant_views(dataset: &Dataset) -> BTreeMap<String, Vec<GameView>> {
    dataset
        .participant_index()
        .into_iter()
        .map(|(p, seats)| {
            let views = seats
                .into_iter()
                .filter_map(|s| GameView::complete(s.game, &dataset.games[s.game], s.slot))
                .collect();
            (p, views)
        })
        .collect()
}

fn fit_views(views: &[GameView]) -> InfluenceabilityPair {
    let a1 = fit_alpha_pairs(views.iter().filter_map(|v| v.transitions()[0]), DEFAULT_EPSILON);
    let a2 = fit_alpha_pairs(views.iter().filter_map(|v| v.transitions()[1]), DEFAULT_EPSILON);
    InfluenceabilityPair::new(a1.alpha, a2.alpha)
}

struct PassModels {
    population: InfluenceabilityPair,
    typical: BTreeMap<usize, MixtureModel>,
}

fn fit_pass_models(
    dataset: &Dataset,
    ids: &[String],
    train: &[usize],
    ks: &[usize],
    options: &CrossvalOptions,
    pass: u64,
) -> Result<PassModels> {
    let couples: Vec<InfluenceabilityPair> = train
        .iter()
        .filter_map(|&i| fit_individual(dataset, &ids[i]).ok())
        .filter(|f| !f.any_degenerate())
        .map(|f| f.pair)
        .collect();
    let mut typical = BTreeMap::new();
    for &k in ks {
        let m = fit_mixture(&couples, k, seed::derive(options.seed, &[pass, k as u64]), options.em)?;
        typical.insert(k, m);
    }
    let population = typical[&1].means[0];
    Ok(PassModels { population, typical })
}

/// Repeated random sub-sampling crossvalidation of the requested methods.
pub fn crossvalidate(dataset: &Dataset, options: &CrossvalOptions) -> Result<PredictionReport> {
    let target = options.target_round;
    if !(2..=3).contains(&target) {
        return Err(Error::InvalidSpec(format!("target round {target} not in 2..=3")));
    }
    if options.methods.is_empty() || options.training_sizes.is_empty() {
        return Err(Error::InvalidSpec("no methods or training sizes requested".into()));
    }
    let views = participant_views(dataset);
    let ids: Vec<String> = views.keys().cloned().collect();
    if ids.len() < 2 {
        return Err(Error::InsufficientData(format!("{} participants, crossvalidation needs 2", ids.len())));
    }
    let max_size = *options.training_sizes.iter().max().expect("non-empty");
    for (p, v) in &views {
        if v.len() <= max_size {
            return Err(Error::InsufficientGames {
                participant: p.clone(),
                available: v.len(),
                required: max_size + 1,
            });
        }
    }
    let all_views: Vec<&Vec<GameView>> = views.values().collect();

    let mut ks: Vec<usize> = options
        .methods
        .iter()
        .filter_map(|m| if let Method::Typical(k) = m { Some(*k) } else { None })
        .collect();
    ks.push(1);
    ks.sort_unstable();
    ks.dedup();

    let (halves, stratified) = split_halves(dataset, &ids, options.seed);
    let fitted_methods: Vec<Method> = options.methods.iter().copied().filter(|m| *m != Method::Null).collect();

    // per participant: accumulators [method][size]
    let mut per_participant: Vec<Option<Vec<Vec<Accum>>>> = vec![None; ids.len()];
    let mut typical_models = Vec::new();
    for pass in 0..2u64 {
        let train = &halves[pass as usize];
        let test = &halves[1 - pass as usize];
        let models = fit_pass_models(dataset, &ids, train, &ks, options, pass)?;
        let results: Vec<(usize, Vec<Vec<Accum>>)> = test
            .par_iter()
            .map(|&pi| {
                let acc = evaluate_participant(all_views[pi], pi, pass, &fitted_methods, &models, options)?;
                Ok((pi, acc))
            })
            .collect::<Result<Vec<_>>>()?;
        for (pi, acc) in results {
            per_participant[pi] = Some(acc);
        }
        typical_models.push(models.typical);
    }

    let scale = dataset.task_or_default().report_scale();
    let mut rows = Vec::new();
    let mut participant_rows = Vec::new();
    for (mi, method) in options.methods.iter().enumerate() {
        for (si, &size) in options.training_sizes.iter().enumerate() {
            let mut rmse_i = Vec::with_capacity(ids.len());
            let mut mae_i = Vec::with_capacity(ids.len());
            let mut total_sq = Vec::with_capacity(ids.len());
            let mut total_n = 0u64;
            for (pi, id) in ids.iter().enumerate() {
                let acc = match method {
                    Method::Null => null_accum(all_views[pi], target),
                    _ => {
                        let fi = fitted_methods.iter().position(|m| m == method).expect("fitted method");
                        match &per_participant[pi] {
                            Some(a) => a[fi][si],
                            None => continue,
                        }
                    }
                };
                if acc.n == 0 {
                    continue;
                }
                let r = (acc.sq / acc.n as f64).sqrt() / scale;
                let a = acc.abs / acc.n as f64 / scale;
                rmse_i.push(r);
                mae_i.push(a);
                total_sq.push(acc.sq);
                total_n += acc.n;
                participant_rows.push(ParticipantError {
                    method: method.to_string(),
                    training_size: size,
                    participant_id: id.clone(),
                    rmse: r,
                    mae: a,
                    predictions: acc.n,
                });
            }
            let n = rmse_i.len() as f64;
            let rmse = compensated_sum(rmse_i.iter().copied()) / n;
            let mae = compensated_sum(mae_i.iter().copied()) / n;
            let (lo, hi) = bootstrap_ci(
                &rmse_i,
                options.ci_level,
                options.bootstrap_resamples,
                seed::derive(options.seed, &[mi as u64, size as u64]),
            )
            .unwrap_or((rmse, rmse));
            rows.push(ReportRow {
                method: method.to_string(),
                training_size: size,
                rmse,
                mae,
                ci_lo: lo.min(rmse),
                ci_hi: hi.max(rmse),
                rmse_pooled: (compensated_sum(total_sq) / total_n as f64).sqrt() / scale,
                participants: rmse_i.len(),
                predictions: total_n,
            });
        }
    }

    Ok(PredictionReport {
        task: dataset.task_or_default(),
        target_round: target,
        others_mode: options.others_mode,
        seed: options.seed,
        iterations: options.iterations,
        stratified_split: stratified,
        typical: typical_models,
        rows,
        per_participant: participant_rows,
    })
}

/// The null predictor has no training step: every usable game validates it.
fn null_accum(views: &[GameView], target: u8) -> Accum {
    let mut acc = Accum::default();
    for v in views {
        acc.add(v.x1 - v.actual(target).expect("complete view"));
    }
    acc
}

fn evaluate_participant(
    views: &[GameView],
    participant_index: usize,
    pass: u64,
    methods: &[Method],
    models: &PassModels,
    options: &CrossvalOptions,
) -> Result<Vec<Vec<Accum>>> {
    let target = options.target_round;
    let mut acc = vec![vec![Accum::default(); options.training_sizes.len()]; methods.len()];
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut train_buf: Vec<GameView> = Vec::with_capacity(views.len());
    for it in 0..options.iterations {
        let mut rng = seed::rng(
            options.seed,
            &[seed::stream::TRAINING_SUBSET, pass, it as u64, participant_index as u64],
        );
        order.sort_unstable();
        order.shuffle(&mut rng);
        for (si, &size) in options.training_sizes.iter().enumerate() {
            train_buf.clear();
            train_buf.extend(order[..size].iter().map(|&i| views[i]));
            for (mi, method) in methods.iter().enumerate() {
                let couple = match method {
                    Method::Null => unreachable!("null is evaluated in closed form"),
                    Method::IndividualAlpha => fit_views(&train_buf),
                    Method::Typical(k) => {
                        let model = &models.typical[k];
                        let idx = assign_typical(&train_buf, &model.means, options.others_mode, models.population)?;
                        model.means[idx]
                    }
                };
                for &vi in &order[size..] {
                    let v = &views[vi];
                    let pred = predict_view(v, target, couple, options.others_mode, models.population);
                    acc[mi][si].add(pred - v.actual(target).expect("complete view"));
                }
            }
        }
    }
    Ok(acc)
}
