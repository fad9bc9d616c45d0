//! Control-experiment replicates and the intrinsic unpredictability floor.
//!
//! A replicate pair is a base game and a copy in which every non-focal
//! judgment, at every round, is shifted by the difference `s` between the
//! focal participant's two initial judgments. If the focal revision is
//! `x(r) = lambda * g(r) + (1 - lambda) * h + eta` with `g` shift
//! equivariant, `h` depending only on the picture and `eta` independent
//! zero-mean noise, then `x'(r) - x(r) - lambda * s = eta' - eta` and
//! `E[eta^2] = E[(eta' - eta)^2] / 2`. No distributional form of `eta` is
//! assumed.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytics::stats::compensated_sum;
use crate::datastore::{
    fmt_f64, write_rows_csv, Dataset, GameRecord, JudgmentRow, DEFAULT_GROUP_SIZE, SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::model::TaskKind;

/// Id prefix of scripted (non-focal) members in stored control pairs.
pub const SYNTHETIC_PREFIX: &str = "synthetic-";

/// Tolerance of the replicate shift invariant.
pub const SHIFT_TOLERANCE: f64 = 1e-9;

/// Game order of the original (10, 10) control session, in triples.
pub const REFERENCE_SCHEDULE: [usize; 30] = [
    1, 2, 11, 3, 4, 12, 6, 13, 5, 14, 7, 8, 9, 1, 15, 4, 10, 16, 2, 6, 17, 7, 18, 3, 8, 5, 19, 10,
    9, 20,
];

pub const LAMBDA_GRID_STEP: f64 = 0.01;

/// Replicate synthesized from a base game.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub game: GameRecord,
    pub shift: f64,
    /// Some shifted value left the task range and was clamped.
    pub clamped: bool,
}

/// Copies `base`, sets the focal round-1 judgment to `new_focal_initial`
/// and shifts every other judgment by the difference. Focal rounds 2 and 3
/// are left empty.
pub fn synthesize_replicate(base: &GameRecord, focal_id: &str, new_focal_initial: f64) -> Result<Replicate> {
    let incomplete = |reason: String| Error::IncompleteBaseGame {
        game: base.game_id.clone(),
        reason,
    };
    let focal = base
        .slot_of(focal_id)
        .ok_or_else(|| incomplete(format!("focal participant {focal_id} not in game")))?;
    let x1 = base.judgments[focal][0].ok_or_else(|| incomplete("focal round-1 judgment missing".into()))?;
    for (slot, p) in base.participants.iter().enumerate() {
        if slot != focal && !base.is_full(slot) {
            return Err(incomplete(format!("member {p} lacks a judgment")));
        }
    }
    let shift = new_focal_initial - x1;
    let task = base.task;
    let mut clamped = !task.contains(new_focal_initial);
    let mut game = base.clone();
    for (slot, j) in game.judgments.iter_mut().enumerate() {
        if slot == focal {
            *j = [Some(task.clamp(new_focal_initial)), None, None];
            continue;
        }
        for v in j.iter_mut() {
            let shifted = v.expect("checked complete") + shift;
            let c = task.clamp(shifted);
            clamped |= c != shifted;
            *v = Some(c);
        }
    }
    Ok(Replicate { game, shift, clamped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicatePair {
    pub base_game: GameRecord,
    pub replicate_game: GameRecord,
    pub focal_participant_id: String,
    pub shift: f64,
    /// `(x(r), x'(r))` for rounds 1 to 3.
    pub focal: [(Option<f64>, Option<f64>); 3],
    pub clamped: bool,
}

impl ReplicatePair {
    /// Builds a pair; `clamped` is set when the shift invariant fails.
    pub fn new(base: GameRecord, replicate: GameRecord, focal_id: &str) -> Result<Self> {
        let incomplete = |game: &GameRecord, reason: String| Error::IncompleteBaseGame {
            game: game.game_id.clone(),
            reason,
        };
        let fb = base
            .slot_of(focal_id)
            .ok_or_else(|| incomplete(&base, format!("focal participant {focal_id} not in game")))?;
        let fr = replicate
            .slot_of(focal_id)
            .ok_or_else(|| incomplete(&replicate, format!("focal participant {focal_id} not in game")))?;
        let x1 = base.judgments[fb][0].ok_or_else(|| incomplete(&base, "focal round 1 missing".into()))?;
        let x1r = replicate.judgments[fr][0]
            .ok_or_else(|| incomplete(&replicate, "focal round 1 missing".into()))?;
        let mut focal = [(None, None); 3];
        for (r, f) in focal.iter_mut().enumerate() {
            *f = (base.judgments[fb][r], replicate.judgments[fr][r]);
        }
        let mut pair = ReplicatePair {
            shift: x1r - x1,
            base_game: base,
            replicate_game: replicate,
            focal_participant_id: focal_id.to_string(),
            focal,
            clamped: false,
        };
        pair.clamped = pair.max_shift_violation() > SHIFT_TOLERANCE;
        Ok(pair)
    }

    /// Largest deviation of a non-focal replicate judgment from its base
    /// value plus the shift; infinite if the membership differs.
    pub fn max_shift_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (slot, p) in self.base_game.participants.iter().enumerate() {
            if *p == self.focal_participant_id {
                continue;
            }
            let Some(rs) = self.replicate_game.slot_of(p) else {
                return f64::INFINITY;
            };
            for r in 0..3 {
                match (self.base_game.judgments[slot][r], self.replicate_game.judgments[rs][r]) {
                    (Some(a), Some(b)) => worst = worst.max((b - a - self.shift).abs()),
                    (None, None) => {}
                    _ => return f64::INFINITY,
                }
            }
        }
        if self.replicate_game.participants.len() != self.base_game.participants.len() {
            return f64::INFINITY;
        }
        worst
    }

    /// `(delta_1, delta_r)` when the focal judged at `round` in both games.
    pub fn deltas(&self, round: u8) -> Option<(f64, f64)> {
        let (a1, b1) = self.focal[0];
        let (ar, br) = self.focal[round as usize - 1];
        Some((b1? - a1?, br? - ar?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub lambda: f64,
    /// False when every delta_1 is zero; lambda is then 0.
    pub identifiable: bool,
    /// Least-squares ratio before clamping to [0, 1].
    pub unclamped: f64,
}

pub fn lambda_star(deltas: &[(f64, f64)]) -> LambdaFit {
    let sxx = compensated_sum(deltas.iter().map(|(d1, _)| d1 * d1));
    let sxy = compensated_sum(deltas.iter().map(|(d1, dr)| d1 * dr));
    if sxx <= 0.0 {
        return LambdaFit {
            lambda: 0.0,
            identifiable: false,
            unclamped: 0.0,
        };
    }
    let unclamped = sxy / sxx;
    LambdaFit {
        lambda: unclamped.clamp(0.0, 1.0),
        identifiable: true,
        unclamped,
    }
}

/// `sqrt(mean (delta_r - lambda * delta_1)^2 / 2)`; 0 for no pairs.
pub fn intrinsic_std(deltas: &[(f64, f64)], lambda: f64) -> f64 {
    if deltas.is_empty() {
        return 0.0;
    }
    let ss = compensated_sum(deltas.iter().map(|(d1, dr)| {
        let e = dr - lambda * d1;
        0.5 * e * e
    }));
    (ss / deltas.len() as f64).max(0.0).sqrt()
}

/// `(lambda, rms)` on `[0, 1]` with step 0.01.
pub fn lambda_curve(deltas: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let steps = (1.0 / LAMBDA_GRID_STEP).round() as usize;
    (0..=steps)
        .map(|i| {
            let l = i as f64 / steps as f64;
            (l, intrinsic_std(deltas, l))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEstimate {
    pub round: u8,
    pub lambda: LambdaFit,
    pub std_eta: f64,
    pub lambda_curve: Vec<(f64, f64)>,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnpredictabilityEstimate {
    /// Round-2 fit.
    pub lambda_star: f64,
    pub std_eta_round2: f64,
    pub std_eta_round3: f64,
    /// Round-2 curve.
    pub lambda_curve: Vec<(f64, f64)>,
    pub n_pairs: usize,
    /// Pairs dropped because of clamping.
    pub n_excluded: usize,
    pub round2: RoundEstimate,
    /// Round-3 floor; an under-estimate of the floor faced by predictors
    /// using initial judgments only.
    pub round3: RoundEstimate,
}

fn round_estimate(pairs: &[&ReplicatePair], round: u8) -> RoundEstimate {
    let deltas: Vec<(f64, f64)> = pairs.iter().filter_map(|p| p.deltas(round)).collect();
    let lambda = lambda_star(&deltas);
    RoundEstimate {
        round,
        lambda,
        std_eta: intrinsic_std(&deltas, lambda.lambda),
        lambda_curve: lambda_curve(&deltas),
        n_pairs: deltas.len(),
    }
}

/// Fits lambda and std(eta) independently for rounds 2 and 3 over the
/// unclamped pairs.
pub fn estimate_unpredictability(pairs: &[ReplicatePair]) -> Result<UnpredictabilityEstimate> {
    let used: Vec<&ReplicatePair> = pairs.iter().filter(|p| !p.clamped).collect();
    let n_excluded = pairs.len() - used.len();
    if used.is_empty() {
        return Err(Error::NoData(format!(
            "no usable replicate pairs ({n_excluded} excluded for clamping)"
        )));
    }
    let round2 = round_estimate(&used, 2);
    let round3 = round_estimate(&used, 3);
    if round2.n_pairs == 0 {
        return Err(Error::NoData("no pair has round-2 focal judgments in both games".into()));
    }
    Ok(UnpredictabilityEstimate {
        lambda_star: round2.lambda.lambda,
        std_eta_round2: round2.std_eta,
        std_eta_round3: round3.std_eta,
        lambda_curve: round2.lambda_curve.clone(),
        n_pairs: used.len(),
        n_excluded,
        round2,
        round3,
    })
}

pub fn write_lambda_curve<W: Write>(curve: &[(f64, f64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["lambda", "rms"])?;
    for (l, rms) in curve {
        w.write_record([format!("{l:.2}"), fmt_f64(*rms)])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))
}

/// Session order: replicated games are `1..=replicated`, fillers follow.
/// Every replicated game appears twice with at least one filler and at
/// least `min(3, len - 2)` games between its two occurrences.
pub fn schedule_control_session(replicated: usize, fillers: usize) -> Result<Vec<usize>> {
    if replicated == 10 && fillers == 10 {
        return Ok(REFERENCE_SCHEDULE.to_vec());
    }
    if replicated > 0 && fillers == 0 {
        return Err(Error::InfeasibleSchedule(
            "replicated games need at least one filler game between their copies".into(),
        ));
    }
    let r = replicated;
    let middle = (3usize.saturating_sub(r.saturating_sub(1))).clamp(1, fillers.max(1)).min(fillers);
    let filler_ids: Vec<usize> = (r + 1..=r + fillers).collect();
    let mut core: Vec<usize> = (1..=r).collect();
    core.extend(&filler_ids[..middle]);
    core.extend(1..=r);
    // remaining fillers spread evenly over the gaps of the core sequence
    let rest = &filler_ids[middle..];
    let mut order = Vec::with_capacity(2 * r + fillers);
    let gaps = core.len() + 1;
    let mut placed = 0;
    for (i, g) in core.iter().enumerate() {
        let due = rest.len() * (i + 1) / gaps;
        while placed < due {
            order.push(rest[placed]);
            placed += 1;
        }
        order.push(*g);
    }
    order.extend(&rest[placed..]);
    validate_schedule(&order, replicated, fillers)?;
    Ok(order)
}

pub fn validate_schedule(order: &[usize], replicated: usize, fillers: usize) -> Result<()> {
    let bad = |m: String| Err(Error::InfeasibleSchedule(m));
    if order.len() != 2 * replicated + fillers {
        return bad(format!("expected {} games, got {}", 2 * replicated + fillers, order.len()));
    }
    let need = 3.min(order.len().saturating_sub(2));
    let mut seen: HashMap<usize, Vec<usize>> = HashMap::new();
    for (pos, g) in order.iter().enumerate() {
        seen.entry(*g).or_default().push(pos);
    }
    for g in 1..=replicated + fillers {
        let want = if g <= replicated { 2 } else { 1 };
        let at = seen.get(&g).map_or(&[][..], Vec::as_slice);
        if at.len() != want {
            return bad(format!("game {g} appears {} times, expected {want}", at.len()));
        }
        if want == 2 {
            let between = &order[at[0] + 1..at[1]];
            if between.len() < need {
                return bad(format!("game {g} copies separated by {} games", between.len()));
            }
            if !between.iter().any(|&x| x > replicated) {
                return bad(format!("no filler between the copies of game {g}"));
            }
        }
    }
    Ok(())
}

/// `a,b,c | d,e,f | ...`
pub fn format_schedule(order: &[usize]) -> String {
    order
        .chunks(3)
        .map(|c| c.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(" | ")
}

/// Stores pairs in the datastore CSV layout with an extra `replicate_of`
/// column naming the base game of replicate rows (empty for base rows).
pub fn write_pairs_csv<W: Write>(pairs: &[ReplicatePair], writer: W) -> Result<()> {
    let mut rows: Vec<JudgmentRow> = Vec::new();
    let mut replicate_of = Vec::new();
    for p in pairs {
        let ds = Dataset {
            task: Some(p.base_game.task),
            games: vec![p.base_game.clone(), p.replicate_game.clone()],
        };
        for row in ds.rows() {
            replicate_of.push(if row.game_id == p.replicate_game.game_id {
                p.base_game.game_id.clone()
            } else {
                String::new()
            });
            rows.push(row);
        }
    }
    write_rows_csv(&rows, writer, &[("replicate_of", replicate_of)])
}

pub fn save_pairs(pairs: &[ReplicatePair], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_pairs_csv(pairs, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_pairs(path: &Path) -> Result<Vec<ReplicatePair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pairs_csv(BufReader::new(file))
}

#[derive(Deserialize)]
struct PairRow {
    #[serde(flatten)]
    row: JudgmentRow,
    #[serde(default)]
    replicate_of: String,
}

/// Reads pairs written by [`write_pairs_csv`]. The focal participant is
/// the member whose id lacks the scripted-member prefix.
pub fn read_pairs_csv<R: Read>(reader: R) -> Result<Vec<ReplicatePair>> {
    let mut text = String::new();
    let mut reader = reader;
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    for (i, line) in text.lines().enumerate() {
        if let Some(v) = line.trim().strip_prefix('#').and_then(|r| r.trim().strip_prefix("schema_version:")) {
            if v.trim() != SCHEMA_VERSION.to_string() {
                return Err(Error::Schema {
                    line: i as u64 + 1,
                    message: format!("unsupported schema_version {}", v.trim()),
                });
            }
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if !header.iter().any(|h| h == "replicate_of") {
        return Err(Error::Schema {
            line: 1,
            message: "missing `replicate_of` column".into(),
        });
    }
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut base_of: BTreeMap<String, (String, u64)> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let r: PairRow = record
            .deserialize(Some(&header))
            .map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if !r.replicate_of.is_empty() {
            base_of.insert(r.row.game_id.clone(), (r.replicate_of.clone(), line));
        }
        rows.push(r.row);
        lines.push(line);
    }
    let ds = Dataset::from_rows(rows, &lines, DEFAULT_GROUP_SIZE.max(64))?;
    let by_id: HashMap<&str, &GameRecord> = ds.games.iter().map(|g| (g.game_id.as_str(), g)).collect();
    let mut pairs = Vec::new();
    for game in &ds.games {
        let Some((base_id, line)) = base_of.get(&game.game_id) else {
            continue;
        };
        let base = by_id.get(base_id.as_str()).ok_or_else(|| Error::Schema {
            line: *line,
            message: format!("replicate_of names unknown game {base_id}"),
        })?;
        let focal: Vec<&String> = game
            .participants
            .iter()
            .filter(|p| !p.starts_with(SYNTHETIC_PREFIX))
            .collect();
        if focal.len() != 1 {
            return Err(Error::Schema {
                line: *line,
                message: format!(
                    "game {} needs exactly one member without the `{SYNTHETIC_PREFIX}` prefix, found {}",
                    game.game_id,
                    focal.len()
                ),
            });
        }
        pairs.push(ReplicatePair::new((*base).clone(), game.clone(), focal[0])?);
    }
    Ok(pairs)
}

/// Task of a pair set, if uniform.
pub fn pairs_task(pairs: &[ReplicatePair]) -> Option<TaskKind> {
    let t = pairs.first()?.base_game.task;
    pairs.iter().all(|p| p.base_game.task == t).then_some(t)
}
