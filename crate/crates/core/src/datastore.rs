//! Judgment files, dataset validation and the participant filters.
//!
//! CSV files carry a `# schema_version: 1` comment line followed by the
//! header `session_id,game_id,task,truth,participant_id,round,value`.
//! JSON files are an array of row objects, each with a `schema_version`
//! field. A missing judgment is simply an absent row.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analytics::stats::{median, pearson};
use crate::error::{Error, Result};
use crate::model::{group_mean, TaskKind};

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: [&str; 7] = [
    "session_id",
    "game_id",
    "task",
    "truth",
    "participant_id",
    "round",
    "value",
];
pub const DEFAULT_GROUP_SIZE: usize = 6;
pub const DEFAULT_MIN_FULL_GAMES: usize = 15;

/// Correlation thresholds the original cohorts produced.
pub const PRESET_THRESHOLD_GAUGING: f64 = 0.61;
pub const PRESET_THRESHOLD_COUNTING: f64 = 0.24;

/// Iglewicz-Hoaglin modified z-score constants.
const MAD_Z_FACTOR: f64 = 0.6745;
const MAD_Z_CUT: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Format::Csv),
            "json" => Some(Format::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRow {
    pub session_id: String,
    pub game_id: String,
    pub task: TaskKind,
    pub truth: f64,
    pub participant_id: String,
    pub round: u8,
    pub value: f64,
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    #[serde(default = "default_schema_version")]
    schema_version: u32,
    #[serde(flatten)]
    row: JudgmentRow,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

/// One task instance played by one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GameRecord {
    pub session_id: String,
    pub game_id: String,
    pub task: TaskKind,
    pub truth: f64,
    pub participants: Vec<String>,
    /// `judgments[slot][round - 1]`
    pub judgments: Vec<[Option<f64>; 3]>,
}

impl GameRecord {
    pub fn slot_of(&self, participant: &str) -> Option<usize> {
        self.participants.iter().position(|p| p == participant)
    }

    /// Opinions of every member at `round` (1-based).
    pub fn round(&self, round: u8) -> Vec<Option<f64>> {
        self.judgments.iter().map(|j| j[round as usize - 1]).collect()
    }

    pub fn present_at(&self, round: u8) -> usize {
        self.judgments.iter().filter(|j| j[round as usize - 1].is_some()).count()
    }

    pub fn mean_at(&self, round: u8) -> Result<f64> {
        group_mean(&self.round(round))
    }

    pub fn is_full(&self, slot: usize) -> bool {
        self.judgments[slot].iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    /// `None` only for an empty dataset.
    pub task: Option<TaskKind>,
    pub games: Vec<GameRecord>,
}

/// Location of one participant's judgments: game index and member slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seat {
    pub game: usize,
    pub slot: usize,
}

impl Dataset {
    pub fn is_empty(&self) -> bool {
        self.games.is_empty()
    }

    pub fn task_or_default(&self) -> TaskKind {
        self.task.unwrap_or(TaskKind::Gauging)
    }

    /// Participant index, sorted by id; seats are in game order.
    pub fn participant_index(&self) -> BTreeMap<String, Vec<Seat>> {
        let mut index: BTreeMap<String, Vec<Seat>> = BTreeMap::new();
        for (g, game) in self.games.iter().enumerate() {
            for (slot, p) in game.participants.iter().enumerate() {
                index.entry(p.clone()).or_default().push(Seat { game: g, slot });
            }
        }
        index
    }

    pub fn participant_ids(&self) -> Vec<String> {
        self.participant_index().into_keys().collect()
    }

    pub fn seats_of(&self, participant: &str) -> Vec<Seat> {
        self.games
            .iter()
            .enumerate()
            .filter_map(|(g, game)| game.slot_of(participant).map(|slot| Seat { game: g, slot }))
            .collect()
    }

    pub fn full_games(&self, participant: &str) -> usize {
        self.seats_of(participant)
            .into_iter()
            .filter(|s| self.games[s.game].is_full(s.slot))
            .count()
    }

    pub fn n_rows(&self) -> usize {
        self.games
            .iter()
            .map(|g| g.judgments.iter().map(|j| j.iter().flatten().count()).sum::<usize>())
            .sum()
    }

    /// Drops every judgment of the listed participants; games left with no
    /// members are dropped too.
    pub fn without_participants(&self, removed: &BTreeSet<String>) -> Dataset {
        let games = self
            .games
            .iter()
            .filter_map(|game| {
                let keep: Vec<usize> = (0..game.participants.len())
                    .filter(|&s| !removed.contains(&game.participants[s]))
                    .collect();
                if keep.is_empty() {
                    return None;
                }
                Some(GameRecord {
                    participants: keep.iter().map(|&s| game.participants[s].clone()).collect(),
                    judgments: keep.iter().map(|&s| game.judgments[s]).collect(),
                    ..game.clone()
                })
            })
            .collect();
        Dataset {
            task: self.task,
            games,
        }
    }

    pub fn rows(&self) -> Vec<JudgmentRow> {
        let mut rows = Vec::with_capacity(self.n_rows());
        for game in &self.games {
            for (p, j) in game.participants.iter().zip(&game.judgments) {
                for (r, v) in j.iter().enumerate() {
                    if let Some(value) = v {
                        rows.push(JudgmentRow {
                            session_id: game.session_id.clone(),
                            game_id: game.game_id.clone(),
                            task: game.task,
                            truth: game.truth,
                            participant_id: p.clone(),
                            round: r as u8 + 1,
                            value: *value,
                        });
                    }
                }
            }
        }
        rows
    }

    /// Validates rows and groups them into games. `lines[i]` is the source
    /// line reported for `rows[i]`.
    pub fn from_rows(rows: Vec<JudgmentRow>, lines: &[u64], max_group_size: usize) -> Result<Dataset> {
        let mut task: Option<(TaskKind, u64)> = None;
        let mut games: Vec<GameRecord> = Vec::new();
        let mut by_id: HashMap<String, usize> = HashMap::new();
        for (i, row) in rows.into_iter().enumerate() {
            let line = lines.get(i).copied().unwrap_or(i as u64 + 1);
            let schema = |message: String| Error::Schema { line, message };
            match task {
                None => task = Some((row.task, line)),
                Some((t, _)) if t != row.task => {
                    return Err(Error::MixedTask {
                        first: t.to_string(),
                        second: row.task.to_string(),
                        line,
                    })
                }
                _ => {}
            }
            if !(1..=3).contains(&row.round) {
                return Err(schema(format!("round {} outside 1..=3", row.round)));
            }
            if !row.task.contains(row.value) {
                return Err(schema(format!(
                    "value {} outside {} range [0, {}]",
                    row.value,
                    row.task,
                    row.task.range_max()
                )));
            }
            if !row.task.contains(row.truth) {
                return Err(schema(format!("truth {} outside task range", row.truth)));
            }
            if row.game_id.is_empty() || row.participant_id.is_empty() {
                return Err(schema("empty game_id or participant_id".into()));
            }
            let g = match by_id.get(&row.game_id) {
                Some(&g) => {
                    let game = &games[g];
                    if game.truth != row.truth || game.session_id != row.session_id {
                        return Err(schema(format!(
                            "game {} has inconsistent truth or session",
                            row.game_id
                        )));
                    }
                    g
                }
                None => {
                    by_id.insert(row.game_id.clone(), games.len());
                    games.push(GameRecord {
                        session_id: row.session_id.clone(),
                        game_id: row.game_id.clone(),
                        task: row.task,
                        truth: row.truth,
                        participants: Vec::new(),
                        judgments: Vec::new(),
                    });
                    games.len() - 1
                }
            };
            let game = &mut games[g];
            let slot = match game.slot_of(&row.participant_id) {
                Some(s) => s,
                None => {
                    if game.participants.len() >= max_group_size {
                        return Err(schema(format!(
                            "game {} exceeds group size {}",
                            row.game_id, max_group_size
                        )));
                    }
                    game.participants.push(row.participant_id.clone());
                    game.judgments.push([None; 3]);
                    game.participants.len() - 1
                }
            };
            let cell = &mut game.judgments[slot][row.round as usize - 1];
            if cell.is_some() {
                return Err(schema(format!(
                    "duplicate judgment for game {}, participant {}, round {}",
                    row.game_id, row.participant_id, row.round
                )));
            }
            *cell = Some(row.value);
        }
        Ok(Dataset {
            task: task.map(|(t, _)| t),
            games,
        })
    }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    load_dataset_with(path, format, DEFAULT_GROUP_SIZE)
}

pub fn load_dataset_with(path: &Path, format: Format, max_group_size: usize) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), format, max_group_size)
}

pub fn read_dataset<R: Read>(reader: R, format: Format, max_group_size: usize) -> Result<Dataset> {
    let (rows, lines) = match format {
        Format::Csv => read_csv_rows(reader)?,
        Format::Json => read_json_rows(reader)?,
    };
    Dataset::from_rows(rows, &lines, max_group_size)
}

fn read_csv_rows<R: Read>(reader: R) -> Result<(Vec<JudgmentRow>, Vec<u64>)> {
    let mut text = String::new();
    let mut reader = reader;
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("schema_version:") {
                let v: u32 = v.trim().parse().map_err(|_| Error::Parse {
                    line: i as u64 + 1,
                    message: format!("bad schema_version `{}`", v.trim()),
                })?;
                if v != SCHEMA_VERSION {
                    return Err(Error::Schema {
                        line: i as u64 + 1,
                        message: format!("unsupported schema_version {v}"),
                    });
                }
            }
        } else if !t.is_empty() {
            break;
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: e.position().map_or(1, |p| p.line()),
        message: e.to_string(),
    })?;
    if header.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Schema {
            line: header.position().map_or(1, |p| p.line()),
            message: format!("header must be `{}`", CSV_HEADER.join(",")),
        });
    }
    let header = header.clone();
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: JudgmentRow = record
            .deserialize(Some(&header))
            .map_err(|e| Error::Parse { line, message: e.to_string() })?;
        rows.push(row);
        lines.push(line);
    }
    Ok((rows, lines))
}

fn read_json_rows<R: Read>(reader: R) -> Result<(Vec<JudgmentRow>, Vec<u64>)> {
    let rows: Vec<JsonRow> = serde_json::from_reader(reader).map_err(|e| Error::Parse {
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema {
                line: i as u64 + 1,
                message: format!("unsupported schema_version {}", r.schema_version),
            });
        }
        out.push(r.row);
    }
    let lines = (1..=out.len() as u64).collect();
    Ok((out, lines))
}

pub fn save_dataset(dataset: &Dataset, path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(dataset, &mut w, format)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W, format: Format) -> Result<()> {
    let rows = dataset.rows();
    match format {
        Format::Csv => write_rows_csv(&rows, writer, &[]),
        Format::Json => {
            let rows: Vec<JsonRow> = rows
                .into_iter()
                .map(|row| JsonRow {
                    schema_version: SCHEMA_VERSION,
                    row,
                })
                .collect();
            let mut writer = writer;
            serde_json::to_writer_pretty(&mut writer, &rows)?;
            writer
                .write_all(b"\n")
                .map_err(|e| Error::io("<writer>", e))
        }
    }
}

/// Writes rows in the datastore CSV layout. `extra` appends columns
/// (name, per-row value) after the fixed ones.
pub fn write_rows_csv<W: Write>(
    rows: &[JudgmentRow],
    mut writer: W,
    extra: &[(&str, Vec<String>)],
) -> Result<()> {
    writeln!(writer, "# schema_version: {SCHEMA_VERSION}").map_err(|e| Error::io("<writer>", e))?;
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    header.extend(extra.iter().map(|(n, _)| *n));
    w.write_record(&header)?;
    for (i, r) in rows.iter().enumerate() {
        let mut rec = vec![
            r.session_id.clone(),
            r.game_id.clone(),
            r.task.to_string(),
            fmt_f64(r.truth),
            r.participant_id.clone(),
            r.round.to_string(),
            fmt_f64(r.value),
        ];
        rec.extend(extra.iter().map(|(_, v)| v[i].clone()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))
}

/// Shortest representation that round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    let s = format!("{x}");
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// Pearson correlation between a participant's round-1 judgments and the
/// truths of the games they played.
pub fn trustworthiness(participant: &str, dataset: &Dataset) -> Result<f64> {
    let mut xs = Vec::new();
    let mut truths = Vec::new();
    for seat in dataset.seats_of(participant) {
        let game = &dataset.games[seat.game];
        if let Some(x) = game.judgments[seat.slot][0] {
            xs.push(x);
            truths.push(game.truth);
        }
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "participant {participant} has {} round-1 judgments, 3 required",
            xs.len()
        )));
    }
    pearson(&xs, &truths).ok_or_else(|| {
        Error::DegenerateCorrelation(format!(
            "participant {participant}: judgments or truths have zero variance"
        ))
    })
}

/// Low cut of the one-sided modified z-score rule: values below
/// `median - 3.5 * MAD / 0.6745` are outliers.
pub fn mad_outlier_threshold(values: &[f64]) -> Result<f64> {
    if values.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "{} values, at least 5 required",
            values.len()
        )));
    }
    let m = median(values);
    let deviations: Vec<f64> = values.iter().map(|x| (x - m).abs()).collect();
    let mad = median(&deviations);
    if mad <= 0.0 {
        return Err(Error::DegenerateMad);
    }
    Ok(m - MAD_Z_CUT * mad / MAD_Z_FACTOR)
}

/// Modified z-score of `x` given a cohort's median and MAD.
pub fn modified_z_score(x: f64, median: f64, mad: f64) -> f64 {
    MAD_Z_FACTOR * (x - median) / mad
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrThreshold {
    /// Derived from the cohort's correlations by the MAD rule.
    Auto,
    /// The threshold reported for the original cohort of a task kind.
    Preset(TaskKind),
    Fixed(f64),
}

impl CorrThreshold {
    pub fn preset(task: TaskKind) -> f64 {
        match task {
            TaskKind::Gauging => PRESET_THRESHOLD_GAUGING,
            TaskKind::Counting => PRESET_THRESHOLD_COUNTING,
        }
    }
}

impl fmt::Display for CorrThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorrThreshold::Auto => f.write_str("auto"),
            CorrThreshold::Preset(t) => write!(f, "preset-{t}"),
            CorrThreshold::Fixed(x) => write!(f, "{x}"),
        }
    }
}

impl FromStr for CorrThreshold {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(CorrThreshold::Auto),
            "gauging" | "preset-gauging" => Ok(CorrThreshold::Preset(TaskKind::Gauging)),
            "counting" | "preset-counting" => Ok(CorrThreshold::Preset(TaskKind::Counting)),
            other => other
                .parse::<f64>()
                .map(CorrThreshold::Fixed)
                .map_err(|_| format!("bad correlation threshold `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FilterReport {
    pub initial: usize,
    pub kept: usize,
    pub min_full_games: usize,
    pub threshold: Option<f64>,
    pub threshold_mode: String,
    /// Passes of the auto rule until no further participant was removed.
    pub auto_passes: usize,
    pub removed_full_games: Vec<String>,
    pub removed_correlation: Vec<String>,
    pub correlations: BTreeMap<String, Option<f64>>,
}

/// Keeps participants with more than `min_full_games` complete games whose
/// trustworthiness reaches the correlation threshold.
///
/// The auto threshold is recomputed over the surviving cohort until it
/// stops removing anyone, which makes the filter idempotent. A cohort whose
/// correlations have zero MAD is not filtered on correlation.
pub fn filter_participants(
    dataset: &Dataset,
    min_full_games: usize,
    threshold: CorrThreshold,
) -> (Dataset, FilterReport) {
    let ids = dataset.participant_ids();
    let initial = ids.len();
    let mut removed_full_games = Vec::new();
    let mut survivors = Vec::new();
    for id in ids {
        if dataset.full_games(&id) > min_full_games {
            survivors.push(id);
        } else {
            removed_full_games.push(id);
        }
    }
    let correlations: BTreeMap<String, Option<f64>> = survivors
        .iter()
        .map(|id| (id.clone(), trustworthiness(id, dataset).ok()))
        .collect();

    let mut removed_correlation: BTreeSet<String> = correlations
        .iter()
        .filter(|(_, c)| c.is_none())
        .map(|(id, _)| id.clone())
        .collect();
    let (threshold_value, mode, passes) = match threshold {
        CorrThreshold::Fixed(t) => (Some(t), format!("fixed:{t}"), 0),
        CorrThreshold::Preset(task) => (Some(CorrThreshold::preset(task)), format!("preset:{task}"), 0),
        CorrThreshold::Auto => {
            let mut passes = 0;
            let mut current = None;
            loop {
                let values: Vec<f64> = correlations
                    .iter()
                    .filter(|(id, _)| !removed_correlation.contains(*id))
                    .filter_map(|(_, c)| *c)
                    .collect();
                let Ok(t) = mad_outlier_threshold(&values) else { break };
                passes += 1;
                current = Some(t);
                let newly: Vec<String> = correlations
                    .iter()
                    .filter(|(id, c)| !removed_correlation.contains(*id) && c.is_some_and(|c| c < t))
                    .map(|(id, _)| id.clone())
                    .collect();
                if newly.is_empty() {
                    break;
                }
                removed_correlation.extend(newly);
            }
            (current, "auto".to_string(), passes)
        }
    };
    if let (Some(t), false) = (threshold_value, matches!(threshold, CorrThreshold::Auto)) {
        for (id, c) in &correlations {
            if c.is_some_and(|c| c < t) {
                removed_correlation.insert(id.clone());
            }
        }
    }

    let mut removed: BTreeSet<String> = removed_full_games.iter().cloned().collect();
    removed.extend(removed_correlation.iter().cloned());
    let filtered = dataset.without_participants(&removed);
    let report = FilterReport {
        initial,
        kept: initial - removed.len(),
        min_full_games,
        threshold: threshold_value,
        threshold_mode: mode,
        auto_passes: passes,
        removed_full_games,
        removed_correlation: removed_correlation.into_iter().collect(),
        correlations,
    };
    (filtered, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_text(body: &str) -> String {
        format!("session_id,game_id,task,truth,participant_id,round,value\n{body}")
    }

    fn parse(text: &str) -> Result<Dataset> {
        read_dataset(text.as_bytes(), Format::Csv, DEFAULT_GROUP_SIZE)
    }

    #[test]
    fn three_rows_make_one_game() {
        let d = parse(&csv_text(
            "s1,g1,gauging,50,p1,1,40\ns1,g1,gauging,50,p1,2,45\ns1,g1,gauging,50,p1,3,47\n",
        ))
        .unwrap();
        assert_eq!(d.games.len(), 1);
        assert_eq!(d.games[0].judgments[0], [Some(40.0), Some(45.0), Some(47.0)]);
        assert_eq!(d.task, Some(TaskKind::Gauging));
    }

    #[test]
    fn round_four_is_schema_error_naming_the_line() {
        let err = parse(&csv_text("s1,g1,gauging,50,p1,1,40\ns1,g1,gauging,50,p1,4,45\n")).unwrap_err();
        match err {
            Error::Schema { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("round 4"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn empty_file_with_header_is_empty_dataset() {
        let d = parse(&csv_text("")).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.task, None);
        let d = parse("# schema_version: 1\nsession_id,game_id,task,truth,participant_id,round,value\n").unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn parse_error_carries_line() {
        let err = parse(&csv_text("s1,g1,gauging,50,p1,1,40\ns1,g1,gauging,abc,p1,2,45\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn mixed_tasks_rejected() {
        let err = parse(&csv_text("s1,g1,gauging,50,p1,1,40\ns1,g2,counting,50,p1,1,40\n")).unwrap_err();
        assert!(matches!(err, Error::MixedTask { line: 3, .. }));
    }

    #[test]
    fn invariant_violations_rejected() {
        for body in [
            "s1,g1,gauging,50,p1,1,140\n",
            "s1,g1,gauging,50,p1,1,40\ns1,g1,gauging,50,p1,1,41\n",
            "s1,g1,gauging,50,p1,1,40\ns1,g1,gauging,60,p2,1,41\n",
            "s1,g1,gauging,50,p1,0,40\n",
        ] {
            assert!(matches!(parse(&csv_text(body)), Err(Error::Schema { .. })), "{body}");
        }
        let mut body = String::new();
        for p in 0..7 {
            body.push_str(&format!("s1,g1,gauging,50,p{p},1,40\n"));
        }
        assert!(matches!(parse(&csv_text(&body)), Err(Error::Schema { .. })));
    }

    #[test]
    fn wrong_header_rejected() {
        let err = parse("game,task\ng1,gauging\n").unwrap_err();
        assert!(matches!(err, Error::Schema { line: 1, .. }));
    }

    #[test]
    fn json_rows_load() {
        let text = r#"[{"schema_version":1,"session_id":"s","game_id":"g","task":"counting","truth":250,"participant_id":"a","round":1,"value":300}]"#;
        let d = read_dataset(text.as_bytes(), Format::Json, 6).unwrap();
        assert_eq!(d.task, Some(TaskKind::Counting));
        let bad = text.replace("\"round\":1", "\"round\":4");
        assert!(matches!(
            read_dataset(bad.as_bytes(), Format::Json, 6),
            Err(Error::Schema { line: 1, .. })
        ));
    }

    fn game(id: &str, truth: f64, members: &[(&str, [Option<f64>; 3])]) -> GameRecord {
        GameRecord {
            session_id: "s".into(),
            game_id: id.into(),
            task: TaskKind::Gauging,
            truth,
            participants: members.iter().map(|(p, _)| p.to_string()).collect(),
            judgments: members.iter().map(|(_, j)| *j).collect(),
        }
    }

    #[test]
    fn trustworthiness_examples() {
        let truths = [20.0, 35.0, 50.0, 80.0];
        let mk = |f: fn(f64) -> f64| Dataset {
            task: Some(TaskKind::Gauging),
            games: truths
                .iter()
                .enumerate()
                .map(|(i, &t)| game(&format!("g{i}"), t, &[("p", [Some(f(t)), None, None])]))
                .collect(),
        };
        assert!((trustworthiness("p", &mk(|t| t)).unwrap() - 1.0).abs() < 1e-12);
        assert!((trustworthiness("p", &mk(|t| 100.0 - t)).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            trustworthiness("p", &mk(|_| 42.0)),
            Err(Error::DegenerateCorrelation(_))
        ));
        let short = Dataset {
            task: Some(TaskKind::Gauging),
            games: vec![game("g", 10.0, &[("p", [Some(1.0), None, None])])],
        };
        assert!(matches!(trustworthiness("p", &short), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn mad_threshold_isolates_low_outlier() {
        let values = [0.84, 0.86, 0.85, 0.83, 0.87, 0.855, 0.845, 0.1];
        // median 0.8475, |dev| median 0.01 -> cut 0.8475 - 3.5 * 0.01 / 0.6745
        let cut = mad_outlier_threshold(&values).unwrap();
        let expected = 0.8475 - 3.5 * 0.01 / 0.6745;
        assert!((cut - expected).abs() < 1e-12);
        assert!(cut > 0.1 && cut < 0.83);
        let m = median(&values);
        assert!(modified_z_score(0.1, m, 0.01) < -3.5);
        assert!(modified_z_score(0.83, m, 0.0125) > -3.5);
    }

    #[test]
    fn mad_threshold_degenerate_and_quiet_cases() {
        assert!(matches!(mad_outlier_threshold(&[0.5; 6]), Err(Error::DegenerateMad)));
        assert!(matches!(mad_outlier_threshold(&[0.5; 4]), Err(Error::InsufficientData(_))));
        let sym = [0.6, 0.7, 0.8, 0.9, 1.0];
        let cut = mad_outlier_threshold(&sym).unwrap();
        assert!(cut < 0.6);
    }

    fn cohort(full_games: &[(&str, usize)]) -> Dataset {
        let max = full_games.iter().map(|(_, n)| *n).max().unwrap() + 2;
        let games = (0..max)
            .map(|g| {
                let truth = 10.0 + (g * 7 % 80) as f64;
                let members: Vec<(&str, [Option<f64>; 3])> = full_games
                    .iter()
                    .map(|(p, n)| {
                        let x = truth + if p.len() % 2 == 0 { 1.0 } else { -1.0 };
                        let third = if g < *n { Some(x) } else { None };
                        (*p, [Some(x), Some(x), third])
                    })
                    .collect();
                game(&format!("g{g}"), truth, &members)
            })
            .collect();
        Dataset {
            task: Some(TaskKind::Gauging),
            games,
        }
    }

    #[test]
    fn exactly_fifteen_full_games_is_removed() {
        let d = cohort(&[("a", 15), ("bb", 16)]);
        let (kept, report) = filter_participants(&d, 15, CorrThreshold::Fixed(0.0));
        assert_eq!(report.removed_full_games, vec!["a".to_string()]);
        assert_eq!(kept.participant_ids(), vec!["bb".to_string()]);
        assert_eq!(report.kept, 1);
    }

    #[test]
    fn filter_is_idempotent_for_fixed_threshold() {
        let d = cohort(&[("a", 15), ("bb", 16), ("c", 20)]);
        let (once, _) = filter_participants(&d, 15, CorrThreshold::Preset(TaskKind::Gauging));
        let (twice, report) = filter_participants(&once, 15, CorrThreshold::Preset(TaskKind::Gauging));
        assert_eq!(once, twice);
        assert_eq!(report.kept, report.initial);
    }

    #[test]
    fn round_trip_csv_and_json() {
        let d = cohort(&[("a", 3), ("bb", 4)]);
        for format in [Format::Csv, Format::Json] {
            let mut buf = Vec::new();
            write_dataset(&d, &mut buf, format).unwrap();
            let back = read_dataset(buf.as_slice(), format, 6).unwrap();
            assert_eq!(back, d);
            let mut again = Vec::new();
            write_dataset(&back, &mut again, format).unwrap();
            assert_eq!(buf, again);
        }
    }
}
