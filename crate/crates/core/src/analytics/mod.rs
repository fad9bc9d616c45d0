//! Descriptive results on judgment datasets: errors to truth, aggregate
//! (crowd) error, distance-to-mean contraction and the wisdom-of-crowd
//! decomposition.
//!
//! Errors are reported on the 0-100 scale (counting errors divided by 5).
//! Statistics depending on the group mean only use games where at least
//! `min_present` judgments exist at every round.

pub mod stats;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::datastore::{Dataset, GameRecord};
use crate::error::{Error, Result};
use stats::{median, quantile, Alternative};

/// Minimum present judgments for a game to enter mean-dependent statistics.
pub const DEFAULT_MIN_PRESENT: usize = 5;

pub fn error_to_truth(participant: &str, round: u8, dataset: &Dataset) -> Result<f64> {
    let mut sq = Vec::new();
    for seat in dataset.seats_of(participant) {
        let game = &dataset.games[seat.game];
        if let Some(x) = game.judgments[seat.slot][round as usize - 1] {
            sq.push((x - game.truth).powi(2));
        }
    }
    if sq.is_empty() {
        return Err(Error::NoData(format!(
            "participant {participant} has no round-{round} judgment"
        )));
    }
    Ok(stats::mean(&sq).sqrt() / dataset.task_or_default().report_scale())
}

fn comparable(game: &GameRecord, min_present: usize) -> bool {
    (1..=3).all(|r| game.present_at(r) >= min_present.max(2))
}

/// Root mean square distance between group mean and truth over games
/// with at least `min_present` judgments at every round.
pub fn aggregate_error(games: &[GameRecord], round: u8, min_present: usize) -> Result<f64> {
    let mut sq = Vec::new();
    let mut scale = 1.0;
    for game in games.iter().filter(|g| comparable(g, min_present)) {
        scale = game.task.report_scale();
        sq.push((game.mean_at(round)? - game.truth).powi(2));
    }
    if sq.is_empty() {
        return Err(Error::NoData(format!(
            "no game has {min_present} judgments at every round"
        )));
    }
    Ok(stats::mean(&sq).sqrt() / scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WisdomDecomposition {
    /// Summed distance of opinions above truth.
    pub d_plus: f64,
    /// Summed distance of opinions below truth.
    pub d_minus: f64,
    /// `(d_plus + d_minus) / n`
    pub mean_abs_error: f64,
    /// `|d_plus - d_minus| / n`, equal to `|mean - truth|`.
    pub mean_to_truth: f64,
}

pub fn wisdom_decomposition(opinions: &[f64], truth: f64) -> WisdomDecomposition {
    assert!(!opinions.is_empty(), "at least one opinion required");
    let mut d_plus = 0.0;
    let mut d_minus = 0.0;
    for &x in opinions {
        if x > truth {
            d_plus += x - truth;
        } else {
            d_minus += truth - x;
        }
    }
    let n = opinions.len() as f64;
    WisdomDecomposition {
        d_plus,
        d_minus,
        mean_abs_error: (d_plus + d_minus) / n,
        mean_to_truth: (d_plus - d_minus).abs() / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionSummary {
    pub round: u8,
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl DistributionSummary {
    fn of(round: u8, values: &[f64]) -> Self {
        Self {
            round,
            count: values.len(),
            mean: stats::mean(values),
            q1: quantile(values, 0.25),
            median: quantile(values, 0.5),
            q3: quantile(values, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceToMean {
    pub rounds: Vec<DistributionSummary>,
    /// `median(r+1) / median(r)` for r = 1, 2.
    pub median_contraction: [f64; 2],
    pub games_used: usize,
}

/// Pooled `|x_i(r) - mean(r)|` per round, normalized to the 0-100 scale.
pub fn distance_to_mean_stats(dataset: &Dataset, min_present: usize) -> Result<DistanceToMean> {
    let scale = dataset.task_or_default().report_scale();
    let mut pooled: [Vec<f64>; 3] = Default::default();
    let mut games_used = 0;
    for game in dataset.games.iter().filter(|g| comparable(g, min_present)) {
        games_used += 1;
        for r in 1..=3u8 {
            let mean = game.mean_at(r)?;
            for x in game.round(r).into_iter().flatten() {
                pooled[r as usize - 1].push((x - mean).abs() / scale);
            }
        }
    }
    if games_used == 0 {
        return Err(Error::NoData(format!(
            "no game has {min_present} judgments at every round"
        )));
    }
    let rounds: Vec<_> = (0..3).map(|r| DistributionSummary::of(r as u8 + 1, &pooled[r])).collect();
    let ratio = |a: f64, b: f64| if a > 0.0 { b / a } else { f64::NAN };
    Ok(DistanceToMean {
        median_contraction: [
            ratio(rounds[0].median, rounds[1].median),
            ratio(rounds[1].median, rounds[2].median),
        ],
        rounds,
        games_used,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessProfile {
    pub participant_id: String,
    /// Root mean square distance to truth per round.
    pub error: [f64; 3],
    /// `E(1) - E(2)` and `E(2) - E(3)`.
    pub success_variation: [f64; 2],
}

pub fn success_profiles(dataset: &Dataset) -> Vec<SuccessProfile> {
    dataset
        .participant_ids()
        .into_iter()
        .filter_map(|p| {
            let e = [
                error_to_truth(&p, 1, dataset).ok()?,
                error_to_truth(&p, 2, dataset).ok()?,
                error_to_truth(&p, 3, dataset).ok()?,
            ];
            Some(SuccessProfile {
                participant_id: p,
                error: e,
                success_variation: [e[0] - e[1], e[1] - e[2]],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrowdErrorSummary {
    pub round: u8,
    /// Median over participants of E_i(r).
    pub median_individual_error: f64,
    pub aggregate_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessSummary {
    pub per_round: Vec<CrowdErrorSummary>,
    /// Median over participants of the per-participant success variation.
    pub median_success_variation: [f64; 2],
    /// Sign-test p-values that the success variation is positive.
    pub sign_test_p: [Option<f64>; 2],
}

pub fn success_summary(dataset: &Dataset, min_present: usize) -> Result<SuccessSummary> {
    let profiles = success_profiles(dataset);
    if profiles.is_empty() {
        return Err(Error::NoData("no participant with judgments at all rounds".into()));
    }
    let per_round = (0..3)
        .map(|r| {
            let e: Vec<f64> = profiles.iter().map(|p| p.error[r]).collect();
            Ok(CrowdErrorSummary {
                round: r as u8 + 1,
                median_individual_error: median(&e),
                aggregate_error: aggregate_error(&dataset.games, r as u8 + 1, min_present)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let var = |k: usize| -> Vec<f64> { profiles.iter().map(|p| p.success_variation[k]).collect() };
    Ok(SuccessSummary {
        per_round,
        median_success_variation: [median(&var(0)), median(&var(1))],
        sign_test_p: [
            stats::sign_test(&var(0), Alternative::Greater).ok(),
            stats::sign_test(&var(1), Alternative::Greater).ok(),
        ],
    })
}

/// Per-game wisdom decomposition at one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameWisdom {
    pub game_id: String,
    pub round: u8,
    pub n: usize,
    #[serde(flatten)]
    pub decomposition: WisdomDecomposition,
}

pub fn wisdom_by_game(dataset: &Dataset, min_present: usize) -> Vec<GameWisdom> {
    let scale = dataset.task_or_default().report_scale();
    let mut out = Vec::new();
    for game in dataset.games.iter().filter(|g| comparable(g, min_present)) {
        for r in 1..=3u8 {
            let ops: Vec<f64> = game.round(r).into_iter().flatten().map(|x| x / scale).collect();
            out.push(GameWisdom {
                game_id: game.game_id.clone(),
                round: r,
                n: ops.len(),
                decomposition: wisdom_decomposition(&ops, game.truth / scale),
            });
        }
    }
    out
}

/// Bin of the pooled revision scatter: `y = x_i(r+1) - x_i(r)` against
/// `d = mean(r) - x_i(r)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionBin {
    pub round: u8,
    pub d_lo: f64,
    pub d_hi: f64,
    pub count: usize,
    pub mean_d: f64,
    pub mean_y: f64,
}

/// Equal-count bins of the pooled (d, y) scatter, per revision round.
pub fn pooled_regression_bins(dataset: &Dataset, bins: usize) -> Vec<RegressionBin> {
    let scale = dataset.task_or_default().report_scale();
    let mut out = Vec::new();
    for r in 1..=2u8 {
        let mut pts: Vec<(f64, f64)> = crate::estimation::pooled_samples(dataset, r)
            .into_iter()
            .map(|s| (s.d / scale, s.y / scale))
            .collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let nb = bins.clamp(1, pts.len());
        for b in 0..nb {
            let lo = b * pts.len() / nb;
            let hi = (b + 1) * pts.len() / nb;
            let chunk = &pts[lo..hi];
            if chunk.is_empty() {
                continue;
            }
            let n = chunk.len() as f64;
            out.push(RegressionBin {
                round: r,
                d_lo: chunk[0].0,
                d_hi: chunk[chunk.len() - 1].0,
                count: chunk.len(),
                mean_d: chunk.iter().map(|p| p.0).sum::<f64>() / n,
                mean_y: chunk.iter().map(|p| p.1).sum::<f64>() / n,
            });
        }
    }
    out
}

/// Empirical CDFs of fitted influenceabilities with the KS and paired
/// Wilcoxon comparisons between rounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceabilityComparison {
    pub n: usize,
    pub median_alpha1: f64,
    pub median_alpha2: f64,
    pub ks: stats::KsResult,
    /// One-sided: alpha1 > alpha2.
    pub wilcoxon_p: Option<f64>,
    pub negative_fraction: [f64; 2],
}

pub fn compare_influenceabilities(
    couples: &BTreeMap<String, crate::model::InfluenceabilityPair>,
) -> Result<InfluenceabilityComparison> {
    if couples.is_empty() {
        return Err(Error::NoData("no fitted couples".into()));
    }
    let a1: Vec<f64> = couples.values().map(|c| c.alpha1).collect();
    let a2: Vec<f64> = couples.values().map(|c| c.alpha2).collect();
    let diffs: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| x - y).collect();
    let n = a1.len() as f64;
    Ok(InfluenceabilityComparison {
        n: a1.len(),
        median_alpha1: median(&a1),
        median_alpha2: median(&a2),
        ks: stats::ks_two_sample(&a1, &a2),
        wilcoxon_p: stats::wilcoxon_signed_rank(&diffs, Alternative::Greater).ok().map(|w| w.p),
        negative_fraction: [
            a1.iter().filter(|a| **a < 0.0).count() as f64 / n,
            a2.iter().filter(|a| **a < 0.0).count() as f64 / n,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskKind;

    fn game(task: TaskKind, truth: f64, values: &[[f64; 3]]) -> GameRecord {
        GameRecord {
            session_id: "s".into(),
            game_id: "g".into(),
            task,
            truth,
            participants: (0..values.len()).map(|i| format!("p{i}")).collect(),
            judgments: values.iter().map(|v| v.map(Some)).collect(),
        }
    }

    #[test]
    fn error_to_truth_examples() {
        let d = Dataset {
            task: Some(TaskKind::Gauging),
            games: vec![game(TaskKind::Gauging, 50.0, &[[60.0, 50.0, 50.0], [50.0, 50.0, 50.0]])],
        };
        assert_eq!(error_to_truth("p0", 1, &d).unwrap(), 10.0);
        assert_eq!(error_to_truth("p1", 1, &d).unwrap(), 0.0);
        assert!(matches!(error_to_truth("zz", 1, &d), Err(Error::NoData(_))));
        let d = Dataset {
            task: Some(TaskKind::Counting),
            games: vec![game(TaskKind::Counting, 250.0, &[[300.0, 250.0, 250.0], [250.0; 3]])],
        };
        assert_eq!(error_to_truth("p0", 1, &d).unwrap(), 10.0);
    }

    #[test]
    fn aggregate_error_examples() {
        let g = game(TaskKind::Gauging, 50.0, &[[40.0; 3], [60.0; 3]]);
        assert_eq!(aggregate_error(&[g], 1, 2).unwrap(), 0.0);
        let g = game(TaskKind::Gauging, 50.0, &[[60.0; 3], [60.0; 3]]);
        assert_eq!(aggregate_error(std::slice::from_ref(&g), 1, 2).unwrap(), 10.0);
        assert!(matches!(aggregate_error(&[g], 1, 5), Err(Error::NoData(_))));
    }

    #[test]
    fn wisdom_examples() {
        let w = wisdom_decomposition(&[40.0, 60.0], 50.0);
        assert_eq!((w.d_plus, w.d_minus, w.mean_to_truth), (10.0, 10.0, 0.0));
        let w = wisdom_decomposition(&[30.0, 40.0], 50.0);
        assert_eq!((w.d_plus, w.d_minus), (0.0, 30.0));
        assert_eq!(w.mean_to_truth, 15.0);
        assert_eq!(w.mean_abs_error, 15.0);
    }

    #[test]
    fn shift_invariance_of_errors() {
        let vals = [[40.0, 45.0, 47.0], [70.0, 60.0, 58.0], [52.0, 52.0, 53.0]];
        let d = Dataset {
            task: Some(TaskKind::Gauging),
            games: vec![game(TaskKind::Gauging, 50.0, &vals)],
        };
        let shifted: Vec<[f64; 3]> = vals.iter().map(|v| v.map(|x| x + 7.0)).collect();
        let e = Dataset {
            task: Some(TaskKind::Gauging),
            games: vec![game(TaskKind::Gauging, 57.0, &shifted)],
        };
        for r in 1..=3 {
            let a = error_to_truth("p1", r, &d).unwrap();
            let b = error_to_truth("p1", r, &e).unwrap();
            assert!((a - b).abs() < 1e-12);
            let a = aggregate_error(&d.games, r, 3).unwrap();
            let b = aggregate_error(&e.games, r, 3).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
}
