//! Influenceability estimation.
//!
//! Individual influenceabilities are through-origin least-squares slopes of
//! `y = x_i(r+1) - x_i(r)` on `d = mean(r) - x_i(r)`, fitted independently
//! per revision round and never clamped. Typical population couples come
//! from a Gaussian mixture fitted by EM over individual couples.
//!
//! The linearity check is a grid-search surrogate for a formal test of
//! `y = b0 + a1 * sign(d) |d|^gamma`: gamma is searched over
//! [0.25, 3] in steps of 0.05 with ordinary least squares for (b0, a1) at
//! each value, and the fit at `gamma = 1` is compared with the best fit by
//! an F-test with (1, n - 3) degrees of freedom.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::datastore::Dataset;
use crate::error::{Error, Result};
use crate::model::InfluenceabilityPair;
use crate::prediction::{predict_view, GameView, OthersMode};
use crate::seed;

/// Default degeneracy threshold on `sum(d^2)`, in squared opinion units.
pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const COVARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSample {
    /// `mean(r) - x_i(r)`
    pub d: f64,
    /// `x_i(r+1) - x_i(r)`
    pub y: f64,
    pub game_id: String,
    pub round: u8,
}

/// Samples of one participant for the transition `round -> round + 1`,
/// from games where both judgments exist and the mean at `round` is defined.
pub fn participant_samples(dataset: &Dataset, participant: &str, round: u8) -> Vec<RegressionSample> {
    dataset
        .seats_of(participant)
        .into_iter()
        .filter_map(|seat| {
            let game = &dataset.games[seat.game];
            sample_at(game, seat.slot, round)
        })
        .collect()
}

fn sample_at(game: &crate::datastore::GameRecord, slot: usize, round: u8) -> Option<RegressionSample> {
    let j = game.judgments[slot];
    let now = j[round as usize - 1]?;
    let next = j[round as usize]?;
    let mean = game.mean_at(round).ok()?;
    Some(RegressionSample {
        d: mean - now,
        y: next - now,
        game_id: game.game_id.clone(),
        round,
    })
}

/// Every participant's samples for one transition, pooled.
pub fn pooled_samples(dataset: &Dataset, round: u8) -> Vec<RegressionSample> {
    dataset
        .games
        .iter()
        .flat_map(|game| (0..game.participants.len()).filter_map(move |s| sample_at(game, s, round)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub alpha: f64,
    /// `sum(d^2)` was at or below the degeneracy threshold; `alpha` is 0.
    pub degenerate: bool,
    pub n: usize,
}

pub fn fit_alpha_round(samples: &[RegressionSample]) -> AlphaFit {
    fit_alpha_pairs(samples.iter().map(|s| (s.d, s.y)), DEFAULT_EPSILON)
}

/// Through-origin slope `sum(d*y) / sum(d^2)` over `(d, y)` pairs.
pub fn fit_alpha_pairs(pairs: impl IntoIterator<Item = (f64, f64)>, epsilon: f64) -> AlphaFit {
    let mut sdy = 0.0;
    let mut sdd = 0.0;
    let mut n = 0;
    for (d, y) in pairs {
        sdy += d * y;
        sdd += d * d;
        n += 1;
    }
    if sdd <= epsilon {
        AlphaFit {
            alpha: 0.0,
            degenerate: true,
            n,
        }
    } else {
        AlphaFit {
            alpha: sdy / sdd,
            degenerate: false,
            n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndividualFit {
    pub pair: InfluenceabilityPair,
    pub round1: AlphaFit,
    pub round2: AlphaFit,
}

impl IndividualFit {
    pub fn from_rounds(round1: AlphaFit, round2: AlphaFit) -> Self {
        Self {
            pair: InfluenceabilityPair::new(round1.alpha, round2.alpha),
            round1,
            round2,
        }
    }

    pub fn any_degenerate(&self) -> bool {
        self.round1.degenerate || self.round2.degenerate
    }
}

/// Both influenceabilities of one participant over all their games.
pub fn fit_individual(dataset: &Dataset, participant: &str) -> Result<IndividualFit> {
    let s1 = participant_samples(dataset, participant, 1);
    let s2 = participant_samples(dataset, participant, 2);
    if s1.is_empty() && s2.is_empty() && dataset.seats_of(participant).is_empty() {
        return Err(Error::UnknownParticipant(participant.to_string()));
    }
    Ok(IndividualFit::from_rounds(fit_alpha_round(&s1), fit_alpha_round(&s2)))
}

pub fn fit_all_individuals(dataset: &Dataset) -> BTreeMap<String, IndividualFit> {
    dataset
        .participant_ids()
        .into_par_iter()
        .filter_map(|p| fit_individual(dataset, &p).ok().map(|f| (p, f)))
        .collect()
}

/// Gaussian mixture over influenceability couples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub k: usize,
    pub weights: Vec<f64>,
    /// Component means ("typical influenceabilities"), sorted by alpha1.
    pub means: Vec<InfluenceabilityPair>,
    /// Row-major symmetric 2x2 covariances.
    pub covariances: Vec<[[f64; 2]; 2]>,
    /// Log-likelihood on the fitting data; `None` for hand-built models.
    pub loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl MixtureModel {
    /// Mixture with the given components; covariances are floored.
    pub fn new(weights: Vec<f64>, means: Vec<InfluenceabilityPair>, covariances: Vec<[[f64; 2]; 2]>) -> Self {
        let k = weights.len();
        assert!(k > 0 && means.len() == k && covariances.len() == k);
        let total: f64 = weights.iter().sum();
        Self {
            k,
            weights: weights.iter().map(|w| w / total).collect(),
            means,
            covariances: covariances.into_iter().map(|c| floor_covariance(c, COVARIANCE_FLOOR)).collect(),
            loglik: None,
            iterations: 0,
            converged: true,
        }
    }

    /// Isotropic components with standard deviation `spread`.
    pub fn isotropic(weights: Vec<f64>, means: Vec<InfluenceabilityPair>, spread: f64) -> Self {
        let v = spread * spread;
        let covs = vec![[[v, 0.0], [0.0, v]]; means.len()];
        Self::new(weights, means, covs)
    }

    pub fn single(mean: InfluenceabilityPair) -> Self {
        Self::isotropic(vec![1.0], vec![mean], 0.0)
    }

    /// Mean of the heaviest component (lowest index on ties).
    pub fn dominant(&self) -> InfluenceabilityPair {
        let mut best = 0;
        for i in 1..self.k {
            if self.weights[i] > self.weights[best] {
                best = i;
            }
        }
        self.means[best]
    }

    pub fn log_likelihood(&self, points: &[[f64; 2]]) -> f64 {
        let comps: Vec<Gauss2> = (0..self.k).map(|j| Gauss2::new(self.means[j], self.covariances[j])).collect();
        points
            .iter()
            .map(|p| {
                let terms: Vec<f64> = comps
                    .iter()
                    .zip(&self.weights)
                    .map(|(g, w)| w.ln() + g.log_pdf(p))
                    .collect();
                log_sum_exp(&terms)
            })
            .sum()
    }

    /// Draws one couple; a floored (zero-spread) component yields its mean
    /// up to the floor.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> InfluenceabilityPair {
        use rand_distr::{Distribution, StandardNormal};
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut j = self.k - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                j = i;
                break;
            }
        }
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let [[a, b], [_, c]] = self.covariances[j];
        // exact zero spread when the caller asked for it
        if a <= COVARIANCE_FLOOR && c <= COVARIANCE_FLOOR && b == 0.0 {
            return self.means[j];
        }
        let l11 = a.sqrt();
        let l21 = b / l11;
        let l22 = (c - l21 * l21).max(0.0).sqrt();
        InfluenceabilityPair::new(self.means[j].alpha1 + l11 * z0, self.means[j].alpha2 + l21 * z0 + l22 * z1)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct Gauss2 {
    mean: [f64; 2],
    inv: [[f64; 2]; 2],
    log_norm: f64,
}

impl Gauss2 {
    fn new(mean: InfluenceabilityPair, cov: [[f64; 2]; 2]) -> Self {
        let [[a, b], [_, c]] = cov;
        let det = a * c - b * b;
        Self {
            mean: [mean.alpha1, mean.alpha2],
            inv: [[c / det, -b / det], [-b / det, a / det]],
            log_norm: -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln(),
        }
    }

    fn log_pdf(&self, p: &[f64; 2]) -> f64 {
        let dx = p[0] - self.mean[0];
        let dy = p[1] - self.mean[1];
        let q = dx * (self.inv[0][0] * dx + self.inv[0][1] * dy) + dy * (self.inv[1][0] * dx + self.inv[1][1] * dy);
        self.log_norm - 0.5 * q
    }
}

/// Clamps the eigenvalues of a symmetric 2x2 matrix to at least `floor`.
pub fn floor_covariance(cov: [[f64; 2]; 2], floor: f64) -> [[f64; 2]; 2] {
    let a = cov[0][0];
    let c = cov[1][1];
    let b = 0.5 * (cov[0][1] + cov[1][0]);
    if b == 0.0 {
        return [[a.max(floor), 0.0], [0.0, c.max(floor)]];
    }
    let half_tr = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l1 = half_tr + disc;
    let l2 = half_tr - disc;
    if l2 >= floor {
        return [[a, b], [b, c]];
    }
    // eigenvector of l1
    let (vx, vy) = if (l1 - c).abs() > (l1 - a).abs() { (l1 - c, b) } else { (b, l1 - a) };
    let norm = (vx * vx + vy * vy).sqrt();
    let (ux, uy) = (vx / norm, vy / norm);
    let e1 = l1.max(floor);
    let e2 = l2.max(floor);
    // V diag(e1, e2) V^T with second eigenvector (-uy, ux)
    [
        [e1 * ux * ux + e2 * uy * uy, (e1 - e2) * ux * uy],
        [(e1 - e2) * ux * uy, e1 * uy * uy + e2 * ux * ux],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            restarts: 5,
        }
    }
}

/// Smallest couple count accepted for `k` components.
pub fn min_couples(k: usize) -> usize {
    2 * k
}

pub fn fit_mixture(couples: &[InfluenceabilityPair], k: usize, seed: u64, options: EmOptions) -> Result<MixtureModel> {
    fit_mixture_traced(couples, k, seed, options).map(|(m, _)| m)
}

/// Like [`fit_mixture`], also returning the log-likelihood after every EM
/// iteration of the winning restart.
pub fn fit_mixture_traced(
    couples: &[InfluenceabilityPair],
    k: usize,
    seed: u64,
    options: EmOptions,
) -> Result<(MixtureModel, Vec<f64>)> {
    if k == 0 {
        return Err(Error::InvalidSpec("mixture needs at least one component".into()));
    }
    let min = min_couples(k);
    if couples.len() < min {
        return Err(Error::TooFewCouples {
            n: couples.len(),
            k,
            min,
        });
    }
    if couples.iter().any(|c| !c.is_finite()) {
        return Err(Error::InsufficientData("non-finite influenceability couple".into()));
    }
    let points: Vec<[f64; 2]> = couples.iter().map(|c| [c.alpha1, c.alpha2]).collect();
    if k == 1 {
        let (mean, cov) = moments(&points, None);
        let mut m = MixtureModel::new(vec![1.0], vec![mean], vec![cov]);
        let ll = m.log_likelihood(&points);
        m.loglik = Some(ll);
        return Ok((m, vec![ll]));
    }
    let restarts = options.restarts.max(1);
    let runs: Vec<(MixtureModel, Vec<f64>)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(seed, &[seed::stream::EM_RESTART, k as u64, r as u64]);
            run_em(&points, k, &mut rng, options)
        })
        .collect();
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.0.loglik.unwrap_or(f64::NEG_INFINITY) > runs[best].0.loglik.unwrap_or(f64::NEG_INFINITY) {
            best = i;
        }
    }
    let (mut model, trace) = runs.into_iter().nth(best).expect("at least one restart");
    sort_components(&mut model);
    Ok((model, trace))
}

fn sort_components(m: &mut MixtureModel) {
    let mut order: Vec<usize> = (0..m.k).collect();
    order.sort_by(|&i, &j| {
        m.means[i]
            .alpha1
            .total_cmp(&m.means[j].alpha1)
            .then(m.means[i].alpha2.total_cmp(&m.means[j].alpha2))
    });
    m.weights = order.iter().map(|&i| m.weights[i]).collect();
    m.means = order.iter().map(|&i| m.means[i]).collect();
    m.covariances = order.iter().map(|&i| m.covariances[i]).collect();
}

/// Weighted mean and (maximum-likelihood) covariance, floored.
fn moments(points: &[[f64; 2]], weights: Option<&[f64]>) -> (InfluenceabilityPair, [[f64; 2]; 2]) {
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..points.len()).map(w).sum();
    let mut mx = 0.0;
    let mut my = 0.0;
    for (i, p) in points.iter().enumerate() {
        mx += w(i) * p[0];
        my += w(i) * p[1];
    }
    mx /= total;
    my /= total;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (i, p) in points.iter().enumerate() {
        let dx = p[0] - mx;
        let dy = p[1] - my;
        sxx += w(i) * dx * dx;
        sxy += w(i) * dx * dy;
        syy += w(i) * dy * dy;
    }
    let cov = floor_covariance([[sxx / total, sxy / total], [sxy / total, syy / total]], COVARIANCE_FLOOR);
    (InfluenceabilityPair::new(mx, my), cov)
}

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// k-means++ seeding of the means; every component starts from the
/// global covariance with equal weight.
fn seed_means<R: Rng + ?Sized>(points: &[[f64; 2]], k: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            idx
        };
        centers.push(points[next]);
    }
    centers
}

fn run_em<R: Rng + ?Sized>(points: &[[f64; 2]], k: usize, rng: &mut R, options: EmOptions) -> (MixtureModel, Vec<f64>) {
    let n = points.len();
    let (_, global_cov) = moments(points, None);
    let centers = seed_means(points, k, rng);
    let mut weights = vec![1.0 / k as f64; k];
    let mut means: Vec<InfluenceabilityPair> = centers.iter().map(|c| InfluenceabilityPair::new(c[0], c[1])).collect();
    let mut covs = vec![global_cov; k];
    let mut resp = vec![0.0; n * k];
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..options.max_iter {
        iterations += 1;
        // E-step
        let comps: Vec<Gauss2> = (0..k).map(|j| Gauss2::new(means[j], covs[j])).collect();
        let mut ll = 0.0;
        let mut terms = vec![0.0; k];
        for (i, p) in points.iter().enumerate() {
            for j in 0..k {
                terms[j] = weights[j].ln() + comps[j].log_pdf(p);
            }
            let lse = log_sum_exp(&terms);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (terms[j] - lse).exp();
            }
        }
        // the log-likelihood of the current parameters cannot drop below the previous one
        debug_assert!(
            ll >= prev - 1e-8 * (1.0 + prev.abs()),
            "EM log-likelihood decreased: {prev} -> {ll}"
        );
        trace.push(ll);
        if (ll - prev).abs() <= options.tol * (1.0 + ll.abs()) {
            converged = true;
            prev = ll;
            break;
        }
        prev = ll;
        // M-step
        for j in 0..k {
            let w: Vec<f64> = (0..n).map(|i| resp[i * k + j]).collect();
            let nk: f64 = w.iter().sum();
            weights[j] = nk / n as f64;
            if nk > 1e-10 {
                let (m, c) = moments(points, Some(&w));
                means[j] = m;
                covs[j] = c;
            }
        }
    }
    let mut model = MixtureModel {
        k,
        weights,
        means,
        covariances: covs,
        loglik: Some(prev),
        iterations,
        converged,
    };
    if !converged {
        let ll = model.log_likelihood(points);
        model.loglik = Some(ll);
        trace.push(ll);
    }
    (model, trace)
}

/// Index of the candidate couple whose model predictions best match the
/// participant's training games (mean squared error of the one-step
/// round-2 and two-step round-3 predictions). Ties go to the lowest index.
/// A single candidate needs no training data.
pub fn assign_typical(
    training: &[GameView],
    candidates: &[InfluenceabilityPair],
    others_mode: OthersMode,
    population: InfluenceabilityPair,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::MissingModel("no candidate couples".into()));
    }
    if candidates.len() == 1 {
        return Ok(0);
    }
    if training.is_empty() {
        return Err(Error::NoTrainingData { k: candidates.len() });
    }
    let mut best = 0;
    let mut best_err = f64::INFINITY;
    for (idx, c) in candidates.iter().enumerate() {
        let err = training_error(training, *c, others_mode, population);
        if err < best_err {
            best_err = err;
            best = idx;
        }
    }
    Ok(best)
}

/// Mean squared one-/two-step prediction error of `couple` on `training`.
pub fn training_error(
    training: &[GameView],
    couple: InfluenceabilityPair,
    others_mode: OthersMode,
    population: InfluenceabilityPair,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in training {
        let (Some(x2), Some(x3)) = (v.later[0], v.later[1]) else {
            continue;
        };
        let e2 = predict_view(v, 2, couple, others_mode, population) - x2;
        let e3 = predict_view(v, 3, couple, others_mode, population) - x3;
        sum += 0.5 * (e2 * e2 + e3 * e3);
        n += 1;
    }
    if n == 0 {
        return f64::INFINITY;
    }
    sum / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearityTest {
    pub gamma_hat: f64,
    pub f_statistic: f64,
    pub p_value: f64,
    pub rss_linear: f64,
    pub rss_best: f64,
    pub n: usize,
}

impl LinearityTest {
    /// Linearity is not rejected at the 5% level.
    pub fn linear_at_5pct(&self) -> bool {
        self.p_value > 0.05
    }
}

pub const LINEARITY_MIN_SAMPLES: usize = 30;

/// Grid values of the exponent: 0.25, 0.30, ..., 3.00.
pub fn gamma_grid() -> Vec<f64> {
    (5..=60).map(|i| i as f64 / 20.0).collect()
}

fn ols_rss(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        syy
    } else {
        (syy - sxy * sxy / sxx).max(0.0)
    }
}

pub fn linearity_test(samples: &[RegressionSample]) -> Result<LinearityTest> {
    let n = samples.len();
    if n < LINEARITY_MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "linearity test needs {LINEARITY_MIN_SAMPLES} samples, got {n}"
        )));
    }
    let ys: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let rss_at = |gamma: f64| {
        let zs: Vec<f64> = samples.iter().map(|s| s.d.signum() * s.d.abs().powf(gamma)).collect();
        ols_rss(&zs, &ys)
    };
    let mut gamma_hat = 1.0;
    let mut rss_best = f64::INFINITY;
    for g in gamma_grid() {
        let rss = rss_at(g);
        if rss < rss_best {
            rss_best = rss;
            gamma_hat = g;
        }
    }
    let rss_linear = rss_at(1.0);
    let dof = (n - 3) as f64;
    let (f_statistic, p_value) = if rss_linear <= rss_best {
        (0.0, 1.0)
    } else if rss_best <= 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (rss_linear - rss_best) / (rss_best / dof);
        let dist = FisherSnedecor::new(1.0, dof).expect("valid F dof");
        (f, dist.sf(f))
    };
    Ok(LinearityTest {
        gamma_hat,
        f_statistic,
        p_value,
        rss_linear,
        rss_best,
        n,
    })
}
