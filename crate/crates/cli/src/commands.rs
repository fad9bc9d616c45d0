use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use influx::analytics::{
    compare_influenceabilities, distance_to_mean_stats, pooled_regression_bins, success_profiles, success_summary,
    wisdom_by_game, DEFAULT_MIN_PRESENT,
};
use influx::datastore::{
    filter_participants, fmt_f64, load_dataset_with, write_dataset, CorrThreshold, Dataset, Format,
    DEFAULT_GROUP_SIZE, DEFAULT_MIN_FULL_GAMES,
};
use influx::estimation::{
    assign_typical, fit_all_individuals, fit_mixture, linearity_test, pooled_samples, EmOptions, MixtureModel,
};
use influx::prediction::{
    crossvalidate, participant_views, predict, CrossvalOptions, Method, OthersMode, PredictionParams, PredictorSpec,
};
use influx::simulator::{generate_control_pairs, generate_population, ControlSpec, PopulationSpec};
use influx::unpredictability::{
    estimate_unpredictability, format_schedule, load_pairs, schedule_control_session, write_lambda_curve,
    write_pairs_csv,
};
use influx::{InfluenceabilityPair, TaskKind};

use crate::args::{Components, Couple, IntList, MethodList};
use crate::config::Resolver;
use crate::error::{CliError, Context};
use crate::run::{sha256_file, Manifest, OutTarget, Run};

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic population with known influenceabilities.
    Simulate(SimulateArgs),
    /// Validate a judgment file and rewrite it in canonical form.
    Ingest(IngestArgs),
    /// Drop participants with too few complete games or low trustworthiness.
    Filter(FilterArgs),
    /// Fit every participant's influenceabilities.
    Fit(InputArgs),
    /// Fit Gaussian mixtures to the individual influenceabilities.
    Cluster(ClusterArgs),
    /// Predict later-round judgments from round-1 judgments.
    Predict(PredictArgs),
    /// Crossvalidate prediction methods over training sizes.
    Crossval(CrossvalArgs),
    /// Generate a simulated control cohort of replicate pairs and the session schedule.
    Control(ControlArgs),
    /// Estimate lambda and the intrinsic unpredictability from replicate pairs.
    Unpredictability(UnpredictabilityArgs),
    /// Descriptive analytics: distance to mean, success, wisdom of crowds.
    Analyze(AnalyzeArgs),
    /// Rerun a command from its manifest and check the outputs are identical.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Judgment file (CSV or JSON).
    #[arg(long, env = "INFLUX_INPUT")]
    input: Option<String>,
    /// Input format; inferred from the extension when absent.
    #[arg(long, env = "INFLUX_FORMAT")]
    format: Option<Format>,
    /// Largest group size accepted when reading.
    #[arg(long, env = "INFLUX_MAX_GROUP_SIZE")]
    max_group_size: Option<usize>,
    /// Output directory, or primary output file.
    #[arg(long, env = "INFLUX_OUT")]
    out: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, env = "INFLUX_PARTICIPANTS")]
    participants: Option<usize>,
    #[arg(long, env = "INFLUX_GROUP_SIZE")]
    group_size: Option<usize>,
    /// Games per group.
    #[arg(long, env = "INFLUX_GAMES")]
    games: Option<usize>,
    #[arg(long, env = "INFLUX_TASK")]
    task: Option<TaskKind>,
    /// Standard deviation of the revision noise.
    #[arg(long, env = "INFLUX_NOISE")]
    noise: Option<f64>,
    /// Standard deviation of initial judgments around truth.
    #[arg(long, env = "INFLUX_SPREAD")]
    spread: Option<f64>,
    /// Mean offset of initial judgments from truth.
    #[arg(long, env = "INFLUX_BIAS", allow_negative_numbers = true)]
    bias: Option<f64>,
    #[arg(long, env = "INFLUX_MISSING_RATE")]
    missing_rate: Option<f64>,
    /// Mixture components `weight:alpha1:alpha2,...`.
    #[arg(long, env = "INFLUX_MIXTURE", allow_hyphen_values = true)]
    mixture: Option<Components>,
    /// Standard deviation of each component.
    #[arg(long, env = "INFLUX_MIXTURE_SPREAD")]
    mixture_spread: Option<f64>,
    #[arg(long, env = "INFLUX_SEED")]
    seed: Option<u64>,
    /// Output format of the dataset and ground truth.
    #[arg(long, env = "INFLUX_FORMAT")]
    format: Option<Format>,
    #[arg(long, env = "INFLUX_OUT")]
    out: Option<String>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    io: InputArgs,
    /// Format of the rewritten dataset.
    #[arg(long, env = "INFLUX_OUT_FORMAT")]
    out_format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    io: InputArgs,
    /// Participants need strictly more complete games than this.
    #[arg(long, env = "INFLUX_MIN_FULL_GAMES")]
    min_full_games: Option<usize>,
    /// `auto`, `preset-gauging`, `preset-counting` or a number.
    #[arg(long, env = "INFLUX_THRESHOLD")]
    threshold: Option<CorrThreshold>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    io: InputArgs,
    /// Component counts, e.g. `1-3`.
    #[arg(long, env = "INFLUX_K")]
    k: Option<IntList>,
    #[arg(long, env = "INFLUX_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "INFLUX_RESTARTS")]
    restarts: Option<usize>,
    #[arg(long, env = "INFLUX_TOL")]
    tol: Option<f64>,
    #[arg(long, env = "INFLUX_MAX_ITER")]
    max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    io: InputArgs,
    /// `null`, `individual_alpha` or `typical_k<K>`.
    #[arg(long, env = "INFLUX_METHOD")]
    method: Option<Method>,
    #[arg(long, env = "INFLUX_ROUND")]
    round: Option<u8>,
    /// `simulated_typical` or `observed`.
    #[arg(long, env = "INFLUX_OTHERS_MODE")]
    others_mode: Option<OthersMode>,
    /// Mixtures written by `cluster`; required for typical methods.
    #[arg(long, env = "INFLUX_MODEL")]
    model: Option<String>,
    /// Restrict to one participant.
    #[arg(long, env = "INFLUX_PARTICIPANT")]
    participant: Option<String>,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[command(flatten)]
    io: InputArgs,
    #[arg(long, env = "INFLUX_METHODS")]
    methods: Option<MethodList>,
    /// Training sizes, e.g. `1-15`.
    #[arg(long, env = "INFLUX_SIZES")]
    sizes: Option<IntList>,
    #[arg(long, env = "INFLUX_ITERATIONS")]
    iterations: Option<usize>,
    #[arg(long, env = "INFLUX_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "INFLUX_ROUND")]
    round: Option<u8>,
    #[arg(long, env = "INFLUX_OTHERS_MODE")]
    others_mode: Option<OthersMode>,
    #[arg(long, env = "INFLUX_CI_LEVEL")]
    ci_level: Option<f64>,
    #[arg(long, env = "INFLUX_RESAMPLES")]
    resamples: Option<usize>,
    #[arg(long, env = "INFLUX_RESTARTS")]
    restarts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    /// Number of replicate pairs.
    #[arg(long, env = "INFLUX_PAIRS")]
    pairs: Option<usize>,
    #[arg(long, env = "INFLUX_TASK")]
    task: Option<TaskKind>,
    /// Weight of the consensus term at round 2.
    #[arg(long, env = "INFLUX_LAMBDA")]
    lambda: Option<f64>,
    /// Weight of the consensus term at round 3.
    #[arg(long, env = "INFLUX_LAMBDA3")]
    lambda3: Option<f64>,
    #[arg(long, env = "INFLUX_NOISE")]
    noise: Option<f64>,
    #[arg(long, env = "INFLUX_SHIFT_STD")]
    shift_std: Option<f64>,
    #[arg(long, env = "INFLUX_SPREAD")]
    spread: Option<f64>,
    #[arg(long, env = "INFLUX_PICTURE_BIAS", allow_negative_numbers = true)]
    picture_bias: Option<f64>,
    /// Couple of the focal participant, `alpha1:alpha2`.
    #[arg(long, env = "INFLUX_FOCAL", allow_hyphen_values = true)]
    focal: Option<Couple>,
    /// Couple of the scripted members, `alpha1:alpha2`.
    #[arg(long, env = "INFLUX_OTHERS", allow_hyphen_values = true)]
    others: Option<Couple>,
    #[arg(long, env = "INFLUX_OTHERS_NOISE")]
    others_noise: Option<f64>,
    #[arg(long, env = "INFLUX_GROUP_SIZE")]
    group_size: Option<usize>,
    /// Replicated games in the session schedule.
    #[arg(long, env = "INFLUX_REPLICATED")]
    replicated: Option<usize>,
    /// Filler games in the session schedule.
    #[arg(long, env = "INFLUX_FILLERS")]
    fillers: Option<usize>,
    #[arg(long, env = "INFLUX_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "INFLUX_OUT")]
    out: Option<String>,
}

#[derive(Debug, Args)]
pub struct UnpredictabilityArgs {
    /// Replicate pairs CSV (with a `replicate_of` column).
    #[arg(long, env = "INFLUX_PAIRS_FILE")]
    pairs: Option<String>,
    #[arg(long, env = "INFLUX_OUT")]
    out: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    io: InputArgs,
    /// Games need this many members present at every round for mean-based statistics.
    #[arg(long, env = "INFLUX_MIN_PRESENT")]
    min_present: Option<usize>,
    #[arg(long, env = "INFLUX_BINS")]
    bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    manifest: PathBuf,
}

pub fn dispatch(command: Command, res: Resolver) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => simulate(a, res),
        Command::Ingest(a) => ingest(a, res),
        Command::Filter(a) => filter(a, res),
        Command::Fit(a) => fit(a, res),
        Command::Cluster(a) => cluster(a, res),
        Command::Predict(a) => predict_cmd(a, res),
        Command::Crossval(a) => crossval(a, res),
        Command::Control(a) => control(a, res),
        Command::Unpredictability(a) => unpredictability(a, res),
        Command::Analyze(a) => analyze(a, res),
        Command::Replay(a) => replay(a),
    }
}

fn out_target(run: &mut Run, flag: Option<String>, default: &str) -> Result<OutTarget, CliError> {
    let out = run.res.value("out", flag, default.to_string())?;
    Ok(OutTarget::new(&out))
}

fn load_input(run: &mut Run, io: &InputArgs) -> Result<Dataset, CliError> {
    let input: String = run.res.required("input", io.input.clone())?;
    let path = Path::new(&input);
    let format = match run.res.optional("format", io.format)? {
        Some(f) => f,
        None => Format::from_path(path).ok_or_else(|| {
            CliError::Config(format!("cannot infer the format of {input}; pass --format csv|json"))
        })?,
    };
    let max_group = run.res.value("max_group_size", io.max_group_size, DEFAULT_GROUP_SIZE)?;
    run.input(path)?;
    load_dataset_with(path, format, max_group).context(format!("reading {input}"))
}

fn dataset_bytes(dataset: &Dataset, format: Format) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf, format).context("serializing dataset")?;
    Ok(buf)
}

#[derive(Serialize)]
struct DatasetSummary {
    task: Option<TaskKind>,
    games: usize,
    participants: usize,
    rows: usize,
    complete_games_per_participant: BTreeMap<String, usize>,
}

fn summarize(dataset: &Dataset) -> DatasetSummary {
    let ids = dataset.participant_ids();
    DatasetSummary {
        task: dataset.task,
        games: dataset.games.len(),
        participants: ids.len(),
        rows: dataset.n_rows(),
        complete_games_per_participant: ids.iter().map(|p| (p.clone(), dataset.full_games(p))).collect(),
    }
}

fn simulate(a: SimulateArgs, res: Resolver) -> Result<(), CliError> {
    let mut run = Run::new("simulate", res);
    let d = PopulationSpec::default();
    let r = &mut run.res;
    let default_mixture = Components(
        d.mixture
            .weights
            .iter()
            .zip(&d.mixture.means)
            .map(|(w, m)| (*w, *m))
            .collect(),
    );
    let mixture = r.value("mixture", a.mixture, default_mixture)?;
    let mixture_spread = r.value("mixture_spread", a.mixture_spread, 0.03)?;
    let mut spec = PopulationSpec {
        n_participants: r.value("participants", a.participants, d.n_participants)?,
        group_size: r.value("group_size", a.group_size, d.group_size)?,
        n_games: r.value("games", a.games, d.n_games)?,
        task: r.value("task", a.task, d.task)?,
        mixture: mixture.model(mixture_spread),
        initial_bias: r.value("bias", a.bias, d.initial_bias)?,
        initial_spread: r.value("spread", a.spread, d.initial_spread)?,
        noise_std: r.value("noise", a.noise, d.noise_std)?,
        missing_rate: r.value("missing_rate", a.missing_rate, d.missing_rate)?,
        seed: 0,
    };
    let format = r.value("format", a.format, Format::Csv)?;
    spec.seed = run.seed(a.seed)?;
    let out = out_target(&mut run, a.out, "simulated")?;
    let (dataset, truth) = generate_population(&spec).context("simulate")?;
    let ext = format.extension();
    run.write(&out.primary(&format!("dataset.{ext}")), &dataset_bytes(&dataset, format)?)?;
    let truth_path = out.side(&format!("ground_truth.{ext}"));
    match format {
        Format::Csv => {
            let mut buf = Vec::new();
            truth.write_csv(&mut buf).context("serializing ground truth")?;
            run.write(&truth_path, &buf)?;
        }
        Format::Json => run.write_json(&truth_path, &truth)?,
    }
    run.finish(&out)?;
    Ok(())
}

fn ingest(a: IngestArgs, res: Resolver) -> Result<(), CliError> {
    let mut run = Run::new("ingest", res);
    let dataset = load_input(&mut run, &a.io)?;
    let format = run.res.value("out_format", a.out_format, Format::Csv)?;
    let out = out_target(&mut run, a.io.out, "ingested")?;
    run.write(
        &out.primary(&format!("dataset.{}", format.extension())),
        &dataset_bytes(&dataset, format)?,
    )?;
    let summary = summarize(&dataset);
    println!(
        "{} games, {} participants, {} judgments",
        summary.games, summary.participants, summary.rows
    );
    run.write_json(&out.side("summary.json"), &summary)?;
    run.finish(&out)?;
    Ok(())
}

fn filter(a: FilterArgs, res: Resolver) -> Result<(), CliError> {
    let mut run = Run::new("filter", res);
    let dataset = load_input(&mut run, &a.io)?;
    let min_full = run.res.value("min_full_games", a.min_full_games, DEFAULT_MIN_FULL_GAMES)?;
    let threshold = run.res.value("threshold", a.threshold, CorrThreshold::Auto)?;
    let out = out_target(&mut run, a.io.out, "filtered")?;
    let (kept, report) = filter_participants(&dataset, min_full, threshold);
    println!("kept {} of {} participants", report.kept, report.initial);
    run.write(&out.primary("dataset.csv"), &dataset_bytes(&kept, Format::Csv)?)?;
    run.write_json(&out.side("filter_report.json"), &report)?;
    run.finish(&out)?;
    Ok(())
}

fn error_json(e: &influx::Error) -> serde_json::Value {
    json!({ "error": e.kind(), "message": e.to_string() })
}

fn result_json<T: Serialize>(r: influx::Result<T>) -> serde_json::Value {
    match r {
        Ok(v) => serde_json::to_value(v).expect("serializable"),
        Err(e) => error_json(&e),
    }
}

fn fit(a: InputArgs, res: Resolver) -> Result<(), CliError> {
    let mut run = Run::new("fit", res);
    let dataset = load_input(&mut run, &a)?;
    let out = out_target(&mut run, a.out, "fit")?;
    let fits = fit_all_individuals(&dataset);
    let mut csv = String::from("participant_id,alpha1,alpha2,n_round1,n_round2,degenerate_round1,degenerate_round2\n");
    for (p, f) in &fits {
        writeln!(
            csv,
            "{p},{},{},{},{},{},{}",
            fmt_f64(f.pair.alpha1),
            fmt_f64(f.pair.alpha2),
            f.round1.n,
            f.round2.n,
            f.round1.degenerate,
            f.round2.degenerate
        )
        .expect("string write");
    }
    run.write(&out.primary("alphas.csv"), csv.as_bytes())?;
    let couples: BTreeMap<String, InfluenceabilityPair> = fits
        .iter()
        .filter(|(_, f)| !f.any_degenerate())
        .map(|(p, f)| (p.clone(), f.pair))
        .collect();
    let summary = json!({
        "participants": fits.len(),
        "degenerate": fits.len() - couples.len(),
        "comparison": result_json(compare_influenceabilities(&couples)),
        "linearity": {
            "round1": result_json(linearity_test(&pooled_samples(&dataset, 1))),
            "round2": result_json(linearity_test(&pooled_samples(&dataset, 2))),
        },
    });
    println!("fitted {} participants ({} degenerate)", fits.len(), fits.len() - couples.len());
    run.write_json(&out.side("fit_summary.json"), &summary)?;
    run.finish(&out)?;
    Ok(())
}

fn usable_couples(dataset: &Dataset) -> (Vec<InfluenceabilityPair>, usize) {
    let fits = fit_all_individuals(dataset);
    let couples: Vec<InfluenceabilityPair> = fits.values().filter(|f| !f.any_degenerate()).map(|f| f.pair).collect();
    let excluded = fits.len() - couples.len();
    (couples, excluded)
}

#[derive(Serialize, serde::Deserialize)]
struct MixturesFile {
    seed: u64,
    couples: usize,
    excluded_degenerate: usize,
    em: EmOptions,
    models: Vec<MixtureModel>,
}

fn em_options(run: &mut Run, restarts: Option<usize>, tol: Option<f64>, max_iter: Option<usize>) -> Result<EmOptions, CliError> {
    let d = EmOptions::default();
    Ok(EmOptions {
        restarts: run.res.value("restarts", restarts, d.restarts)?,
        tol: run.res.value("tol", tol, d.tol)?,
        max_iter: run.res.value("max_iter", max_iter, d.max_iter)?,
    })
}

fn cluster(a: ClusterArgs, res: Resolver) -> Result<(), CliError> {
    let mut run = Run::new("cluster", res);
    let dataset = load_input(&mut run, &a.io)?;
    let ks = run.res.value("k", a.k, IntList(vec![1, 2]))?;
    let em = em_options(&mut run, a.restarts, a.tol, a.max_iter)?;
    let seed = run.seed(a.seed)?;
    let out = out_target(&mut run, a.io.out, "cluster")?;
    let (couples, excluded) = usable_couples(&dataset);
    let mut models = Vec::new();
    for &k in &ks.0 {
        let m = fit_mixture(&couples, k, seed, em).context(format!("fitting K={k}"))?;
        let means: Vec<String> = m.means.iter().map(|c| format!("({:.4}, {:.4})", c.alpha1, c.alpha2)).collect();
        println!("K={k}: means {}", means.join(" "));
        models.push(m);
    }
    let file = MixturesFile {
        seed,
        couples: couples.len(),
        excluded_degenerate: excluded,
        em,
        models,
    };
    run.write_json(&out.primary("mixtures.json"), &file)?;
    run.finish(&out)?;
    Ok(())
}

fn predict_cmd(a: PredictArgs, res: Resolver) -> Result<(), CliError> {
    let mut run = Run::new("predict", res);
    let dataset = load_input(&mut run, &a.io)?;
    let method = run.res.value("method", a.method, Method::IndividualAlpha)?;
    let round = run.res.value("round", a.round, 3u8)?;
    let others_mode = run.res.value("others_mode", a.others_mode, OthersMode::SimulatedTypical)?;
    let model: Option<String> = run.res.optional("model", a.model)?;
    let only: Option<String> = run.res.optional("participant", a.participant)?;
    let out = out_target(&mut run, a.io.out, "predict")?;
    if !(2..=3).contains(&round) {
        return Err(CliError::Config(format!("--round must be 2 or 3, got {round}")));
    }

    let mixtures = match &model {
        Some(path) => {
            let p = Path::new(path);
            run.input(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let file: MixturesFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{path}: not a mixtures file: {e}")))?;
            Some(file.models)
        }
        None => None,
    };
    let (couples, _) = usable_couples(&dataset);
    let population = match mixtures.as_ref().and_then(|ms| ms.iter().find(|m| m.k == 1)) {
        Some(m) => m.means[0],
        None => fit_mixture(&couples, 1, 0, EmOptions::default()).context("population couple")?.means[0],
    };
    let fits = fit_all_individuals(&dataset);
    let views = participant_views(&dataset);
    let spec = PredictorSpec {
        method,
        others_mode,
        target_round: round,
    };
    let candidates = match method {
        Method::Typical(k) => {
            let ms = mixtures
                .as_ref()
                .ok_or_else(|| CliError::Config(format!("{method} needs --model (mixtures from `cluster`)")))?;
            let m = ms
                .iter()
                .find(|m| m.k == k)
                .ok_or_else(|| CliError::Config(format!("model file has no K={k} mixture")))?;
            m.means.clone()
        }
        _ => Vec::new(),
    };

    let mut couple_of: BTreeMap<String, Option<InfluenceabilityPair>> = BTreeMap::new();
    for p in dataset.participant_ids() {
        if only.as_ref().is_some_and(|o| *o != p) {
            continue;
        }
        let c = match method {
            Method::Null => None,
            Method::IndividualAlpha => Some(fits[&p].pair),
            Method::Typical(_) => {
                let training = views.get(&p).map(Vec::as_slice).unwrap_or(&[]);
                let idx = assign_typical(training, &candidates, others_mode, population)
                    .context(format!("assigning {p}"))?;
                Some(candidates[idx])
            }
        };
        couple_of.insert(p, c);
    }
    if let Some(o) = &only {
        if couple_of.is_empty() {
            return Err(CliError::Core {
                context: "predict".into(),
                source: influx::Error::UnknownParticipant(o.clone()),
            });
        }
    }

    let mut csv = String::from("game_id,participant_id,round,predicted,actual\n");
    let mut skipped = 0usize;
    let mut written = 0usize;
    for game in &dataset.games {
        for (slot, p) in game.participants.iter().enumerate() {
            let Some(couple) = couple_of.get(p) else {
                continue;
            };
            let params = PredictionParams {
                couple: *couple,
                population: Some(population),
            };
            match predict(game, p, &spec, &params) {
                Ok(x) => {
                    let actual = game.judgments[slot][round as usize - 1].map(fmt_f64).unwrap_or_default();
                    writeln!(csv, "{},{p},{round},{},{actual}", game.game_id, fmt_f64(x)).expect("string write");
                    written += 1;
                }
                Err(_) => skipped += 1,
            }
        }
    }
    println!("{written} predictions, {skipped} skipped");
    run.write(&out.primary("predictions.csv"), csv.as_bytes())?;
    run.finish(&out)?;
    Ok(())
}

fn crossval(a: CrossvalArgs, res: Resolver) -> Result<(), CliError> {
    let mut run = Run::new("crossval", res);
    let dataset = load_input(&mut run, &a.io)?;
    let d = CrossvalOptions::default();
    let r = &mut run.res;
    let methods = r.value("methods", a.methods, MethodList(d.methods.clone()))?;
    let sizes = r.value("sizes", a.sizes, IntList(d.training_sizes.clone()))?;
    let iterations = r.value("iterations", a.iterations, d.iterations)?;
    let target_round = r.value("round", a.round, d.target_round)?;
    let others_mode = r.value("others_mode", a.others_mode, d.others_mode)?;
    let ci_level = r.value("ci_level", a.ci_level, d.ci_level)?;
    let resamples = r.value("resamples", a.resamples, d.bootstrap_resamples)?;
    let restarts = r.value("restarts", a.restarts, d.em.restarts)?;
    let seed = run.seed(a.seed)?;
    let out = out_target(&mut run, a.io.out, "crossval")?;
    let options = CrossvalOptions {
        methods: methods.0,
        training_sizes: sizes.0,
        iterations,
        seed,
        target_round,
        others_mode,
        em: EmOptions { restarts, ..d.em },
        ci_level,
        bootstrap_resamples: resamples,
    };
    let report = crossvalidate(&dataset, &options).context("crossval")?;
    run.write(&out.primary("report.csv"), report.to_csv().as_bytes())?;
    let mut pp = String::from("method,training_size,participant_id,rmse,mae,predictions\n");
    for e in &report.per_participant {
        writeln!(
            pp,
            "{},{},{},{},{},{}",
            e.method,
            e.training_size,
            e.participant_id,
            fmt_f64(e.rmse),
            fmt_f64(e.mae),
            e.predictions
        )
        .expect("string write");
    }
    run.write(&out.side("per_participant.csv"), pp.as_bytes())?;
    run.write_json(&out.side("report.json"), &report)?;
    run.finish(&out)?;
    Ok(())
}

fn control(a: ControlArgs, res: Resolver) -> Result<(), CliError> {
    let mut run = Run::new("control", res);
    let d = ControlSpec::default();
    let r = &mut run.res;
    let mut spec = ControlSpec {
        n_pairs: r.value("pairs", a.pairs, d.n_pairs)?,
        task: r.value("task", a.task, d.task)?,
        lambda_round2: r.value("lambda", a.lambda, d.lambda_round2)?,
        lambda_round3: r.value("lambda3", a.lambda3, d.lambda_round3)?,
        noise_std: r.value("noise", a.noise, d.noise_std)?,
        shift_std: r.value("shift_std", a.shift_std, d.shift_std)?,
        initial_spread: r.value("spread", a.spread, d.initial_spread)?,
        picture_bias: r.value("picture_bias", a.picture_bias, d.picture_bias)?,
        focal: r.value("focal", a.focal, Couple(d.focal))?.0,
        others: r.value("others", a.others, Couple(d.others))?.0,
        others_noise_std: r.value("others_noise", a.others_noise, d.others_noise_std)?,
        group_size: r.value("group_size", a.group_size, d.group_size)?,
        max_attempts: d.max_attempts,
        seed: 0,
    };
    let replicated = r.value("replicated", a.replicated, 10usize)?;
    let fillers = r.value("fillers", a.fillers, 10usize)?;
    spec.seed = run.seed(a.seed)?;
    let out = out_target(&mut run, a.out, "control")?;
    let schedule = schedule_control_session(replicated, fillers).context("control schedule")?;
    let pairs = generate_control_pairs(&spec).context("control cohort")?;
    let clamped = pairs.iter().filter(|p| p.clamped).count();
    println!("{} pairs, {clamped} clamped", pairs.len());
    let mut buf = Vec::new();
    write_pairs_csv(&pairs, &mut buf).context("serializing pairs")?;
    run.write(&out.primary("pairs.csv"), &buf)?;
    run.write(&out.side("schedule.txt"), format!("{}\n", format_schedule(&schedule)).as_bytes())?;
    run.finish(&out)?;
    Ok(())
}

fn unpredictability(a: UnpredictabilityArgs, res: Resolver) -> Result<(), CliError> {
    let mut run = Run::new("unpredictability", res);
    let pairs_path: String = run.res.required("pairs", a.pairs)?;
    let out = out_target(&mut run, a.out, "unpredictability")?;
    let p = Path::new(&pairs_path);
    run.input(p)?;
    let pairs = load_pairs(p).context(format!("reading {pairs_path}"))?;
    let est = estimate_unpredictability(&pairs).context("unpredictability")?;
    println!(
        "lambda*: {:.4} (round 3: {:.4}); std(eta) round 2: {:.4}, round 3: {:.4}; {} pairs, {} excluded",
        est.lambda_star, est.round3.lambda.lambda, est.std_eta_round2, est.std_eta_round3, est.n_pairs, est.n_excluded
    );
    run.write_json(&out.primary("estimate.json"), &est)?;
    for (name, curve) in [
        ("lambda_curve.csv", &est.round2.lambda_curve),
        ("lambda_curve_round3.csv", &est.round3.lambda_curve),
    ] {
        let mut buf = Vec::new();
        write_lambda_curve(curve, &mut buf).context("serializing lambda curve")?;
        run.write(&out.side(name), &buf)?;
    }
    run.finish(&out)?;
    Ok(())
}

fn analyze(a: AnalyzeArgs, res: Resolver) -> Result<(), CliError> {
    let mut run = Run::new("analyze", res);
    let dataset = load_input(&mut run, &a.io)?;
    let min_present = run.res.value("min_present", a.min_present, DEFAULT_MIN_PRESENT)?;
    let bins = run.res.value("bins", a.bins, 20usize)?;
    let out = out_target(&mut run, a.io.out, "analysis")?;
    let fits: BTreeMap<String, InfluenceabilityPair> = fit_all_individuals(&dataset)
        .into_iter()
        .filter(|(_, f)| !f.any_degenerate())
        .map(|(p, f)| (p, f.pair))
        .collect();
    let analysis = json!({
        "dataset": summarize(&dataset),
        "distance_to_mean": result_json(distance_to_mean_stats(&dataset, min_present)),
        "success": result_json(success_summary(&dataset, min_present)),
        "influenceability": result_json(compare_influenceabilities(&fits)),
    });
    run.write_json(&out.primary("analysis.json"), &analysis)?;

    let mut sp = String::from("participant_id,error_round1,error_round2,error_round3,success_1_2,success_2_3\n");
    for s in success_profiles(&dataset) {
        let v: Vec<String> = s.error.iter().chain(&s.success_variation).map(|x| fmt_f64(*x)).collect();
        writeln!(sp, "{},{}", s.participant_id, v.join(",")).expect("string write");
    }
    run.write(&out.side("success_profiles.csv"), sp.as_bytes())?;

    let mut wg = String::from("game_id,round,n,d_plus,d_minus,mean_abs_error,mean_to_truth\n");
    for w in wisdom_by_game(&dataset, min_present) {
        let d = w.decomposition;
        writeln!(
            wg,
            "{},{},{},{},{},{},{}",
            w.game_id,
            w.round,
            w.n,
            fmt_f64(d.d_plus),
            fmt_f64(d.d_minus),
            fmt_f64(d.mean_abs_error),
            fmt_f64(d.mean_to_truth)
        )
        .expect("string write");
    }
    run.write(&out.side("wisdom_by_game.csv"), wg.as_bytes())?;

    let mut rb = String::from("round,d_lo,d_hi,count,mean_d,mean_y\n");
    for b in pooled_regression_bins(&dataset, bins) {
        writeln!(
            rb,
            "{},{},{},{},{},{}",
            b.round,
            fmt_f64(b.d_lo),
            fmt_f64(b.d_hi),
            b.count,
            fmt_f64(b.mean_d),
            fmt_f64(b.mean_y)
        )
        .expect("string write");
    }
    run.write(&out.side("regression_bins.csv"), rb.as_bytes())?;
    run.finish(&out)?;
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "influx")]
struct ReplayCli {
    #[command(subcommand)]
    command: Command,
}

fn replay(a: ReplayArgs) -> Result<(), CliError> {
    let manifest = Manifest::load(&a.manifest)?;
    for input in &manifest.inputs {
        let now = sha256_file(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(CliError::Replay(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let argv = manifest.argv();
    let parsed = ReplayCli::try_parse_from(&argv)
        .map_err(|e| CliError::Config(format!("manifest command does not parse: {e}")))?;
    if matches!(parsed.command, Command::Replay(_)) {
        return Err(CliError::Config("a manifest cannot replay a replay".into()));
    }
    dispatch(parsed.command, Resolver::default())?;
    let mut differing = Vec::new();
    for o in &manifest.outputs {
        if sha256_file(Path::new(&o.path))? != o.sha256 {
            differing.push(o.path.clone());
        }
    }
    if !differing.is_empty() {
        return Err(CliError::Replay(format!("outputs differ from the manifest: {}", differing.join(", "))));
    }
    println!("replay: {} outputs identical", manifest.outputs.len());
    Ok(())
}
