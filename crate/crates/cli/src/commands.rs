use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use satblend::geo::PredictorSetId;
use satblend::io::{self, ReportFormat, TablePaths, Tables};
use satblend::pipeline::{self, ExperimentConfig, SyntheticSpec};

use crate::manifest::Manifest;
use crate::{Cli, Command, ExperimentArgs, FeaturesArgs, Failure, ImportanceArgs, InputArgs, ReportArgs, RunArgs, SynthArgs};

pub fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Features(a) => features(a),
        Command::Experiment(a) => experiment(a),
        Command::Importance(a) => importance(a),
        Command::Report(a) => report(a),
    }
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("invalid config {}: {e}", path.display())))
}

fn sets_from(numbers: &[u8]) -> Result<Vec<PredictorSetId>, Failure> {
    let mut sets = Vec::new();
    for &n in numbers {
        let s = PredictorSetId::from_number(n).map_err(|e| Failure::Usage(e.to_string()))?;
        if !sets.contains(&s) {
            sets.push(s);
        }
    }
    Ok(sets)
}

fn resolve_inputs(input: &InputArgs) -> Result<TablePaths, Failure> {
    if let Some(dir) = &input.data {
        return Ok(TablePaths::in_dir(dir));
    }
    match (&input.stations, &input.observations) {
        (Some(s), Some(o)) if !input.products.is_empty() => {
            if input.products.len() > 2 {
                return Err(Failure::Usage("at most two --product files".into()));
            }
            Ok(TablePaths {
                stations: s.clone(),
                observations: o.clone(),
                products: input.products.clone(),
            })
        }
        _ => Err(Failure::Usage(
            "give --data DIR, or --stations, --observations and at least one --product".into(),
        )),
    }
}

fn load(input: &InputArgs, manifest: &mut Manifest) -> Result<Tables, Failure> {
    let paths = resolve_inputs(input)?;
    let tables = io::load_tables(&paths)?;
    for p in paths.all() {
        manifest.input(p)?;
    }
    info!(
        "loaded {} stations, {} observations ({} missing), {} product(s)",
        tables.stations.len(),
        tables.observations.len(),
        tables.n_missing_observations(),
        tables.products.len()
    );
    Ok(tables)
}

/// Sets requested on the command line, else all that the products allow.
fn default_sets(requested: &[u8], n_products: usize) -> Result<Vec<PredictorSetId>, Failure> {
    if !requested.is_empty() {
        return sets_from(requested);
    }
    if n_products < 2 {
        warn!("only one product supplied; running predictor set 1 only");
        return Ok(vec![PredictorSetId::Set1]);
    }
    Ok(PredictorSetId::ALL.to_vec())
}

fn run_config(run: &RunArgs, n_products: usize) -> Result<ExperimentConfig, Failure> {
    let mut config = match &run.config {
        Some(p) => read_config::<ExperimentConfig>(p)?,
        None => ExperimentConfig {
            predictor_sets: default_sets(&run.predictor_sets, n_products)?,
            ..ExperimentConfig::default()
        },
    };
    if run.config.is_some() && !run.predictor_sets.is_empty() {
        config.predictor_sets = sets_from(&run.predictor_sets)?;
    }
    if let Some(seed) = run.seed {
        config.seed = seed;
    }
    config.clip_at_zero |= run.clip_zero;
    config.validate()?;
    Ok(config)
}

fn finish(out: &Path, written: &[PathBuf], mut manifest: Manifest) -> Result<(), Failure> {
    for p in written {
        manifest.output(out, p)?;
    }
    manifest.write(out)?;
    println!("wrote {} file(s) and manifest.json to {}", written.len(), out.display());
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let mut spec: SyntheticSpec = match &a.config {
        Some(p) => read_config(p)?,
        None => SyntheticSpec::default(),
    };
    spec.seed = a.seed;
    if let Some(n) = a.stations {
        spec.n_stations = n;
    }
    if let Some(n) = a.months {
        spec.n_months = n;
    }
    let data = pipeline::generate_synthetic(&spec)?;
    let mut manifest = Manifest::new("synth", &spec)?;
    if let Some(p) = &a.config {
        manifest.input(p)?;
    }
    let paths = io::write_tables(&a.out, &Tables::from(data))?;
    let written: Vec<PathBuf> = paths.all().into_iter().map(Path::to_path_buf).collect();
    finish(&a.out, &written, manifest)
}

#[derive(Serialize)]
struct FeaturesConfig {
    predictor_sets: Vec<PredictorSetId>,
    drops: Vec<(PredictorSetId, satblend::geo::DropReport)>,
}

fn features(a: &FeaturesArgs) -> Result<(), Failure> {
    let mut manifest = Manifest::new("features", ())?;
    let tables = load(&a.input, &mut manifest)?;
    let sets = default_sets(&a.predictor_sets, tables.products.len())?;
    let built = pipeline::assemble_sets(&tables.stations, &tables.observations, &tables.products, &sets)?;
    let mut written = Vec::new();
    for (set, t) in &built {
        let p = a.out.join(format!("features_{set}.csv"));
        io::write_feature_table(&p, t)?;
        info!("{set}: {} rows, {} dropped", t.len(), t.drops.total());
        written.push(p);
    }
    manifest.config = serde_json::to_value(FeaturesConfig {
        predictor_sets: sets,
        drops: built.iter().map(|(s, t)| (*s, t.drops.clone())).collect(),
    })
    .map_err(|e| Failure::Data(e.to_string()))?;
    finish(&a.out, &written, manifest)
}

fn experiment(a: &ExperimentArgs) -> Result<(), Failure> {
    let mut manifest = Manifest::new("experiment", ())?;
    if let Some(p) = &a.run.config {
        manifest.input(p)?;
    }
    let tables = load(&a.input, &mut manifest)?;
    let config = run_config(&a.run, tables.products.len())?;
    let built = pipeline::assemble_sets(&tables.stations, &tables.observations, &tables.products, &config.predictor_sets)?;
    let report = pipeline::run_experiment(&built, &config)?;
    for f in &report.flags {
        warn!("{f}");
    }
    let written = io::write_experiment_report(&a.run.out, &report, &[ReportFormat::Json, ReportFormat::Csv])?;
    manifest.config = serde_json::json!({ "experiment": config, "seeds": report.seeds });
    finish(&a.run.out, &written, manifest)
}

fn importance(a: &ImportanceArgs) -> Result<(), Failure> {
    if a.repeats == 0 {
        return Err(Failure::Usage("--repeats must be at least 1".into()));
    }
    let mut manifest = Manifest::new("importance", ())?;
    if let Some(p) = &a.run.config {
        manifest.input(p)?;
    }
    let tables = load(&a.input, &mut manifest)?;
    let config = run_config(&a.run, tables.products.len())?;
    let built = pipeline::assemble_sets(&tables.stations, &tables.observations, &tables.products, &config.predictor_sets)?;
    let study = pipeline::run_importance(&built, &config, a.repeats)?;
    let written = io::write_importance_study(&a.run.out, &study, &[ReportFormat::Json, ReportFormat::Csv])?;
    manifest.config = serde_json::json!({ "experiment": config, "repeats": a.repeats, "seeds": config.seeds() });
    finish(&a.run.out, &written, manifest)
}

fn report(a: &ReportArgs) -> Result<(), Failure> {
    let mut manifest = Manifest::new("report", ())?;
    let report = io::read_experiment_report(&a.input)?;
    manifest.input(&a.input)?;
    let written = io::write_experiment_report(&a.out, &report, &[ReportFormat::Csv])?;
    finish(&a.out, &written, manifest)
}
