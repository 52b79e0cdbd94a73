mod config;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use placeness::constructions::{
    load_constructions, mine_constructions, save_constructions, ConstructionSet, MiningError,
};
use placeness::corpus::{load_geotagged, occurrences, read_documents, tokenize, Document};
use placeness::eval::{self, evaluate, format_table, term_map, threshold_sweep, write_csv, EvalError, ReportRow};
use placeness::gazetteer::{load_gazetteer, Gazetteer};
use placeness::geo::{GeoPoint, Grid};
use placeness::predict::{enrich, read_predictions, write_predictions, PredictionRecord, Predictor, PredictorKind};
use placeness::wordmodel::{build_store, load_store, save_store, ModelError, ModelStore};

use config::Config;

#[derive(Debug, Parser)]
#[command(name = "placeness", version, about = "Word placeness models and text geolocation")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set log_t=40`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit word models on a geotagged corpus and save the model store.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Mine locational constructions around gazetteer names.
    Mine {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Predict document locations and write the debug dump.
    Predict {
        #[arg(long)]
        model: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score predictions against gold locations, or sweep thresholds.
    Evaluate {
        /// Documents with gold locations (`id lat lon text`).
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, conflicts_with = "sweep")]
        predictions: Option<PathBuf>,
        /// Comma-separated log_T values; requires --model.
        #[arg(long, value_delimiter = ',', requires = "model")]
        sweep: Option<Vec<f64>>,
        #[arg(long)]
        model: Option<String>,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Attach predicted locations to unlabeled documents.
    Enrich {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "filtered-centroid")]
        model: String,
    },
    /// Count terms per grid cell and export GeoJSON.
    Termmap {
        #[arg(long, value_delimiter = ',', required = true)]
        terms: Vec<String>,
        /// Gold-located documents.
        #[arg(long, conflicts_with_all = ["enriched", "texts"])]
        input: Option<PathBuf>,
        /// Output of `enrich`; requires --texts.
        #[arg(long, requires = "texts")]
        enriched: Option<PathBuf>,
        #[arg(long, requires = "enriched")]
        texts: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_status(&err))
        }
    }
}

/// 3 when the data cannot support the request, 2 for any other input problem.
fn exit_status(err: &anyhow::Error) -> u8 {
    let insufficient = err.chain().any(|e| {
        matches!(e.downcast_ref::<MiningError>(), Some(MiningError::NoAnchors))
            || matches!(e.downcast_ref::<ModelError>(), Some(ModelError::EmptyStream))
            || matches!(e.downcast_ref::<EvalError>(), Some(EvalError::Empty))
    });
    if insufficient {
        3
    } else {
        2
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = Config::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Train { corpus, output } => train(&config, corpus, output),
        Command::Mine { corpus, output } => mine(&config, corpus, output),
        Command::Predict { model, input, output } => predict(&config, &model, &input, &output),
        Command::Evaluate { gold, predictions, sweep, model, csv } => {
            evaluate_cmd(&config, &gold, predictions.as_deref(), sweep, model.as_deref(), csv.as_deref())
        }
        Command::Enrich { input, output, model } => enrich_cmd(&config, &input, &output, &model),
        Command::Termmap { terms, input, enriched, texts, output } => {
            termmap(&config, &terms, input.as_deref(), enriched.as_deref().zip(texts.as_deref()), &output)
        }
    }
}

fn required(arg: Option<PathBuf>, key: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    match arg.or_else(|| key.clone()) {
        Some(p) => Ok(p),
        None => bail!("no {name} given; pass it on the command line or set `{name}` in the config"),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).with_context(|| format!("cannot write {}", path.display()))
}

fn store(config: &Config) -> Result<ModelStore> {
    let path = required(None, &config.model_store, "model_store")?;
    load_store(&path).with_context(|| format!("cannot load model store {}", path.display()))
}

fn gazetteer(config: &Config) -> Result<Gazetteer> {
    let path = required(None, &config.gazetteer, "gazetteer")?;
    let (gaz, report) = load_gazetteer(&path, config.stop_list.as_deref())
        .with_context(|| format!("cannot load gazetteer {}", path.display()))?;
    log::info!("gazetteer: {report:?}");
    Ok(gaz)
}

fn train(config: &Config, corpus: Option<PathBuf>, output: Option<PathBuf>) -> Result<()> {
    let corpus = required(corpus, &config.corpus, "corpus")?;
    let output = required(output, &config.model_store, "model_store")?;
    let loaded = load_geotagged(&corpus).with_context(|| format!("cannot read corpus {}", corpus.display()))?;
    let (store, report) =
        build_store(occurrences(&loaded.posts), &config.store_config()?).context("cannot build model store")?;
    save_store(&store, &output)?;
    println!("vocabulary: {} words from {} posts", store.len(), loaded.posts.len());
    println!(
        "skipped: {} malformed records, {} words below support, {} over the vocabulary cap, {} occurrences out of range",
        loaded.skipped, report.below_support, report.over_vocab_cap, report.out_of_range
    );
    Ok(())
}

fn mine(config: &Config, corpus: Option<PathBuf>, output: Option<PathBuf>) -> Result<()> {
    let corpus = required(corpus, &config.corpus, "corpus")?;
    let output = required(output, &config.constructions, "constructions")?;
    let store = store(config)?;
    let gaz = gazetteer(config)?;
    let loaded = load_geotagged(&corpus).with_context(|| format!("cannot read corpus {}", corpus.display()))?;
    let posts: Vec<Vec<String>> = loaded.posts.iter().map(|p| tokenize(p.text())).collect();
    let mined = mine_constructions(&posts, &gaz, &store, &config.mining_config()?)?;
    save_constructions(&output, &mined)?;
    println!("constructions: {} retained", mined.len());
    Ok(())
}

/// Everything a predictor may borrow.
struct Resources {
    gazetteer: Option<Gazetteer>,
    store: Option<ModelStore>,
    constructions: Option<ConstructionSet>,
    grid: Option<Grid>,
}

impl Resources {
    fn load(config: &Config, kind: PredictorKind) -> Result<Self> {
        let mut r = Resources { gazetteer: None, store: None, constructions: None, grid: None };
        if kind == PredictorKind::Gazetteer {
            r.gazetteer = Some(gazetteer(config)?);
            return Ok(r);
        }
        let store = store(config)?;
        if matches!(kind, PredictorKind::FilteredCentroid | PredictorKind::FilteredVote) {
            let path = required(None, &config.constructions, "constructions")?;
            let list =
                load_constructions(&path).with_context(|| format!("cannot load constructions {}", path.display()))?;
            r.constructions = Some(ConstructionSet::new(list));
        }
        if kind == PredictorKind::FilteredVote {
            let Some((sw, ne)) = store.metadata().bbox else {
                bail!("model store records no bounding box to lay the vote grid over");
            };
            r.grid = Some(Grid::covering(sw, ne, config.grid_cell_km)?);
        }
        r.store = Some(store);
        Ok(r)
    }

    fn predictor(&self, config: &Config, kind: PredictorKind) -> Predictor<'_> {
        let log_t = config.log_t;
        let band = config.band();
        let store = self.store.as_ref();
        match kind {
            PredictorKind::Gazetteer => Predictor::Gazetteer(self.gazetteer.as_ref().expect("gazetteer loaded")),
            PredictorKind::Total => Predictor::Total { store: store.expect("store loaded"), log_t },
            PredictorKind::FilteredCentroid => Predictor::FilteredCentroid {
                store: store.expect("store loaded"),
                constructions: self.constructions.as_ref().expect("constructions loaded"),
                band,
                log_t,
            },
            PredictorKind::FilteredVote => Predictor::FilteredVote {
                store: store.expect("store loaded"),
                constructions: self.constructions.as_ref().expect("constructions loaded"),
                grid: self.grid.as_ref().expect("grid built"),
                band,
                log_t,
            },
        }
    }
}

fn documents(path: &Path) -> Result<Vec<Document>> {
    read_documents(path).with_context(|| format!("cannot read documents {}", path.display()))
}

fn predict(config: &Config, model: &str, input: &Path, output: &Path) -> Result<()> {
    let kind: PredictorKind = model.parse()?;
    let resources = Resources::load(config, kind)?;
    let predictor = resources.predictor(config, kind);
    let docs = documents(input)?;
    let records: Vec<PredictionRecord> =
        docs.iter().zip(predictor.predict_all(&docs)).map(|(d, p)| PredictionRecord::new(d.id.clone(), &p)).collect();
    write_predictions(create(output)?, &records)?;
    let located = records.iter().filter(|r| r.location.is_some()).count();
    println!("predicted: {located} of {} documents located", records.len());
    Ok(())
}

fn report_log_t(config: &Config, kind: PredictorKind) -> Option<f64> {
    (kind != PredictorKind::Gazetteer).then_some(config.log_t)
}

fn evaluate_cmd(
    config: &Config,
    gold: &Path,
    predictions: Option<&Path>,
    sweep: Option<Vec<f64>>,
    model: Option<&str>,
    csv: Option<&Path>,
) -> Result<()> {
    let docs = documents(gold)?;
    let rows = match (predictions, sweep) {
        (Some(path), _) => {
            let file = File::open(path).with_context(|| format!("cannot open predictions {}", path.display()))?;
            let records = read_predictions(BufReader::new(file))?;
            let by_id: HashMap<&str, &PredictionRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
            let mut pairs = Vec::new();
            for d in &docs {
                let Some(g) = d.gold_location else {
                    bail!("document {:?} in {} has no gold location", d.id, gold.display())
                };
                let predicted = by_id.get(d.id.as_str()).and_then(|r| r.location);
                pairs.push((predicted, g));
            }
            let kind = match model {
                Some(m) => m.parse()?,
                None => records.first().map_or(PredictorKind::FilteredCentroid, |r| r.model),
            };
            let report = evaluate(&pairs, config.radius_km)?;
            vec![ReportRow::new(kind.name(), report_log_t(config, kind), &report)]
        }
        (None, Some(thresholds)) => {
            let kind: PredictorKind = model.expect("clap requires --model with --sweep").parse()?;
            let resources = Resources::load(config, kind)?;
            let predictor = resources.predictor(config, kind);
            threshold_sweep(&docs, &predictor, &thresholds, config.radius_km)?
                .iter()
                .map(|(t, r)| ReportRow::new(kind.name(), report_log_t(config, kind).map(|_| *t), r))
                .collect()
        }
        (None, None) => bail!("evaluate needs --predictions or --sweep"),
    };
    print!("{}", format_table(&rows));
    if let Some(path) = csv {
        write_csv(create(path)?, &rows)?;
    }
    Ok(())
}

fn enrich_cmd(config: &Config, input: &Path, output: &Path, model: &str) -> Result<()> {
    let kind: PredictorKind = model.parse()?;
    let resources = Resources::load(config, kind)?;
    let predictor = resources.predictor(config, kind);
    let docs = documents(input)?;
    let summary =
        enrich(&docs, &predictor, create(output)?).with_context(|| format!("cannot write {}", output.display()))?;
    println!(
        "enriched: {} of {} documents ({:.1}% coverage)",
        summary.located,
        summary.documents,
        100.0 * summary.coverage()
    );
    Ok(())
}

/// Reads `id <TAB> lat <TAB> lon` lines written by `enrich`.
fn read_enriched(path: &Path) -> Result<HashMap<String, GeoPoint>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split('\t').collect();
        let [id, lat, lon] = f.as_slice() else { bail!("{}:{}: expected id, lat, lon", path.display(), i + 1) };
        let point =
            GeoPoint::new(lat.parse()?, lon.parse()?).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.insert(id.to_string(), point);
    }
    Ok(out)
}

fn termmap(
    config: &Config,
    terms: &[String],
    input: Option<&Path>,
    enriched: Option<(&Path, &Path)>,
    output: &Path,
) -> Result<()> {
    let terms: Vec<String> = terms.iter().flat_map(|t| tokenize(t)).collect();
    let located: Vec<(GeoPoint, Document)> = match (input, enriched) {
        (Some(path), _) => documents(path)?.into_iter().filter_map(|d| d.gold_location.map(|g| (g, d))).collect(),
        (None, Some((positions, texts))) => {
            let positions = read_enriched(positions)?;
            documents(texts)?.into_iter().filter_map(|d| positions.get(&d.id).map(|&g| (g, d))).collect()
        }
        (None, None) => bail!("termmap needs --input or --enriched with --texts"),
    };
    if located.is_empty() {
        bail!("no located documents to map");
    }
    let (mut s, mut w, mut n, mut e) = (90.0f64, 180.0f64, -90.0f64, -180.0f64);
    for (p, _) in &located {
        (s, w, n, e) = (s.min(p.lat()), w.min(p.lon()), n.max(p.lat()), e.max(p.lon()));
    }
    let grid = Grid::covering(GeoPoint::new(s, w)?, GeoPoint::new(n, e)?, config.grid_cell_km)?;
    let map = term_map(located.iter().map(|(g, d)| (*g, d.tokens.as_slice())), &terms, &grid);
    eval::write_geojson(create(output)?, &map, &grid)?;
    println!("term map: {} cells with occurrences of {} terms", map.counts.len(), terms.len());
    Ok(())
}
