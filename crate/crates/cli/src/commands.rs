use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use hydrodispatch::datastore::{parse_timestamp, read_bundle, write_bundle, IngestSummary, Store};
use hydrodispatch::dispatch::{export_case, run_dispatch, write_case, DispatchRequest, DispatchRow, DispatchRun};
use hydrodispatch::efficiency::{plant_curves, render_svg, write_curve_csv, EfficiencyCurve};
use hydrodispatch::hydrology::{generate_with, HydroScenario, Season, SynthConfig};
use hydrodispatch::interdependency::{analyze_pair, LagReport, PlantPair};
use hydrodispatch::ml::{plant_training_set, train_plant, TrainConfig, TrainedPlantModel};
use hydrodispatch_service::{model_path, ServiceConfig};

use crate::{
    Cli, Command, DispatchArgs, EfficiencyArgs, ExportArgs, IngestArgs, LagArgs, ServeArgs, SynthArgs, TrainArgs,
};

/// Failure detected by the CLI itself rather than the library.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn fail(code: &'static str, message: impl Into<String>) -> anyhow::Error {
    CliError { code, message: message.into() }.into()
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(cli, a),
        Command::Synth(a) => synth(cli, a),
        Command::Efficiency(a) => efficiency(cli, a),
        Command::Lag(a) => lag(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Dispatch(a) => dispatch(cli, a),
        Command::Export(a) => export(a),
        Command::Serve(a) => serve(cli, a),
    }
}

fn open_store(cli: &Cli) -> Result<Store> {
    Store::open(&cli.db).with_context(|| format!("opening store {}", cli.db.display()))
}

/// Buffered writer on `path`, or stdout when absent.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn print_summary(s: &IngestSummary) {
    println!("static_plants\t{}", s.static_plants);
    println!("static_units\t{}", s.static_units);
    println!("plant_samples\t{}", s.plant_samples);
    println!("unit_samples\t{}", s.unit_samples);
}

fn ingest(cli: &Cli, a: &IngestArgs) -> Result<()> {
    let mut store = open_store(cli)?;
    let files = [&a.static_plants, &a.static_units, &a.plants, &a.units];
    if files.iter().all(|f| f.is_none()) {
        let bundle = match a.bundle.as_deref() {
            Some(p) if p != Path::new("-") => {
                read_bundle(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))?
            }
            _ => read_bundle(io::stdin().lock())?,
        };
        print_summary(&store.ingest_bundle(&bundle)?);
        return Ok(());
    }
    if a.bundle.is_some() {
        return Err(fail("usage", "--bundle cannot be combined with table files"));
    }
    let mut s = IngestSummary::default();
    // Static tables first so samples pass the reference checks.
    if let Some(p) = &a.static_plants {
        s.static_plants = store.ingest_static_plant_csv(p)?;
    }
    if let Some(p) = &a.static_units {
        s.static_units = store.ingest_static_unit_csv(p)?;
    }
    if let Some(p) = &a.plants {
        s.plant_samples = store.ingest_plant_csv(p)?;
    }
    if let Some(p) = &a.units {
        s.unit_samples = store.ingest_unit_csv(p)?;
    }
    print_summary(&s);
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    if a.hours <= a.lag {
        return Err(fail("validation", format!("--hours {} must exceed --lag {}", a.hours, a.lag)));
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(fail("validation", format!("--noise {} must be a nonnegative number", a.noise)));
    }
    let mut cfg = SynthConfig::new(cli.seed, a.hours, a.lag, a.noise);
    if let Some(s) = &a.start {
        cfg.start = parse_timestamp(s)?;
    }
    let mut out = output(a.out.as_deref())?;
    write_bundle(&mut out, &generate_with(&cfg).to_bundle())?;
    out.flush()?;
    Ok(())
}

fn plant_of_unit(store: &Store, unit: &str) -> Result<String> {
    for p in store.static_plants()? {
        if store.join_units_of(&p.project_name)?.iter().any(|u| u.unit_id == unit) {
            return Ok(p.project_name);
        }
    }
    Err(hydrodispatch::Error::NotFound { kind: "unit", name: unit.to_string() }.into())
}

fn efficiency(cli: &Cli, a: &EfficiencyArgs) -> Result<()> {
    if !(a.threshold > 0.0 && a.threshold <= 1.0) {
        return Err(fail("validation", format!("--threshold {} outside (0, 1]", a.threshold)));
    }
    let mut store = open_store(cli)?;
    let (plant, unit) = match (&a.plant, &a.unit) {
        (Some(p), _) => (p.clone(), None),
        (None, Some(u)) => (plant_of_unit(&store, u)?, Some(u.as_str())),
        (None, None) => unreachable!("clap requires one of --unit and --plant"),
    };
    let curves: Vec<EfficiencyCurve> = plant_curves(&store, &plant, a.threshold)?
        .into_iter()
        .filter(|c| unit.is_none_or(|u| c.unit_id == u))
        .collect();
    if curves.is_empty() {
        let what = unit.map_or_else(|| format!("any unit of {plant}"), str::to_string);
        return Err(hydrodispatch::Error::InsufficientData(format!("no usable observations for {what}")).into());
    }
    let points: Vec<_> = curves.iter().flat_map(|c| c.points.iter().cloned()).collect();
    store.replace_efficiency_points(&points)?;
    for c in &curves {
        match c.band_power() {
            Some((lo, hi)) => log::info!("{}: band {lo:.2}..{hi:.2} MW", c.unit_id),
            None => log::info!("{}: no point reaches the threshold", c.unit_id),
        }
    }
    if let Some(p) = &a.plot {
        std::fs::write(p, render_svg(&curves)).with_context(|| format!("writing {}", p.display()))?;
    }
    let mut out = output(a.out.as_deref())?;
    write_curve_csv(&mut out, &curves)?;
    out.flush()?;
    Ok(())
}

fn lag(cli: &Cli, a: &LagArgs) -> Result<()> {
    let season: Option<Season> = a.season.as_deref().map(str::parse).transpose()?;
    let store = open_store(cli)?;
    let mut report = analyze_pair(&store, &PlantPair::new(&a.up, &a.down), a.max_lag)?;
    if let Some(s) = season {
        report.profiles.retain(|p| p.season == s);
        report.links.retain(|l| l.season == s);
        if report.profiles.is_empty() {
            return Err(hydrodispatch::Error::InsufficientData(format!("{s}: too little overlapping data")).into());
        }
    }
    let mut out = io::stdout().lock();
    writeln!(out, "season\tlag\tr\tpairs\tbest")?;
    for p in &report.profiles {
        for &(lag, r, n) in &p.correlations {
            let mark = if lag == p.best_lag { "*" } else { "" };
            writeln!(out, "{}\t{lag}\t{r:.6}\t{n}\t{mark}", p.season)?;
        }
    }
    for p in &report.profiles {
        writeln!(out, "best_lag\t{}\t{}", p.season, p.best_lag)?;
    }
    for l in &report.links {
        writeln!(
            out,
            "link\t{}\tlag {}: {} = {:.4} + {:.6} * {}_mw + {:.6} * {}_head (r2 {:.4}, n {})",
            l.season,
            l.lag,
            l.downstream,
            l.intercept,
            l.beta_upstream_mw,
            l.upstream,
            l.beta_upstream_head,
            l.upstream,
            l.r_squared,
            l.samples
        )?;
    }
    if let Some(p) = &a.json {
        std::fs::write(p, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str::<TrainConfig>(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => TrainConfig::default(),
    };
    cfg.seed = cli.seed;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let store = open_store(cli)?;
    let (spec, rows) = plant_training_set(&store, &a.plant)?;
    drop(store);
    let model = train_plant(&spec, &rows, &cfg)?;
    let path = a.out.clone().unwrap_or_else(|| model_path(Path::new("models"), &a.plant));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    model.save(&path)?;
    print!("{}", model.report);
    println!("model\t{}", path.display());
    Ok(())
}

fn load_models(a: &DispatchArgs, plants: &[String]) -> Result<BTreeMap<String, TrainedPlantModel>> {
    let mut models = BTreeMap::new();
    for p in &a.model {
        let m = TrainedPlantModel::load(p).with_context(|| format!("loading model {}", p.display()))?;
        models.insert(m.plant.clone(), m);
    }
    for plant in plants {
        if models.contains_key(plant) {
            continue;
        }
        let path = model_path(&a.models, plant);
        if !path.exists() {
            return Err(fail("untrained", format!("no trained model for {plant} (looked for {})", path.display())));
        }
        let m = TrainedPlantModel::load(&path).with_context(|| format!("loading model {}", path.display()))?;
        if m.plant != *plant {
            return Err(hydrodispatch::Error::Incompatible(format!("{} holds a model of {}", path.display(), m.plant)).into());
        }
        models.insert(plant.clone(), m);
    }
    Ok(models)
}

fn write_rows(rows: &[DispatchRow], out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => export_case(rows, p).with_context(|| format!("writing {}", p.display())),
        None => {
            for r in rows {
                r.validate()?;
            }
            let mut w = output(None)?;
            write_case(&mut w, rows)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn dispatch(cli: &Cli, a: &DispatchArgs) -> Result<()> {
    let scenario: HydroScenario = a.scenario.parse()?;
    let store = open_store(cli)?;
    let plants: Vec<String> = if a.all {
        store.static_plants()?.into_iter().map(|p| p.project_name).collect()
    } else {
        a.plant.clone()
    };
    let models = load_models(a, &plants)?;
    let links = match &a.links {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<LagReport>(&text)?.links
        }
        None => Vec::new(),
    };
    let mut req = DispatchRequest::new(plants, scenario);
    req.seed = cli.seed;
    req.threshold = a.threshold;
    if let Some(alpha) = a.alpha {
        req.alpha = alpha;
    }
    for t in &a.target {
        let (plant, mw) = parse_target(t).map_err(|m| fail("validation", m))?;
        req.targets.insert(plant, mw);
    }
    let run = run_dispatch(&store, &req, &models, &links)?;
    write_rows(&run.rows, a.out.as_deref())?;
    if let Some(p) = &a.manifest {
        std::fs::write(p, serde_json::to_string_pretty(&run)?).with_context(|| format!("writing {}", p.display()))?;
    }
    if a.out.is_some() {
        print_run(&run)?;
    }
    Ok(())
}

fn parse_target(s: &str) -> Result<(String, f64), String> {
    let (plant, mw) = s.rsplit_once('=').ok_or_else(|| format!("target {s:?} is not PLANT=MW"))?;
    let mw: f64 = mw.trim().parse().map_err(|_| format!("target {s:?} has no MW number"))?;
    Ok((plant.trim().to_string(), mw))
}

fn print_run(run: &DispatchRun) -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "plant\tsource\ttarget_mw\tcapacity_mw\tdispatched_mw\tunserved_mw\tresidual_mw\tactions")?;
    for p in &run.plants {
        writeln!(
            out,
            "{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{}",
            p.project,
            p.target.source,
            p.target.target_mw,
            p.capacity_mw,
            p.dispatched_mw,
            p.unserved_mw,
            p.correction.residual_mw,
            p.correction.log.len()
        )?;
        for w in &p.prediction.warnings {
            writeln!(out, "warning\t{}\t{w}", p.project)?;
        }
    }
    Ok(())
}

fn export(a: &ExportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    let run: DispatchRun = serde_json::from_str(&text)?;
    write_rows(&run.rows, a.out.as_deref())
}

fn serve(cli: &Cli, a: &ServeArgs) -> Result<()> {
    let mut cfg = ServiceConfig::new(&cli.db, &a.models);
    cfg.links_path = a.links.clone();
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    // Fail fast on an unreadable store rather than on the first request.
    drop(open_store(cli)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(hydrodispatch_service::serve(cfg, std::net::SocketAddr::new(a.host, a.port)))?;
    Ok(())
}
