use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mfl_core::evaluate::{
    per_time_distances, series_distances, BranchClassifier, EvalReport, MethodScore,
};
use mfl_core::io;
use mfl_core::objective::ObjectiveReport;
use mfl_core::optimizer::{final_bridges, init_particles, run, schedule_at, Checkpoint, Observer, OptimizerState};
use mfl_core::pathspace::{reconstruct_paths, PathLaw};
use mfl_core::simulate::Benchmark;
use mfl_core::{Error, MarginalState, ProblemConfig, Result, SnapshotSeries};
use serde::Serialize;

use crate::manifest::{hash_file, Manifest};
use crate::{BenchmarkName, EvaluateArgs, FullRunArgs, InferArgs, SamplePathsArgs, SimulateArgs, Switch};

const CONFIG: &str = "config.json";
const DATA: &str = "data.csv";
const MARGINALS: &str = "marginals.csv";
const DIAGNOSTICS: &str = "diagnostics.jsonl";
const MANIFEST: &str = "manifest.json";

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist", path.display())))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn benchmark(name: BenchmarkName, growth: bool) -> Benchmark {
    match name {
        BenchmarkName::Bifurcation => Benchmark::bifurcation(),
        BenchmarkName::Bistable => Benchmark::bistable(growth),
    }
}

#[derive(Serialize)]
struct SimulationSummary {
    benchmark: String,
    seed: u64,
    times: Vec<f64>,
    counts: Vec<usize>,
    truth_per_time: usize,
    truth_branch_fraction: Option<f64>,
}

pub fn simulate(args: &SimulateArgs, argv: &[String]) -> Result<()> {
    let bench = benchmark(args.benchmark, args.growth == Switch::On);
    let counts = match args.benchmark {
        BenchmarkName::Bifurcation => bench.counts(args.n.unwrap_or(64)),
        BenchmarkName::Bistable => vec![args.n.unwrap_or(50); bench.times.len()],
    };
    let data = bench.generate(&counts, args.truth_per_time, args.seed)?;
    create_dir(&args.out)?;
    io::save_snapshots(&data.observed, &args.out.join("snapshots.csv"))?;
    io::save_snapshots(&data.truth, &args.out.join("truth.csv"))?;
    let summary = SimulationSummary {
        benchmark: format!("{:?}", args.benchmark).to_lowercase(),
        seed: args.seed,
        times: bench.times.clone(),
        counts,
        truth_per_time: args.truth_per_time,
        truth_branch_fraction: data.truth_branch_fraction,
    };
    fs::write(args.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let mut m = Manifest::new("simulate", argv, args.seed);
    m.outputs = vec!["snapshots.csv".into(), "truth.csv".into(), "summary.json".into()];
    m.write(&args.out.join(MANIFEST))
}

/// Streams reports to JSONL and writes checkpoints next to them.
struct RunWriter {
    dir: PathBuf,
    diagnostics: BufWriter<File>,
    times: Vec<f64>,
    checkpoints: Vec<String>,
}

impl Observer for RunWriter {
    fn on_report(&mut self, report: &ObjectiveReport) -> Result<()> {
        serde_json::to_writer(&mut self.diagnostics, report)?;
        self.diagnostics.write_all(b"\n")?;
        Ok(())
    }

    fn on_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        let k = ck.state.iteration();
        let name = format!("ckpt_{k}.json");
        io::write_checkpoint(ck, &self.dir.join(&name))?;
        io::save_marginals(&ck.state.marginals, &self.times, &self.dir.join(format!("marginals_{k}.csv")))?;
        self.checkpoints.push(name);
        self.diagnostics.flush()?;
        Ok(())
    }
}

/// Copies `src` into `dir/name` unless it already is that file.
fn stage(src: &Path, dir: &Path, name: &str) -> Result<()> {
    let dst = dir.join(name);
    let same = match (fs::canonicalize(src), fs::canonicalize(&dst)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if !same {
        fs::copy(src, &dst)?;
    }
    Ok(())
}

pub fn infer(args: &InferArgs, argv: &[String]) -> Result<()> {
    let (config_path, data_path) = if let Some(mpath) = &args.from_manifest {
        let m = Manifest::read(mpath)?;
        let dir = mpath.parent().unwrap_or(Path::new("."));
        (Some(m.verified_input("config", dir)?), m.verified_input("data", dir)?)
    } else {
        (args.config.clone(), args.data.clone().expect("clap requires --data"))
    };
    require(&data_path)?;
    let series = io::load_snapshots(&data_path)?;

    let checkpoint = match &args.resume {
        Some(p) => {
            require(p)?;
            Some(io::read_checkpoint(p)?)
        }
        None => None,
    };
    let mut cfg = match (&config_path, &checkpoint) {
        (Some(p), _) => {
            require(p)?;
            io::load_config(p)?
        }
        (None, Some(ck)) => ck.config.clone(),
        (None, None) => return Err(Error::Config("--config is required".into())),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let state = match checkpoint {
        Some(ck) => {
            if ck.state.seed != cfg.seed {
                return Err(Error::Config(format!(
                    "checkpoint seed {} differs from config seed {}",
                    ck.state.seed, cfg.seed
                )));
            }
            ck.state
        }
        None => OptimizerState::new(init_particles(&series, &cfg)?, cfg.seed),
    };

    create_dir(&args.out)?;
    io::save_config(&cfg, &args.out.join(CONFIG))?;
    stage(&data_path, &args.out, DATA)?;

    let resuming = state.iteration() > 0;
    let diagnostics = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resuming)
        .truncate(!resuming)
        .open(args.out.join(DIAGNOSTICS))?;
    let times = series.original_times();
    let mut writer = RunWriter {
        dir: args.out.clone(),
        diagnostics: BufWriter::new(diagnostics),
        times: times.clone(),
        checkpoints: Vec::new(),
    };
    let final_state = run(&series, &cfg, state, &mut writer)?;
    writer.diagnostics.flush()?;
    io::save_marginals(&final_state.marginals, &times, &args.out.join(MARGINALS))?;

    let bridges = final_bridges(&final_state, &series, &cfg)?;
    let bridge_dir = args.out.join("bridges");
    create_dir(&bridge_dir)?;
    let mut outputs = vec![MARGINALS.to_string(), DIAGNOSTICS.to_string()];
    for (i, b) in bridges.iter().enumerate() {
        let name = format!("bridge_{i}.csv");
        let mut w = BufWriter::new(File::create(bridge_dir.join(&name))?);
        b.dump_csv(&mut w)?;
        w.flush()?;
        outputs.push(format!("bridges/{name}"));
    }
    outputs.extend(writer.checkpoints);

    let mut m = Manifest::new("infer", argv, cfg.seed);
    m.inputs.push(hash_file("config", &args.out, CONFIG)?);
    m.inputs.push(hash_file("data", &args.out, DATA)?);
    m.outputs = outputs;
    if cfg.growth.is_some() {
        m.notes.push("growth-heuristic: bridges tilted by a growth prior".into());
    }
    m.write(&args.out.join(MANIFEST))
}

/// Config, data and final clouds of a finished `infer` run.
fn load_run(dir: &Path) -> Result<(ProblemConfig, SnapshotSeries, MarginalState)> {
    for name in [CONFIG, DATA, MARGINALS] {
        require(&dir.join(name))?;
    }
    let cfg = io::load_config(&dir.join(CONFIG))?;
    let series = io::load_snapshots(&dir.join(DATA))?;
    let mut state = io::read_marginals(&dir.join(MARGINALS))?;
    state.iteration = cfg.iterations;
    Ok((cfg, series, state))
}

pub fn sample_paths(args: &SamplePathsArgs, argv: &[String]) -> Result<()> {
    let (cfg, series, marginals) = load_run(&args.run)?;
    let state = OptimizerState::new(marginals, cfg.seed);
    let bridges = final_bridges(&state, &series, &cfg)?;
    let tau = schedule_at(&cfg.schedule(), state.iteration(), &cfg).tau;
    let law = PathLaw::from_bridges(&bridges, series.times(), series.original_times(), tau, cfg.growth.is_some())?;
    let paths = reconstruct_paths(&law, args.count, args.grid, args.seed)?;
    let mut w = BufWriter::new(File::create(args.run.join("paths.csv"))?);
    io::write_paths(&paths, &mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(args.run.join("skeletons.csv"))?);
    io::write_skeletons(&paths, &mut w)?;
    w.flush()?;
    let mut m = Manifest::new("sample-paths", argv, args.seed);
    m.inputs.push(hash_file("config", &args.run, CONFIG)?);
    m.inputs.push(hash_file("data", &args.run, DATA)?);
    m.inputs.push(hash_file("marginals", &args.run, MARGINALS)?);
    m.outputs = vec!["paths.csv".into(), "skeletons.csv".into()];
    if law.growth_heuristic {
        m.notes.push("growth-heuristic: path law from tilted bridges".into());
    }
    m.write(&args.run.join("manifest_sample_paths.json"))
}

/// Last row of every path in a paths CSV.
fn path_endpoints(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut last_id: Option<String> = None;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let coords = rec
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|_| Error::Parse { line, message: format!("bad number {s:?}") }))
            .collect::<Result<Vec<_>>>()?;
        if last_id.as_deref() == Some(&rec[0]) {
            *out.last_mut().unwrap() = coords;
        } else {
            last_id = Some(rec[0].to_string());
            out.push(coords);
        }
    }
    Ok(out)
}

fn classifier(name: BenchmarkName) -> BranchClassifier {
    benchmark(name, false).classifier.expect("benchmarks define a branch classifier")
}

pub fn evaluate(args: &EvaluateArgs, argv: &[String]) -> Result<()> {
    require(&args.truth)?;
    let (_, series, marginals) = load_run(&args.run)?;
    let truth = io::load_snapshots(&args.truth)?;
    let times = truth.original_times();
    let mut report = EvalReport {
        methods: vec![
            MethodScore::new("mfl", &times, &per_time_distances(&marginals, &truth)?),
            MethodScore::new("snapshots", &times, &series_distances(&series, &truth)?),
        ],
        branch_fraction: None,
    };
    if let Some(name) = args.branch {
        let paths_file = args.run.join("paths.csv");
        require(&paths_file)?;
        let ends = path_endpoints(&paths_file)?;
        let c = classifier(name);
        if ends.is_empty() {
            return Err(Error::Evaluation("paths file is empty".into()));
        }
        report.branch_fraction = Some(ends.iter().filter(|x| c.matches(x)).count() as f64 / ends.len() as f64);
    }
    let mut w = BufWriter::new(File::create(args.run.join("eval.json"))?);
    report.write_json(&mut w)?;
    w.write_all(b"\n")?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(args.run.join("eval.csv"))?);
    report.write_csv(&mut w)?;
    w.flush()?;
    let mut m = Manifest::new("evaluate", argv, 0);
    m.inputs.push(hash_file("marginals", &args.run, MARGINALS)?);
    m.outputs = vec!["eval.json".into(), "eval.csv".into()];
    m.write(&args.run.join("manifest_evaluate.json"))
}

pub fn full_run(args: &FullRunArgs, argv: &[String]) -> Result<()> {
    let sim_dir = args.simulate.out.join("simulation");
    let run_dir = args.simulate.out.join("run");
    let mut sim = args.simulate.clone();
    sim.out = sim_dir.clone();
    simulate(&sim, argv)?;

    let mut cfg = match &args.config {
        Some(p) => {
            require(p)?;
            io::load_config(p)?
        }
        None => match args.simulate.benchmark {
            BenchmarkName::Bifurcation => ProblemConfig::bifurcation_benchmark(),
            BenchmarkName::Bistable => ProblemConfig::bistable_benchmark(args.infer_growth == Switch::On),
        },
    };
    cfg.seed = args.simulate.seed;
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    create_dir(&run_dir)?;
    let cfg_path = args.simulate.out.join("config.json");
    io::save_config(&cfg, &cfg_path)?;
    infer(
        &InferArgs {
            config: Some(cfg_path),
            data: Some(sim_dir.join("snapshots.csv")),
            out: run_dir.clone(),
            seed: None,
            resume: None,
            from_manifest: None,
        },
        argv,
    )?;
    sample_paths(
        &SamplePathsArgs {
            run: run_dir.clone(),
            count: args.count,
            grid: args.grid,
            seed: args.simulate.seed,
        },
        argv,
    )?;
    evaluate(
        &EvaluateArgs {
            run: run_dir,
            truth: sim_dir.join("truth.csv"),
            branch: Some(args.simulate.benchmark),
        },
        argv,
    )?;
    Ok(())
}
