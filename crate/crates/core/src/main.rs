use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use kraichnan_lab::experiments::{resolve_params, run_experiment, CriterionOutcome, ExperimentKind};
use kraichnan_lab::io::{csv_field, split_csv_line, write_json, CSV_SCHEMA};
use kraichnan_lab::{par, Error};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "kraichnan-lab", version, about = "Kraichnan transport experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments listed in a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate the summaries under an output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    experiments: Vec<ExperimentEntry>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentEntry {
    name: ExperimentKind,
    #[serde(default)]
    parameters: serde_json::Value,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    seed: u64,
    parameters: &'a serde_json::Value,
    config_sha256: String,
    version: &'static str,
    created_unix: u64,
    criteria: &'a [u32],
}

enum Failure {
    Config(String),
    Run(Error),
    Criteria,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            e => Failure::Run(e),
        }
    }
}

const SUMMARY_COLUMNS: [&str; 8] =
    ["criterion", "title", "check", "measured", "relation", "threshold", "pass", "supplemental"];

fn write_summary(dir: &Path, outcomes: &[CriterionOutcome]) -> Result<(), Error> {
    let mut text = format!("# schema={CSV_SCHEMA}\n{}\n", SUMMARY_COLUMNS.join(","));
    for o in outcomes {
        for c in &o.checks {
            let row = [
                o.id.to_string(),
                csv_field(&o.title),
                csv_field(&c.name),
                c.measured.to_string(),
                c.relation.symbol().to_string(),
                c.threshold.to_string(),
                c.pass.to_string(),
                c.supplemental.to_string(),
            ];
            text.push_str(&row.join(","));
            text.push('\n');
        }
    }
    fs::write(dir.join("summary.csv"), text)?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn run(config: &Path, seed: Option<u64>, threads: usize, out: Option<PathBuf>) -> Result<(), Failure> {
    let text = fs::read_to_string(config).map_err(|e| Failure::Config(format!("{}: {e}", config.display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Failure::Config(e.to_string()))?;
    if cfg.experiments.is_empty() {
        return Err(Failure::Config("experiments list is empty".into()));
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    let mut resolved = Vec::new();
    for e in &cfg.experiments {
        if e.name == ExperimentKind::Report {
            return Err(Failure::Config("report is a separate subcommand".into()));
        }
        let p = resolve_params(e.name, &e.parameters).map_err(|err| match err {
            Error::Config(m) => Failure::Config(format!("{}: {m}", e.name.name())),
            other => Failure::Run(other),
        })?;
        resolved.push((e.name, p));
    }
    par::set_max_threads(threads);
    let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut all_pass = true;
    for (kind, params) in &resolved {
        let dir = cfg.output_dir.join(kind.name());
        fs::create_dir_all(&dir).map_err(Error::from)?;
        let canonical = serde_json::to_vec(&serde_json::json!({
            "experiment": kind.name(),
            "seed": cfg.seed,
            "parameters": params,
        }))
        .map_err(Error::from)?;
        let manifest = Manifest {
            experiment: kind.name(),
            seed: cfg.seed,
            parameters: params,
            config_sha256: sha256_hex(&canonical),
            version: env!("CARGO_PKG_VERSION"),
            created_unix,
            criteria: kind.criteria(),
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        log::info!("running {}", kind.name());
        let output = run_experiment(*kind, params, cfg.seed)?;
        for t in &output.tables {
            t.save(&dir)?;
        }
        write_summary(&dir, &output.outcomes)?;
        for o in &output.outcomes {
            println!("{}", o.summary_line());
            all_pass &= o.pass;
        }
    }
    if all_pass {
        Ok(())
    } else {
        Err(Failure::Criteria)
    }
}

struct ReportRow {
    criterion: u32,
    title: String,
    pass: bool,
    experiment: &'static str,
}

fn read_summary(path: &Path) -> Result<Vec<(u32, String, bool, bool)>, Error> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(&format!("# schema={CSV_SCHEMA}")) {
        return Err(Error::InvalidInput(format!("{}: unknown schema", path.display())));
    }
    lines.next();
    lines
        .map(|l| {
            let f = split_csv_line(l);
            if f.len() != SUMMARY_COLUMNS.len() {
                return Err(Error::LengthMismatch { expected: SUMMARY_COLUMNS.len(), got: f.len() });
            }
            let id = f[0].parse().map_err(|_| Error::InvalidInput(format!("bad criterion id {}", f[0])))?;
            Ok((id, f[1].clone(), f[6] == "true", f[7] == "true"))
        })
        .collect()
}

fn report(out: &Path) -> Result<(), Failure> {
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut missing = Vec::new();
    for kind in ExperimentKind::RUNNABLE {
        let path = out.join(kind.name()).join("summary.csv");
        if !path.exists() {
            missing.push(kind.name());
            continue;
        }
        for (id, title, pass, supplemental) in read_summary(&path)? {
            if supplemental {
                continue;
            }
            match rows.iter_mut().find(|r| r.criterion == id) {
                Some(r) => r.pass &= pass,
                None => rows.push(ReportRow { criterion: id, title, pass, experiment: kind.name() }),
            }
        }
    }
    rows.sort_by_key(|r| r.criterion);
    fs::create_dir_all(out).map_err(Error::from)?;
    let mut csv = format!("# schema={CSV_SCHEMA}\ncriterion,experiment,title,pass\n");
    let mut txt = String::new();
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.criterion, r.experiment, csv_field(&r.title), r.pass));
        txt.push_str(&format!(
            "criterion {:>2} {}: {} ({})\n",
            r.criterion,
            if r.pass { "PASS" } else { "FAIL" },
            r.title,
            r.experiment
        ));
    }
    for m in &missing {
        txt.push_str(&format!("missing run: {m}\n"));
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    txt.push_str(&format!("{} passed, {failed} failed, {} missing runs\n", rows.len() - failed, missing.len()));
    fs::write(out.join("report.csv"), csv).map_err(Error::from)?;
    fs::write(out.join("report.txt"), &txt).map_err(Error::from)?;
    print!("{txt}");
    if failed == 0 && missing.is_empty() {
        Ok(())
    } else {
        Err(Failure::Criteria)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, threads, out } => run(&config, seed, threads, out),
        Command::Report { out } => report(&out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Criteria) => ExitCode::from(1),
        Err(Failure::Config(message)) => {
            let body = serde_json::json!({ "error": "config", "message": message });
            let _ = writeln!(std::io::stderr(), "{body}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
