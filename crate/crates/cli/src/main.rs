use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use fspg::datagen::{generate_scenario, read_client_csv, write_client_csv, ScenarioSpec};
use fspg::harness::{emit_report, read_records, run_experiment, write_records, ReportFormat, RunConfig};
use fspg::transport::serve_client;
use fspg::{ClientNode, Error, Result};

#[derive(Parser)]
#[command(name = "fspg", version, about = "Federated smoothing proximal gradient for penalized quantile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario as per-client CSV files plus truth.json.
    GenData {
        /// Scenario spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one or more experiments.
    Run {
        /// Run config (JSON). Repeat for a batch; each run then writes to
        /// `<out>/<config file stem>/`.
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: ReportFormat,
        /// Experiments executed concurrently in batch mode.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Convert the metrics in a run directory to another format.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
        /// Output directory, defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve one client's data to a socket-mode coordinator.
    ServeClient {
        /// Client CSV (header x1..xP,y).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        listen: String,
        /// Client id; taken from trailing digits of the file name when absent.
        #[arg(long)]
        id: Option<u32>,
        /// Coordinator sessions to serve before exiting.
        #[arg(long, default_value_t = 1)]
        sessions: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::GenData { spec, out } => gen_data(&spec, &out),
        Command::Run {
            config,
            out,
            format,
            jobs,
        } => run(&config, &out, format, jobs),
        Command::Report { input, format, out } => report(&input, format, out.as_deref().unwrap_or(&input)),
        Command::ServeClient {
            data,
            listen,
            id,
            sessions,
        } => serve(&data, &listen, id, sessions),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn gen_data(spec_path: &Path, out: &Path) -> Result<()> {
    let spec: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(spec_path)?)?;
    let (data, truth) = generate_scenario(&spec)?;
    std::fs::create_dir_all(out)?;
    for d in &data {
        write_client_csv(d, &out.join(format!("client{}.csv", d.client_id())))?;
    }
    std::fs::write(out.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
    std::fs::write(out.join("spec.json"), serde_json::to_string_pretty(&spec)?)?;
    println!("wrote {} client files to {}", data.len(), out.display());
    Ok(())
}

fn run_one(path: &Path, out: &Path, format: ReportFormat) -> Result<()> {
    let cfg = RunConfig::load(path)?;
    let output = run_experiment(&cfg).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    emit_report(&cfg, &output, format, out)?;
    log::info!("{} -> {}", path.display(), out.display());
    Ok(())
}

fn run(configs: &[PathBuf], out: &Path, format: ReportFormat, jobs: usize) -> Result<()> {
    if configs.len() == 1 {
        return run_one(&configs[0], out, format);
    }
    let dirs: Vec<PathBuf> = configs
        .iter()
        .map(|c| out.join(c.file_stem().unwrap_or_default()))
        .collect();
    let mut seen = dirs.clone();
    seen.sort();
    seen.dedup();
    if seen.len() != dirs.len() {
        return Err(Error::Config("batch configs must have distinct file stems".into()));
    }
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, configs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(i) else { break };
                if let Err(e) = run_one(cfg, &dirs[i], format) {
                    failures.lock().unwrap().push(e.to_string());
                }
            });
        }
    });
    let failures = failures.into_inner().unwrap();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} of {} runs failed: {}", failures.len(), configs.len(), failures.join("; "))))
    }
}

fn report(input: &Path, format: ReportFormat, out: &Path) -> Result<()> {
    let source = [ReportFormat::Jsonl, ReportFormat::Csv]
        .into_iter()
        .find(|f| input.join(f.file_name()).is_file())
        .ok_or_else(|| Error::Config(format!("no metrics file in {}", input.display())))?;
    let records = read_records(&input.join(source.file_name()), source)?;
    std::fs::create_dir_all(out)?;
    let path = write_records(&records, format, out)?;
    println!("{}", path.display());
    Ok(())
}

fn id_from_name(path: &Path) -> Option<u32> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

fn serve(data: &Path, listen: &str, id: Option<u32>, sessions: usize) -> Result<()> {
    let id = id
        .or_else(|| id_from_name(data))
        .ok_or_else(|| Error::Config("pass --id or name the data file with a trailing client number".into()))?;
    let node = ClientNode::new(read_client_csv(data, id)?);
    let listener = TcpListener::bind(listen)?;
    println!("client {id} listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    for _ in 0..sessions {
        serve_client(&listener, &node)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_id_from_file_name() {
        assert_eq!(id_from_name(Path::new("dir/client3.csv")), Some(3));
        assert_eq!(id_from_name(Path::new("client12.csv")), Some(12));
        assert_eq!(id_from_name(Path::new("data.csv")), None);
    }
}
