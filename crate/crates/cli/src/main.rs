use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use romocp::problems::{build_problem, load_config, ProblemConfig};
use romocp::rom::{reconstruct, solve_reduced, ReducedCache};
use romocp::study::{
    export_fields, run_convergence, run_offline, run_online, run_pod_comparison, run_speedup,
    StudyReport,
};
use romocp::truth::solve_truth;
use romocp::Error;

/// Offline/online reduced-order solver for parametrized optimal control.
#[derive(Parser, Debug)]
#[command(name = "romocp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train snapshots, compress them and write a reduced cache.
    Offline {
        #[arg(long)]
        config: PathBuf,
        /// Where to write the reduced cache.
        #[arg(long)]
        cache: PathBuf,
        /// Also write the snapshot archive here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the reduced problem at one parameter.
    Online {
        #[command(flatten)]
        query: Query,
        /// Include the reconstructed full-order coefficients.
        #[arg(long)]
        with_fields: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Reduced-vs-truth errors on a random test set, per basis size.
    Convergence {
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Mean truth and reduced solve times, per basis size.
    Speedup {
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Partitioned against monolithic POD on the same snapshots.
    ComparePod {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "5,10,20")]
        basis_list: BasisList,
        #[arg(long, default_value_t = 100)]
        test_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Write reconstructed fields (and their error against truth) as VTK.
    Export {
        #[command(flatten)]
        query: Query,
        /// Skip the truth solve and the `<field>_error` arrays.
        #[arg(long)]
        no_truth: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Query {
    #[arg(long)]
    cache: PathBuf,
    /// Truth configuration; defaults to the one stored in the cache.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    mu: Vec<f64>,
    /// Use only the first N modes per variable.
    #[arg(long)]
    basis_size: Option<usize>,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated basis sizes; an empty list gives an empty report.
    #[arg(long, default_value = "")]
    basis_list: BasisList,
    /// Test-set size (convergence) or number of timed queries (speedup).
    #[arg(long, default_value_t = 100)]
    test_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct BasisList(Vec<usize>);

impl std::str::FromStr for BasisList {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map(BasisList)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Domain(_) => 4,
        Error::Solver(_) | Error::NoConvergence { .. } | Error::Capacity(_) => 3,
        _ => 2,
    }
}

fn open_out(out: Option<&Path>) -> romocp::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_error(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn io_error(path: &Path, e: io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn write_report(report: &StudyReport, out: Option<&Path>, format: Format) -> romocp::Result<()> {
    let mut w = open_out(out)?;
    let name = out.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    let r = match format {
        Format::Csv => report.write_csv(&mut w),
        Format::Json => serde_json::to_writer_pretty(&mut w, &report.to_json())
            .map_err(io::Error::other)
            .and_then(|_| writeln!(w)),
    };
    r.and_then(|_| w.flush()).map_err(|e| io_error(&name, e))
}

fn load_cache(path: &Path, n: Option<usize>) -> romocp::Result<ReducedCache> {
    let cache = ReducedCache::load(path)?;
    match n {
        Some(n) => cache.truncate(n),
        None => Ok(cache),
    }
}

/// Truth configuration: the explicit file, else the one stored in the cache.
fn truth_config(cache: &ReducedCache, path: Option<&Path>) -> romocp::Result<ProblemConfig> {
    let config = match path {
        Some(p) => load_config(p)?,
        None => cache
            .config
            .clone()
            .ok_or_else(|| Error::Config("cache carries no configuration; pass --config".into()))?,
    };
    if config.problem != cache.kind {
        return Err(Error::Config(format!(
            "configuration is for {}, cache for {}",
            config.problem.id(),
            cache.kind.id()
        )));
    }
    Ok(config)
}

fn run(cli: Cli) -> romocp::Result<()> {
    match cli.command {
        Command::Offline { config, cache, out } => {
            let config = load_config(&config)?;
            let o = run_offline(&config)?;
            o.cache.save(&cache)?;
            info!("wrote cache {}", cache.display());
            if let Some(out) = out {
                o.snapshots.to_archive().save(&out)?;
                info!("wrote snapshots {}", out.display());
            }
            Ok(())
        }
        Command::Online {
            query,
            with_fields,
            out,
            format,
        } => {
            let cache = load_cache(&query.cache, query.basis_size)?;
            let rec = run_online(&cache, &query.mu, with_fields)?;
            let mut w = open_out(out.as_deref())?;
            let r = match format {
                Format::Json => serde_json::to_writer_pretty(&mut w, &rec)
                    .map_err(io::Error::other)
                    .and_then(|_| writeln!(w)),
                Format::Csv => {
                    let mu: Vec<String> = rec.mu.iter().map(f64::to_string).collect();
                    writeln!(
                        w,
                        "problem,mu,basis_size,reduced_dim,cost,iterations,residual,wall_seconds"
                    )
                    .and_then(|_| {
                        writeln!(
                            w,
                            "{},{},{},{},{:e},{},{:e},{:e}",
                            rec.problem,
                            mu.join(";"),
                            rec.basis_size,
                            rec.reduced_dim,
                            rec.cost,
                            rec.iterations,
                            rec.residual,
                            rec.wall_seconds
                        )
                    })
                }
            };
            r.and_then(|_| w.flush())
                .map_err(|e| Error::Config(e.to_string()))
        }
        Command::Convergence { study } => {
            let cache = ReducedCache::load(&study.cache)?;
            let config = truth_config(&cache, study.config.as_deref())?;
            let report = run_convergence(
                &cache,
                &config,
                &study.basis_list.0,
                study.test_size,
                study.seed,
            )?;
            write_report(&report, study.out.as_deref(), study.format)
        }
        Command::Speedup { study } => {
            let cache = ReducedCache::load(&study.cache)?;
            let config = truth_config(&cache, study.config.as_deref())?;
            let report = run_speedup(
                &cache,
                &config,
                &study.basis_list.0,
                study.test_size,
                study.seed,
            )?;
            write_report(&report, study.out.as_deref(), study.format)
        }
        Command::ComparePod {
            config,
            basis_list,
            test_size,
            seed,
            out,
            format,
        } => {
            let config = load_config(&config)?;
            let report = run_pod_comparison(&config, &basis_list.0, test_size, seed)?;
            write_report(&report, out.as_deref(), format)
        }
        Command::Export {
            query,
            no_truth,
            out,
        } => {
            let cache = load_cache(&query.cache, query.basis_size)?;
            let problem = build_problem(&truth_config(&cache, query.config.as_deref())?)?;
            let sol = solve_reduced(&cache, &query.mu)?;
            let z = reconstruct(&cache.basis, &sol.coefficients)?;
            let truth = if no_truth {
                None
            } else {
                Some(solve_truth(&problem, &query.mu)?)
            };
            export_fields(
                &problem,
                &z,
                truth.as_ref().map(|t| t.values.as_slice()),
                &out,
            )?;
            info!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Domain("[2]".into())), 4);
        assert_eq!(exit_code(&Error::Solver("x".into())), 3);
        assert_eq!(
            exit_code(&Error::NoConvergence {
                iterations: 1,
                residual: 1.0,
                history: vec![]
            }),
            3
        );
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code(&Error::Parse {
                line: 1,
                msg: "x".into()
            }),
            2
        );
    }

    #[test]
    fn parses_negative_mu() {
        let cli =
            Cli::try_parse_from(["romocp", "online", "--cache", "c", "--mu", "-1,1,0.5"]).unwrap();
        let Command::Online { query, .. } = cli.command else {
            panic!()
        };
        assert_eq!(query.mu, vec![-1.0, 1.0, 0.5]);
    }

    #[test]
    fn basis_lists() {
        assert_eq!("1, 5,20".parse::<BasisList>().unwrap().0, vec![1, 5, 20]);
        assert!("".parse::<BasisList>().unwrap().0.is_empty());
        assert!("1,x".parse::<BasisList>().is_err());
    }
}
