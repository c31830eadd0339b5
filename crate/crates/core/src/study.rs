//! Offline/online drivers and the batch studies: error convergence,
//! speedup, partitioned against monolithic POD, and field export.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::pod::{pod_monolithic, pod_partitioned, PodBasis, SnapshotSet};
use crate::problems::{
    build_problem, sample_parameters, Distribution, ProblemConfig, ProblemDef, SamplingPlan,
};
use crate::rom::{self, project_affine, reconstruct, rom_error, AggregatedBasis, ReducedCache};
use crate::truth::{solve_truth, OcpSolution};

/// Truth solves at every parameter, in parallel. The first failure aborts
/// with the offending parameter in the message.
pub fn solve_many(problem: &ProblemDef, params: &[Vec<f64>]) -> Result<Vec<OcpSolution>> {
    params
        .par_iter()
        .map(|mu| {
            solve_truth(problem, mu).map_err(|e| match e {
                Error::NoConvergence { .. } | Error::Solver(_) => {
                    Error::Solver(format!("truth solve at μ={mu:?}: {e}"))
                }
                other => other,
            })
        })
        .collect()
}

/// Snapshots of the truth solutions at `params`.
pub fn train_snapshots(problem: &ProblemDef, params: &[Vec<f64>]) -> Result<SnapshotSet> {
    SnapshotSet::from_solutions(problem, &solve_many(problem, params)?)
}

fn log_decay(snapshots: &SnapshotSet, pods: &[PodBasis]) {
    for (name, pod) in snapshots.names.iter().zip(pods) {
        let l1 = pod.eigenvalues.first().copied().unwrap_or(0.0);
        let decay: Vec<String> = pod
            .eigenvalues
            .iter()
            .step_by(5)
            .map(|l| format!("{:.1e}", if l1 > 0.0 { l / l1 } else { 0.0 }))
            .collect();
        info!(
            "POD {name}: {} modes, λ_n/λ_1 every 5th: {}",
            pod.len(),
            decay.join(" ")
        );
    }
}

/// Partitioned POD, aggregation and projection with `n` modes per variable.
pub fn build_cache(
    problem: &ProblemDef,
    snapshots: &SnapshotSet,
    n: usize,
) -> Result<(Vec<PodBasis>, ReducedCache)> {
    let n = n.min(snapshots.len());
    let pods = pod_partitioned(snapshots, n)?;
    log_decay(snapshots, &pods);
    let usable = pods
        .iter()
        .filter(|p| !p.passthrough)
        .map(PodBasis::len)
        .min()
        .unwrap_or(n);
    if usable == 0 {
        return Err(Error::Capacity(
            "snapshots carry no energy in some variable".into(),
        ));
    }
    if usable < n {
        warn!("snapshots span only {usable} directions above roundoff; using {usable} modes instead of {n}");
    }
    let n = usable;
    let basis = AggregatedBasis::aggregate_spaces(&pods, &problem.layout, &problem.norms, n)?;
    Ok((pods, project_affine(problem, basis)?))
}

pub struct OfflineOutput {
    pub problem: ProblemDef,
    pub snapshots: SnapshotSet,
    pub pods: Vec<PodBasis>,
    pub cache: ReducedCache,
}

/// Samples the training set, solves, compresses and projects.
pub fn run_offline(config: &ProblemConfig) -> Result<OfflineOutput> {
    config.validate()?;
    let problem = build_problem(config)?;
    let params = sample_parameters(&problem.parameter_box, &config.sampling())?;
    let t = Instant::now();
    let snapshots = train_snapshots(&problem, &params)?;
    info!("{} truth solves in {:.2?}", params.len(), t.elapsed());
    let (pods, mut cache) = build_cache(&problem, &snapshots, config.basis_size())?;
    cache.config = Some(config.clone());
    info!("reduced dimension {}", cache.basis.reduced_dim());
    Ok(OfflineOutput {
        problem,
        snapshots,
        pods,
        cache,
    })
}

/// Result of one online query.
#[derive(Clone, Debug, Serialize)]
pub struct OnlineRecord {
    pub problem: String,
    pub mu: Vec<f64>,
    pub basis_size: usize,
    pub reduced_dim: usize,
    pub cost: f64,
    pub iterations: usize,
    pub residual: f64,
    pub wall_seconds: f64,
    /// Reconstructed full-order coefficients, on request.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

pub fn run_online(cache: &ReducedCache, mu: &[f64], with_fields: bool) -> Result<OnlineRecord> {
    let t = Instant::now();
    let sol = rom::solve_reduced(cache, mu)?;
    let wall = t.elapsed().as_secs_f64();
    let values = if with_fields {
        Some(reconstruct(&cache.basis, &sol.coefficients)?)
    } else {
        None
    };
    Ok(OnlineRecord {
        problem: cache.kind.id().to_string(),
        mu: mu.to_vec(),
        basis_size: cache.basis_size,
        reduced_dim: cache.basis.reduced_dim(),
        cost: sol.cost,
        iterations: sol.iterations,
        residual: *sol.residuals.last().unwrap_or(&0.0),
        wall_seconds: wall,
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Convergence,
    Speedup,
    PodComparison,
}

/// Tabular study output. Every row repeats the run metadata so a single row
/// is self-describing. Columns ending in `_seconds` and `speedup` are wall
/// times and differ between runs; all others are reproducible.
#[derive(Clone, Debug)]
pub struct StudyReport {
    pub kind: StudyKind,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl StudyReport {
    fn new(kind: StudyKind, columns: Vec<String>) -> Self {
        StudyReport {
            kind,
            columns,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Value>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[j]).collect())
    }

    /// Numeric column, `NaN` where absent.
    pub fn column_f64(&self, name: &str) -> Option<Vec<f64>> {
        self.column(name).map(|c| {
            c.into_iter()
                .map(|v| v.as_f64().unwrap_or(f64::NAN))
                .collect()
        })
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let mut m = Map::new();
                    m.insert(
                        "study".into(),
                        serde_json::to_value(self.kind).expect("unit enum"),
                    );
                    for (c, v) in self.columns.iter().zip(r) {
                        m.insert(c.clone(), v.clone());
                    }
                    Value::Object(m)
                })
                .collect(),
        )
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for r in &self.rows {
            let cells: Vec<String> = r
                .iter()
                .map(|v| match v {
                    Value::Null => String::new(),
                    Value::String(s) => s.clone(),
                    Value::Array(a) => a
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(";"),
                    other => other.to_string(),
                })
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn mu_value(mu: &[f64]) -> Value {
    Value::Array(mu.iter().map(|&m| num(m)).collect())
}

/// Random test parameters; log-scaled boxes are sampled log-uniformly.
pub fn test_parameters(
    config: &ProblemConfig,
    problem: &ProblemDef,
    size: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if size == 0 {
        return Ok(Vec::new());
    }
    let distribution = match config.sampling().distribution {
        Distribution::Uniform => Distribution::Uniform,
        _ => Distribution::LogUniform,
    };
    sample_parameters(
        &problem.parameter_box,
        &SamplingPlan {
            distribution,
            size,
            seed,
        },
    )
}

struct ErrorTable {
    /// `errors[i][f]` for test point `i`, field `f`.
    errors: Vec<Vec<f64>>,
    cost_rel: Vec<f64>,
}

fn evaluate(
    cache: &ReducedCache,
    problem: &ProblemDef,
    truth: &[OcpSolution],
) -> Result<ErrorTable> {
    let rows: Vec<(Vec<f64>, f64)> = truth
        .iter()
        .map(|t| {
            let sol = rom::solve_reduced(cache, &t.mu)?;
            let rec = reconstruct(&cache.basis, &sol.coefficients)?;
            let e = rom_error(&problem.layout, &problem.norms, &t.values, &rec)?;
            Ok((e, (sol.cost - t.cost).abs() / t.cost.abs()))
        })
        .collect::<Result<_>>()?;
    let (errors, cost_rel) = rows.into_iter().unzip();
    Ok(ErrorTable { errors, cost_rel })
}

fn metadata_columns() -> Vec<String> {
    ["problem", "mesh_vertices", "truth_dim", "seed"]
        .map(String::from)
        .to_vec()
}

fn metadata(problem: &ProblemDef, seed: u64) -> Vec<Value> {
    vec![
        Value::from(problem.kind.id()),
        Value::from(problem.mesh.num_vertices()),
        Value::from(problem.layout.total()),
        Value::from(seed),
    ]
}

fn check_basis_list(cache: &ReducedCache, ns: &[usize]) -> Result<()> {
    if let Some(&n) = ns.iter().find(|&&n| n == 0 || n > cache.basis_size) {
        return Err(Error::Capacity(format!(
            "basis size {n} requested from a cache holding 1..={}",
            cache.basis_size
        )));
    }
    Ok(())
}

/// Error against truth on a random test set, per basis size: max and mean
/// per field, summed over fields, and the worst relative cost error.
pub fn run_convergence(
    cache: &ReducedCache,
    config: &ProblemConfig,
    ns: &[usize],
    test_size: usize,
    seed: u64,
) -> Result<StudyReport> {
    check_basis_list(cache, ns)?;
    let problem = build_problem(config)?;
    let params = test_parameters(config, &problem, test_size, seed)?;
    let truth = if ns.is_empty() {
        Vec::new()
    } else {
        solve_many(&problem, &params)?
    };
    convergence_with_truth(cache, &problem, &truth, ns, seed)
}

/// [`run_convergence`] with precomputed truth solutions.
pub fn convergence_with_truth(
    cache: &ReducedCache,
    problem: &ProblemDef,
    truth: &[OcpSolution],
    ns: &[usize],
    seed: u64,
) -> Result<StudyReport> {
    check_basis_list(cache, ns)?;
    let names = problem.field_names();
    let mut columns = metadata_columns();
    columns.extend(["n", "reduced_dim", "test_size"].map(String::from));
    for n in &names {
        columns.push(format!("max_{n}"));
        columns.push(format!("mean_{n}"));
    }
    columns.extend(["max_sum", "mean_sum", "worst_mu", "max_cost_rel"].map(String::from));
    let mut report = StudyReport::new(StudyKind::Convergence, columns);
    for &n in ns {
        let c = cache.truncate(n)?;
        let table = evaluate(&c, problem, truth)?;
        let mut row = metadata(problem, seed);
        row.extend([
            Value::from(n),
            Value::from(c.basis.reduced_dim()),
            Value::from(truth.len()),
        ]);
        let count = table.errors.len().max(1) as f64;
        for f in 0..names.len() {
            let col = table.errors.iter().map(|e| e[f]);
            row.push(num(col.clone().fold(0.0, f64::max)));
            row.push(num(col.sum::<f64>() / count));
        }
        let sums: Vec<f64> = table.errors.iter().map(|e| e.iter().sum()).collect();
        let (worst, max_sum) = sums
            .iter()
            .enumerate()
            .fold((None, 0.0), |(wi, wv), (i, &v)| {
                if v > wv || wi.is_none() {
                    (Some(i), v)
                } else {
                    (wi, wv)
                }
            });
        row.push(num(max_sum));
        row.push(num(sums.iter().sum::<f64>() / count));
        row.push(worst.map_or(Value::Null, |i| mu_value(&truth[i].mu)));
        row.push(num(table.cost_rel.iter().copied().fold(0.0, f64::max)));
        report.push(row);
    }
    Ok(report)
}

/// Mean truth and reduced wall time over the same `repetitions` random
/// parameters; solves run one at a time.
pub fn run_speedup(
    cache: &ReducedCache,
    config: &ProblemConfig,
    ns: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<StudyReport> {
    check_basis_list(cache, ns)?;
    let problem = build_problem(config)?;
    let params = test_parameters(config, &problem, repetitions, seed)?;
    let mut columns = metadata_columns();
    columns.extend(
        [
            "n",
            "reduced_dim",
            "repetitions",
            "truth_seconds",
            "reduced_seconds",
            "speedup",
        ]
        .map(String::from),
    );
    let mut report = StudyReport::new(StudyKind::Speedup, columns);
    let truth_mean = if params.is_empty() {
        None
    } else {
        let t = Instant::now();
        for mu in &params {
            solve_truth(&problem, mu)?;
        }
        Some(t.elapsed().as_secs_f64() / params.len() as f64)
    };
    for &n in ns {
        let c = cache.truncate(n)?;
        let reduced_mean = if params.is_empty() {
            None
        } else {
            let t = Instant::now();
            for mu in &params {
                rom::solve_reduced(&c, mu)?;
            }
            Some(t.elapsed().as_secs_f64() / params.len() as f64)
        };
        let mut row = metadata(&problem, seed);
        row.extend([
            Value::from(n),
            Value::from(c.basis.reduced_dim()),
            Value::from(params.len()),
        ]);
        let opt = |x: Option<f64>| x.map_or(Value::Null, num);
        row.push(opt(truth_mean));
        row.push(opt(reduced_mean));
        row.push(opt(truth_mean.zip(reduced_mean).map(|(a, b)| a / b)));
        report.push(row);
    }
    Ok(report)
}

/// Reduced caches from the same snapshots: partitioned POD (per variable)
/// and monolithic POD (stacked variables).
pub fn comparison_caches(
    problem: &ProblemDef,
    snapshots: &SnapshotSet,
    n: usize,
) -> Result<(ReducedCache, ReducedCache)> {
    let (_, partitioned) = build_cache(problem, snapshots, n)?;
    let mono = pod_monolithic(snapshots, &problem.layout, n)?;
    let basis = AggregatedBasis::from_monolithic(
        &mono,
        &problem.layout,
        &problem.norms,
        n.min(mono.len()),
    )?;
    Ok((partitioned, project_affine(problem, basis)?))
}

/// Summed test errors of the partitioned and monolithic pipelines.
pub fn run_pod_comparison(
    config: &ProblemConfig,
    ns: &[usize],
    test_size: usize,
    seed: u64,
) -> Result<StudyReport> {
    config.validate()?;
    let problem = build_problem(config)?;
    let mut columns = metadata_columns();
    columns.extend(
        [
            "n",
            "partitioned_max_sum",
            "monolithic_max_sum",
            "partitioned_mean_sum",
            "monolithic_mean_sum",
        ]
        .map(String::from),
    );
    let mut report = StudyReport::new(StudyKind::PodComparison, columns);
    let Some(&nmax) = ns.iter().max() else {
        return Ok(report);
    };
    let train = sample_parameters(&problem.parameter_box, &config.sampling())?;
    let snapshots = train_snapshots(&problem, &train)?;
    let (part, mono) = comparison_caches(&problem, &snapshots, nmax)?;
    let truth = solve_many(
        &problem,
        &test_parameters(config, &problem, test_size, seed)?,
    )?;
    for &n in ns {
        let mut row = metadata(&problem, seed);
        row.push(Value::from(n));
        let mut sums = Vec::new();
        for cache in [&part, &mono] {
            let t = evaluate(&cache.truncate(n)?, &problem, &truth)?;
            let s: Vec<f64> = t.errors.iter().map(|e| e.iter().sum()).collect();
            let mean = s.iter().sum::<f64>() / s.len().max(1) as f64;
            sums.push((s.iter().copied().fold(0.0, f64::max), mean));
        }
        row.extend([
            num(sums[0].0),
            num(sums[1].0),
            num(sums[0].1),
            num(sums[1].1),
        ]);
        report.push(row);
    }
    Ok(report)
}

/// Writes named vertex fields on `mesh` as a legacy VTK ASCII unstructured grid.
pub fn write_vtk(
    mesh: &Mesh,
    fields: &[(String, Vec<f64>)],
    w: &mut impl Write,
) -> std::io::Result<()> {
    let (nv, nt) = (mesh.num_vertices(), mesh.num_triangles());
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "romocp fields")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nv} double")?;
    for p in mesh.vertices() {
        writeln!(w, "{:e} {:e} 0", p[0], p[1])?;
    }
    writeln!(w, "CELLS {nt} {}", 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "5")?;
    }
    writeln!(w, "POINT_DATA {nv}")?;
    for (name, values) in fields {
        assert_eq!(values.len(), nv, "field {name} is not a vertex field");
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in values {
            writeln!(w, "{v:e}")?;
        }
    }
    Ok(())
}

/// Vertex values of every field-valued unknown of `z`; with `truth`, also
/// the pointwise difference `z − truth` as `<name>_error`.
pub fn vertex_fields(
    problem: &ProblemDef,
    z: &[f64],
    truth: Option<&[f64]>,
) -> Result<Vec<(String, Vec<f64>)>> {
    let l = &problem.layout;
    if z.len() != l.total() || truth.is_some_and(|t| t.len() != l.total()) {
        return Err(Error::Usage(
            "field export needs full-length vectors".into(),
        ));
    }
    let mut out = Vec::new();
    for (f, info) in l.fields().iter().enumerate() {
        let Some(space) = problem.field_space(f) else {
            continue;
        };
        out.push((info.name.clone(), space.to_vertex_values(&z[l.range(f)])));
        if let Some(t) = truth {
            let d: Vec<f64> = l.range(f).map(|i| z[i] - t[i]).collect();
            out.push((format!("{}_error", info.name), space.to_vertex_values(&d)));
        }
    }
    Ok(out)
}

pub fn export_fields(
    problem: &ProblemDef,
    z: &[f64],
    truth: Option<&[f64]>,
    path: &Path,
) -> Result<()> {
    let fields = vertex_fields(problem, z, truth)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_vtk(&problem.mesh, &fields, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
