mod common;

use common::*;
use romocp::archive::Archive;
use romocp::pod::SnapshotSet;
use romocp::problems::{build_problem, sample_parameters, ProblemKind};
use romocp::rom::*;
use romocp::study::*;
use romocp::truth::solve_truth;
use romocp::Error;

#[test]
fn snapshot_archive_round_trip() {
    let c = config(ProblemKind::QgLinear, 6, 3, 2);
    let p = build_problem(&c).unwrap();
    let params = sample_parameters(&p.parameter_box, &c.sampling()).unwrap();
    let s = train_snapshots(&p, &params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bin");
    s.to_archive().save(&path).unwrap();
    let back = SnapshotSet::from_archive(&Archive::load(&path).unwrap(), &p).unwrap();
    assert_eq!(back.snapshots, s.snapshots);
    assert_eq!(back.params, s.params);
    assert_eq!(back.names, s.names);

    let other = build_problem(&config(ProblemKind::QgLinear, 5, 1, 1)).unwrap();
    assert!(SnapshotSet::from_archive(&Archive::load(&path).unwrap(), &other).is_err());
}

#[test]
fn cache_round_trip_and_kind_check() {
    let o = run_offline(&config(ProblemKind::QgNonlinear, 6, 4, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    o.cache.save(&path).unwrap();
    let back = ReducedCache::load(&path).unwrap();
    assert_eq!(back, o.cache);
    let mu = [0.01, 0.01, 1e-3];
    assert_eq!(
        solve_reduced(&back, &mu).unwrap(),
        solve_reduced(&o.cache, &mu).unwrap()
    );

    let snaps = dir.path().join("s.bin");
    o.snapshots.to_archive().save(&snaps).unwrap();
    assert!(matches!(ReducedCache::load(&snaps), Err(Error::Archive(_))));
}

#[test]
fn single_snapshot_gives_rank_one_bases() {
    let o = run_offline(&config(ProblemKind::Pollutant, 10, 1, 5)).unwrap();
    assert_eq!(o.cache.basis_size, 1);
    assert_eq!(o.cache.basis.reduced_dim(), 5);
    for pod in o.pods.iter().filter(|b| !b.passthrough) {
        assert_eq!(pod.len(), 1);
        assert!(pod.rank_deficient || pod.eigenvalues.len() == 1);
    }
    let mu = o.snapshots.params[0].clone();
    let sol = solve_reduced(&o.cache, &mu).unwrap();
    let truth = solve_truth(&o.problem, &mu).unwrap();
    assert!(rel(sol.cost, truth.cost) <= 1e-10);
}

#[test]
fn truncation_equals_a_smaller_build() {
    let c = config(ProblemKind::Pollutant, 10, 8, 6);
    let o = run_offline(&c).unwrap();
    let (_, small) = build_cache(&o.problem, &o.snapshots, 3).unwrap();
    let cut = o.cache.truncate(3).unwrap();
    assert_eq!(cut.basis.reduced_dim(), small.basis.reduced_dim());
    let d = (cut.basis.x_matrix() - small.basis.x_matrix()).amax();
    assert!(d <= 1e-10, "{d:e}");
    let mu = [0.7, 0.2, -0.4];
    assert!(
        rel(
            solve_reduced(&cut, &mu).unwrap().cost,
            solve_reduced(&small, &mu).unwrap().cost
        ) <= 1e-10
    );
    assert!(matches!(o.cache.truncate(7), Err(Error::Capacity(_))));
    assert!(matches!(o.cache.truncate(0), Err(Error::Argument(_))));
}

#[test]
fn structure_of_reduced_systems() {
    let o = run_offline(&config(ProblemKind::Pollutant, 10, 6, 5)).unwrap();
    for n in 1..=5 {
        let c = o.cache.truncate(n).unwrap();
        assert_eq!(c.basis.reduced_dim(), 4 * n + 1);
        assert_eq!(c.kkt_matrix(&[1.0, 0.0, 0.0]).nrows(), 4 * n + 1);
    }
    let o = run_offline(&config(ProblemKind::QgLinear, 6, 6, 5)).unwrap();
    for n in 1..=5 {
        assert_eq!(o.cache.truncate(n).unwrap().basis.reduced_dim(), 9 * n);
    }
}

#[test]
fn reduced_solves_check_the_box() {
    let o = run_offline(&config(ProblemKind::QgLinear, 6, 2, 2)).unwrap();
    assert!(matches!(
        solve_reduced(&o.cache, &[2.0, 0.5]),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        solve_reduced(&o.cache, &[0.5]),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        run_online(&o.cache, &[0.0, 0.5], false),
        Err(Error::Domain(_))
    ));
}

#[test]
fn training_solutions_are_reproduced() {
    for kind in [ProblemKind::Pollutant, ProblemKind::QgLinear] {
        let o = run_offline(&config(kind, 10, 6, 6)).unwrap();
        for (m, mu) in o.snapshots.params.iter().enumerate() {
            let sol = solve_reduced(&o.cache, mu).unwrap();
            let z = reconstruct(&o.cache.basis, &sol.coefficients).unwrap();
            let l = &o.problem.layout;
            for f in 0..l.fields().len() {
                let s = &o.snapshots.snapshots[f][m];
                let ip = &o.snapshots.inner_products[f];
                let d: Vec<f64> = z[l.range(f)].iter().zip(s).map(|(a, b)| a - b).collect();
                let e = ip.quad_form(&d).sqrt();
                assert!(
                    e <= 1e-8 * ip.quad_form(s).sqrt(),
                    "{kind:?} field {f}: {e:e}"
                );
            }
        }
    }
}

/// With one training snapshot both pipelines span the same directions, so
/// their error curves coincide.
#[test]
fn pod_comparison_degenerates_with_one_snapshot() {
    let c = config(ProblemKind::Pollutant, 10, 1, 1);
    let r = run_pod_comparison(&c, &[1], 5, 2).unwrap();
    let (a, b) = (
        r.column_f64("partitioned_max_sum").unwrap(),
        r.column_f64("monolithic_max_sum").unwrap(),
    );
    assert!(
        (a[0] - b[0]).abs() <= 1e-10 * a[0].max(1e-300),
        "{a:?} vs {b:?}"
    );
    let (a, b) = (
        r.column_f64("partitioned_mean_sum").unwrap(),
        r.column_f64("monolithic_mean_sum").unwrap(),
    );
    assert!((a[0] - b[0]).abs() <= 1e-10 * a[0]);
}

#[test]
fn reports_are_reproducible_and_self_describing() {
    let c = config(ProblemKind::Pollutant, 10, 6, 4);
    let o = run_offline(&c).unwrap();
    let one = run_convergence(&o.cache, &c, &[1, 2, 4], 6, 9).unwrap();
    let two = run_convergence(&o.cache, &c, &[1, 2, 4], 6, 9).unwrap();
    assert_eq!(one.rows, two.rows);
    assert_eq!(one.column_f64("seed").unwrap(), vec![9.0; 3]);
    assert_eq!(one.column_f64("truth_dim").unwrap(), vec![201.0; 3]);
    let max = one.column_f64("max_sum").unwrap();
    assert!(max[2] < max[0]);

    let empty = run_convergence(&o.cache, &c, &[], 6, 9).unwrap();
    assert!(empty.rows.is_empty());
    assert!(matches!(
        run_convergence(&o.cache, &c, &[5], 6, 9),
        Err(Error::Capacity(_))
    ));

    let sp = run_speedup(&o.cache, &c, &[2], 0, 1).unwrap();
    assert!(sp.column("speedup").unwrap()[0].is_null());
    let sp = run_speedup(&o.cache, &c, &[2], 2, 1).unwrap();
    let s = sp.column_f64("speedup").unwrap()[0];
    let (t, rd) = (
        sp.column_f64("truth_seconds").unwrap()[0],
        sp.column_f64("reduced_seconds").unwrap()[0],
    );
    assert!((s - t / rd).abs() <= 1e-12 * s);
    assert_eq!(sp.column_f64("reduced_dim").unwrap()[0], 9.0);

    let mut csv = Vec::new();
    one.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(
        text.lines().next().unwrap().split(',').count(),
        one.columns.len()
    );
    let json = one.to_json();
    assert_eq!(json[0]["study"], "convergence");
    assert_eq!(json[2]["n"], 4);
}

#[test]
fn export_writes_vtk() {
    let p = build_problem(&config(ProblemKind::QgLinear, 4, 1, 1)).unwrap();
    let mut out = Vec::new();
    let zero = vec![0.0; p.layout.total()];
    write_vtk(&p.mesh, &vertex_fields(&p, &zero, None).unwrap(), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with(
        "# vtk DataFile Version 3.0\nromocp fields\nASCII\nDATASET UNSTRUCTURED_GRID\n"
    ));
    assert!(text.contains("POINTS 25 double\n"));
    assert!(text.contains("CELLS 32 128\n"));
    let data = &text[text.find("POINT_DATA").unwrap()..];
    let values: Vec<f64> = data.lines().filter_map(|l| l.parse::<f64>().ok()).collect();
    assert_eq!(values.len(), 5 * 25);
    assert!(values.iter().all(|&v| v == 0.0));
}

#[test]
fn exported_error_field_matches_the_difference() {
    let c = config(ProblemKind::Pollutant, 10, 4, 2);
    let o = run_offline(&c).unwrap();
    let mu = [0.8, -0.3, 0.6];
    let z = reconstruct(
        &o.cache.basis,
        &solve_reduced(&o.cache, &mu).unwrap().coefficients,
    )
    .unwrap();
    let truth = solve_truth(&o.problem, &mu).unwrap();
    let fields = vertex_fields(&o.problem, &z, Some(&truth.values)).unwrap();
    let names: Vec<&str> = fields.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["y", "y_error", "p", "p_error"]);
    let l = &o.problem.layout;
    let want = l
        .range(0)
        .map(|i| (z[i] - truth.values[i]).abs())
        .fold(0.0, f64::max);
    let got = fields[1].1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert_eq!(got, want);
    assert!(got > 0.0);

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no/such/dir/f.vtk");
    assert!(matches!(
        export_fields(&o.problem, &z, None, &missing),
        Err(Error::Io { .. })
    ));
}
