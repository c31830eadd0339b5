use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use romocp::archive::Archive;
use serde_json::Value;

fn romocp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_romocp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small pollutant cache with N = M = 4; returns (config, cache, snapshots).
fn pollutant_cache(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let config = write_config(
        dir,
        "p.json",
        r#"{"problem": "pollutant", "mesh": {"kind": "generated", "cells": 10},
            "sampling": {"distribution": "uniform", "size": 4, "seed": 3}, "basis_size": 4}"#,
    );
    let (cache, snaps) = (dir.join("c.bin"), dir.join("s.bin"));
    let o = romocp(&[
        "offline",
        "--config",
        s(&config),
        "--cache",
        s(&cache),
        "--out",
        s(&snaps),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (config, cache, snaps)
}

#[test]
fn online_reproduces_training_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cache, snaps) = pollutant_cache(dir.path());
    let a = Archive::load(&snaps).unwrap();
    assert_eq!(a.kind, "snapshots");
    let params = a.meta["params"].as_array().unwrap();
    let mu: Vec<f64> = params[2]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let mu_arg = mu
        .iter()
        .map(|m| format!("{m:e}"))
        .collect::<Vec<_>>()
        .join(",");
    let o = romocp(&[
        "online",
        "--cache",
        s(&cache),
        "--mu",
        &mu_arg,
        "--with-fields",
    ]);
    assert_eq!(code(&o), 0);
    let rec: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rec["reduced_dim"], 17);
    let z: Vec<f64> = rec["values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();

    let mut offset = 0;
    for name in ["y", "u", "p"] {
        let (shape, data) = a.get(&format!("snapshots/{name}")).unwrap();
        let dim = shape[1];
        let snap = &data[2 * dim..3 * dim];
        let rec = &z[offset..offset + dim];
        let scale = snap.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = snap
            .iter()
            .zip(rec)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-8 * scale, "{name}: {err:e} vs {scale:e}");
        offset += dim;
    }
    assert_eq!(offset, z.len());
}

#[test]
fn single_snapshot_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "m1.json",
        r#"{"problem": "qg-linear", "mesh": {"kind": "generated", "cells": 6},
            "sampling": {"distribution": "log-uniform", "size": 1, "seed": 1}, "basis_size": 3}"#,
    );
    let cache = dir.path().join("c.bin");
    assert_eq!(
        code(&romocp(&[
            "offline",
            "--config",
            s(&config),
            "--cache",
            s(&cache)
        ])),
        0
    );
    let o = romocp(&[
        "online",
        "--cache",
        s(&cache),
        "--mu",
        "0.01,0.01",
        "--format",
        "csv",
    ]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "qg-linear");
    assert_eq!(row[2], "1");
    assert_eq!(row[3], "9");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (config, cache, _) = pollutant_cache(dir.path());

    let o = romocp(&["online", "--cache", s(&cache), "--mu", "2,0,0"]);
    assert_eq!(code(&o), 4);
    let o = romocp(&["online", "--cache", s(&cache), "--mu", "1,0"]);
    assert_eq!(code(&o), 4);

    let bad = write_config(
        dir.path(),
        "bad.json",
        r#"{"problem": "pollutant", "alpha": -1}"#,
    );
    assert_eq!(
        code(&romocp(&[
            "offline",
            "--config",
            s(&bad),
            "--cache",
            s(&cache)
        ])),
        2
    );
    let missing = dir.path().join("missing.json");
    assert_eq!(
        code(&romocp(&[
            "offline",
            "--config",
            s(&missing),
            "--cache",
            s(&cache)
        ])),
        2
    );
    assert_eq!(
        code(&romocp(&["online", "--cache", s(&config), "--mu", "1,0,0"])),
        2
    );
    assert_eq!(
        code(&romocp(&[
            "convergence",
            "--cache",
            s(&cache),
            "--basis-list",
            "9"
        ])),
        3
    );

    let stiff = write_config(
        dir.path(),
        "nl.json",
        r#"{"problem": "qg-nonlinear", "mesh": {"kind": "generated", "cells": 6},
            "sampling": {"distribution": "log-uniform", "size": 2, "seed": 1},
            "newton": {"max_iterations": 0, "abs_tol": 1e-30, "rel_tol": 1e-30}}"#,
    );
    assert_eq!(
        code(&romocp(&[
            "offline",
            "--config",
            s(&stiff),
            "--cache",
            s(&cache)
        ])),
        3
    );
}

#[test]
fn studies_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let (config, cache, _) = pollutant_cache(dir.path());

    let o = romocp(&[
        "convergence",
        "--cache",
        s(&cache),
        "--basis-list",
        "",
        "--test-size",
        "3",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 1);

    let report = dir.path().join("conv.json");
    let args = [
        "convergence",
        "--cache",
        s(&cache),
        "--basis-list",
        "1,4",
        "--test-size",
        "3",
        "--seed",
        "5",
    ];
    let o = romocp(&[&args[..], &["--format", "json", "--out", s(&report)]].concat());
    assert_eq!(code(&o), 0);
    let rows: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["reduced_dim"], 17);
    assert_eq!(rows[1]["seed"], 5);
    assert!(rows[1]["max_sum"].as_f64().unwrap() < rows[0]["max_sum"].as_f64().unwrap());
    let again = romocp(&[&args[..], &["--format", "json"]].concat());
    let second: Value = serde_json::from_str(&stdout(&again)).unwrap();
    assert_eq!(&second.as_array().unwrap()[..], &rows[..]);

    let o = romocp(&[
        "speedup",
        "--cache",
        s(&cache),
        "--basis-list",
        "4",
        "--test-size",
        "0",
        "--format",
        "json",
    ]);
    assert_eq!(code(&o), 0);
    let rows: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(rows[0]["speedup"].is_null());
    assert_eq!(rows[0]["truth_dim"], 201);

    let o = romocp(&[
        "compare-pod",
        "--config",
        s(&config),
        "--basis-list",
        "1",
        "--test-size",
        "2",
    ]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.starts_with("problem,mesh_vertices,truth_dim,seed,n,partitioned_max_sum"));
    assert_eq!(out.lines().count(), 2);

    let vtk = dir.path().join("f.vtk");
    let o = romocp(&[
        "export",
        "--cache",
        s(&cache),
        "--mu",
        "0.75,-0.5,0.5",
        "--out",
        s(&vtk),
    ]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&vtk).unwrap();
    assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
    for name in ["y", "y_error", "p", "p_error"] {
        assert!(
            text.contains(&format!("SCALARS {name} double 1\n")),
            "{name}"
        );
    }
    assert!(!text.contains("SCALARS u "));
}
