//! End-to-end tests of the `qnd` binary: exit codes, output formats,
//! configuration precedence and byte-identical reruns.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn qnd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qnd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            out.insert(
                entry.file_name().to_string_lossy().into_owned(),
                std::fs::read(entry.path()).unwrap(),
            );
        }
    }
    out
}

fn read_matrix_csv(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn transitions_with_zero_kappa_gives_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = qnd(&[
        "transitions",
        "--kappa",
        "0",
        "--format",
        "csv",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let t = read_matrix_csv(&dir.path().join("t_qnd.csv"));
    for (r, row) in t.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            assert_eq!(*v, if r == c { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn overlaps_in_commuting_limit_are_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = qnd(&[
        "overlaps",
        "--A",
        "0",
        "--q",
        "zero",
        "--format",
        "csv",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in ["overlap_down.csv", "overlap_up.csv", "overlap_empty.csv"] {
        let m = read_matrix_csv(&dir.path().join(name));
        for (r, row) in m.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((v - if r == c { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
    // summary reports the admixture
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("overlaps_summary.json")).unwrap(),
    )
    .unwrap();
    assert!(summary["max_flip_flop_admixture"].as_f64().unwrap() < 1e-12);
}

#[test]
fn default_overlaps_reports_small_flip_flop_admixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = qnd(&[
        "overlaps",
        "--format",
        "json",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("overlaps_summary.json")).unwrap(),
    )
    .unwrap();
    let adm = summary["max_flip_flop_admixture"].as_f64().unwrap();
    assert!(adm > 0.0 && adm < 1e-4, "admixture {adm}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "transitions",
        "--format",
        "both",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ];
    assert!(qnd(&args).status.success());
    let first = read_dir_bytes(dir.path());
    assert!(qnd(&args).status.success());
    let second = read_dir_bytes(dir.path());
    assert_eq!(first.len(), 10);
    assert_eq!(first, second);
}

#[test]
fn simulate_ar_matches_device_cycle_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = qnd(&[
        "simulate",
        "--protocol",
        "ar",
        "--n-shots",
        "2",
        "--n-trials",
        "20000",
        "--format",
        "csv",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("simulate_results.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    let cycles: f64 = fields[6].parse().unwrap();
    let rejection: f64 = fields[7].parse().unwrap();
    assert!((6.9..7.7).contains(&cycles), "cycles {cycles}");
    assert!((0.08..0.16).contains(&rejection), "rejection {rejection}");
}

#[test]
fn simulate_rr_range_produces_one_row_per_shot_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = qnd(&[
        "simulate",
        "--protocol",
        "rr",
        "--n-shots",
        "1..4",
        "--n-trials",
        "500",
        "--format",
        "csv",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("simulate_results.csv")).unwrap();
    assert_eq!(text.lines().count(), 5); // header + 4 rows
    for (k, line) in text.lines().skip(1).enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1], (k + 1).to_string());
        let cycles: f64 = fields[6].parse().unwrap();
        assert_eq!(cycles, 8.0 * (k + 1) as f64);
    }
}

#[test]
fn ancilla_sweep_emits_grid_with_optima() {
    let dir = tempfile::tempdir().unwrap();
    let out = qnd(&[
        "simulate",
        "--sweep-ancilla",
        "0.9,0.99",
        "--n-shots",
        "1..3",
        "--n-trials",
        "500",
        "--format",
        "csv",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    // header + 2 protocols x 2 fidelities x 3 shots
    assert_eq!(text.lines().count(), 13);
    let optima = text.lines().skip(1).filter(|l| l.ends_with(",1")).count();
    assert_eq!(optima, 4);
}

#[test]
fn extract_generator_of_identity_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("identity.csv");
    let mut text = String::from("4.5,3.5,2.5,1.5,0.5,-0.5,-1.5,-2.5,-3.5,-4.5\n");
    for r in 0..10 {
        let row: Vec<&str> = (0..10).map(|c| if r == c { "1" } else { "0" }).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(&input, text).unwrap();

    let out = qnd(&[
        "extract-generator",
        "--input",
        input.to_str().unwrap(),
        "--n-tunnel",
        "201",
        "--format",
        "csv",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let g = read_matrix_csv(&dir.path().join("generator.csv"));
    for row in g {
        for v in row {
            assert_eq!(v, 0.0);
        }
    }
}

#[test]
fn extract_generator_rejects_non_embeddable_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("swap.csv");
    std::fs::write(&input, "0.5,-0.5\n0,1\n1,0\n").unwrap();
    let out = qnd(&[
        "extract-generator",
        "--input",
        input.to_str().unwrap(),
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["exit_code"], 3);
    assert_eq!(err["error"]["kind"], "non-embeddable");
}

#[test]
fn synth_then_fit_recovers_the_preset_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let out = qnd(&[
        "synth-spectra",
        "--angles",
        "0..180:19",
        "--noise-sigma-khz",
        "0",
        "--format",
        "csv",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = qnd(&[
        "fit-quadrupole",
        "--input",
        dir.path().join("spectra.csv").to_str().unwrap(),
        "--format",
        "json",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap())
            .unwrap();
    let free = &fit["free_params_khz"];
    for (key, want) in [
        ("qxx", -10.57),
        ("qyy", 3.06),
        ("qyz", 5.16),
        ("qxz", 2.60),
        ("qxy", -30.48),
    ] {
        let got = free[key].as_f64().unwrap();
        assert!((got - want).abs() < 1e-6, "{key}: {got} vs {want}");
    }
    assert!(fit["residual_rms_khz"].as_f64().unwrap() < 1e-6);
    // full 3x3 tensor is present and traceless
    let t = fit["tensor_khz"].as_array().unwrap();
    let trace = t[0][0].as_f64().unwrap() + t[1][1].as_f64().unwrap() + t[2][2].as_f64().unwrap();
    assert!(trace.abs() < 1e-12);
}

#[test]
fn single_angle_fit_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(qnd(&[
        "synth-spectra",
        "--angles",
        "0",
        "--format",
        "csv",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ])
    .status
    .success());
    let out = qnd(&[
        "fit-quadrupole",
        "--input",
        dir.path().join("spectra.csv").to_str().unwrap(),
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "rank-deficient");
}

#[test]
fn unknown_config_keys_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = qnd(&[
        "overlaps",
        "--set",
        "a_khzz=1",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("unknown configuration key"));
}

#[test]
fn flags_override_file_and_file_overrides_preset() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "# test config\na_khz = 12345\nseed = 99\n").unwrap();

    let out = qnd(&[
        "transitions",
        "--config",
        conf.to_str().unwrap(),
        "--A",
        "54321",
        "--format",
        "csv",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let prov: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("transitions_provenance.json")).unwrap(),
    )
    .unwrap();
    // flag beat the file
    assert_eq!(prov["config"]["a_khz"], "54321");
    // file beat the preset
    assert_eq!(prov["config"]["seed"], "99");
    // preset filled the rest
    assert_eq!(prov["config"]["b0_tesla"], "1.395");
    assert_eq!(prov["artifact"]["name"], "qnd");
}

#[test]
fn ge73_preset_runs_both_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = qnd(&[
        "transitions",
        "--preset",
        "ge73",
        "--b0",
        "0.3,1.0",
        "--format",
        "csv",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let low = read_matrix_csv(&dir.path().join("t_qnd_b0_0.3.csv"));
    let high = read_matrix_csv(&dir.path().join("t_qnd_b0_1.csv"));
    for r in 0..10 {
        for c in 0..10 {
            if r != c {
                assert!(high[r][c] < low[r][c], "entry ({r},{c})");
            }
        }
    }
}

#[test]
fn in_out_order_flag_transposes_the_cycle_structure() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, order) in [(&a, "couple_decouple"), (&b, "decouple_couple")] {
        let out = qnd(&[
            "transitions",
            "--set",
            &format!("in_out_order={order}"),
            "--format",
            "csv",
            "--output-dir",
            dir.path().to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let forward = read_matrix_csv(&a.path().join("t_in_out.csv"));
    let reversed = read_matrix_csv(&b.path().join("t_in_out.csv"));
    assert_ne!(forward, reversed);
    // same per-event factors in either order: traces agree, entries differ
    let tr = |m: &Vec<Vec<f64>>| (0..8).map(|k| m[k][k]).sum::<f64>();
    assert!((tr(&forward) - tr(&reversed)).abs() < 1e-9);
}

#[test]
fn extract_generator_round_trips_a_synthetic_compounded_input() {
    // forward-compound a known two-band generator, then invert it
    let d = 10;
    let mut g = vec![vec![0.0; d]; d];
    for (i, row) in g.iter_mut().enumerate() {
        for j in 0..d {
            if i != j {
                row[j] = 2e-5 / (1 + i.abs_diff(j) * i.abs_diff(j)) as f64;
            }
        }
    }
    for j in 0..d {
        let s: f64 = (0..d).filter(|&i| i != j).map(|i| g[i][j]).sum();
        g[j][j] = -s;
    }
    // T = exp(201 G) via scaling and squaring of (I + G 201 / 2^k)^(2^k)
    let n = 1 << 20;
    let mut t = vec![vec![0.0; d]; d];
    for (i, row) in t.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { 1.0 } else { 0.0 } + g[i][j] * 201.0 / n as f64;
        }
    }
    for _ in 0..20 {
        let mut sq = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                sq[i][j] = (0..d).map(|k| t[i][k] * t[k][j]).sum();
            }
        }
        t = sq;
    }

    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("compounded.csv");
    let labels: Vec<String> = (0..d).map(|k| (4.5 - k as f64).to_string()).collect();
    let mut text = labels.join(",");
    text.push('\n');
    for row in &t {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(&input, text).unwrap();

    let out = qnd(&[
        "extract-generator",
        "--input",
        input.to_str().unwrap(),
        "--n-tunnel",
        "201",
        "--format",
        "csv",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let recovered = read_matrix_csv(&dir.path().join("generator.csv"));
    for i in 0..d {
        for j in 0..d {
            assert!(
                (recovered[i][j] - g[i][j]).abs() < 1e-7,
                "({i},{j}): {} vs {}",
                recovered[i][j],
                g[i][j]
            );
        }
    }
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("extract_generator_summary.json")).unwrap(),
    )
    .unwrap();
    assert!(summary["round_trip_residual"].as_f64().unwrap() < 1e-6);
    assert_eq!(summary["regularization_warning"], false);
}
