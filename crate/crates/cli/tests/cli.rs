use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use svgene::commands::{cmd_evaluate, cmd_fit, cmd_simulate, EvaluateArgs, FitArgs, SimulateArgs};
use svgene::io::{load_dataset, DatasetPaths, MTX_HEADER};
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_svgene"));
    cmd.env_remove("SVGENE_THREADS").env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 8x8 spots, 50 genes in one star sub-network, all informative.
fn toy(dir: &Path, seed: u64, mtx: bool) -> DatasetPaths {
    cmd_simulate(&SimulateArgs {
        scenario: "basic-star-linear-lo".into(),
        out: dir.to_path_buf(),
        seed,
        grid: Some((8, 8)),
        genes: Some(50),
        sv_subnets: None,
        mtx,
    })
    .unwrap()
}

fn fit_flags<'a>(paths: &'a DatasetPaths, out: &'a Path) -> Vec<&'a str> {
    vec![
        "fit",
        "--counts",
        s(&paths.counts),
        "--coords",
        s(&paths.coords),
        "--comps",
        s(&paths.comps),
        "--network",
        s(paths.network.as_ref().unwrap()),
        "--out",
        s(out),
    ]
}

fn short_fit(paths: &DatasetPaths, out: &Path, chains: usize) -> FitArgs {
    FitArgs {
        paths: paths.clone(),
        out: out.to_path_buf(),
        chains: Some(chains),
        iterations: Some(300),
        burn_in: Some(150),
        thin: Some(5),
        seed: Some(11),
        ..FitArgs::default()
    }
}

/// Data rows of a TSV output, without the run tag and header.
fn body(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split('\t').map(String::from).collect())
        .collect()
}

#[test]
fn default_fit_writes_every_output() {
    let dir = TempDir::new().unwrap();
    let paths = toy(&dir.path().join("data"), 1, false);
    let out = dir.path().join("fit");
    let res = run(&fit_flags(&paths, &out));
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for name in svgene::commands::FIT_OUTPUTS {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    let weights: f64 = body(&out.join("model_weights.tsv"))
        .iter()
        .map(|r| r[1].parse::<f64>().unwrap())
        .sum();
    assert!((weights - 1.0).abs() < 1e-5, "weights sum to {weights}");
    assert_eq!(body(&out.join("pip.tsv")).len(), 50);
    assert_eq!(body(&out.join("trace_summary.tsv")).len(), 25);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["chain_runs"].as_array().unwrap().len(), 25);
    assert_eq!(manifest["kernels"].as_array().unwrap().len(), 5);
    for line in fs::read_to_string(out.join("pip.tsv")).unwrap().split_inclusive('\n') {
        assert!(line.ends_with('\n') && !line.ends_with("\r\n"));
    }
}

#[test]
fn single_chain_consensus_is_that_chain() {
    let dir = TempDir::new().unwrap();
    let paths = toy(&dir.path().join("data"), 2, false);
    let res = cmd_fit(&short_fit(&paths, &dir.path().join("fit"), 1)).unwrap();
    assert_eq!(res.per_chain.len(), 1);
    assert_eq!(res.selected, res.per_chain[0].selection.genes);
    assert!(!res.selected.is_empty());
}

#[test]
fn identical_seeds_give_identical_pip_tables() {
    let dir = TempDir::new().unwrap();
    let paths = toy(&dir.path().join("data"), 3, false);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cmd_fit(&short_fit(&paths, &a, 2)).unwrap();
    cmd_fit(&FitArgs {
        threads: Some(2),
        ..short_fit(&paths, &b, 2)
    })
    .unwrap();
    assert_eq!(fs::read(a.join("pip.tsv")).unwrap(), fs::read(b.join("pip.tsv")).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[chain]\niterations = 40\nburn_in = 20\nthin = 2\n[hyper]\nbfdr_level = 0.2\n").unwrap();
    let args = FitArgs {
        config: Some(cfg),
        iterations: Some(60),
        ..FitArgs::default()
    };
    let (run_cfg, opts) = svgene::commands::resolve_fit_options(&args).unwrap();
    assert_eq!((opts.chain.iterations, opts.chain.burn_in, opts.chain.thin), (60, 20, 2));
    assert_eq!(run_cfg.hyper.bfdr_level, 0.2);
    assert_eq!(opts.chains, 5);
}

#[test]
fn unknown_gene_in_network_is_reported() {
    let dir = TempDir::new().unwrap();
    let paths = toy(&dir.path().join("data"), 4, false);
    let net = paths.network.clone().unwrap();
    let mut text = fs::read_to_string(&net).unwrap();
    text.push_str("g1\tnot_a_gene\n");
    fs::write(&net, text).unwrap();
    let res = run(&fit_flags(&paths, &dir.path().join("fit")));
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8(res.stderr).unwrap();
    let line = err.lines().find(|l| l.starts_with("error: ")).expect("error line");
    assert!(line.starts_with("error: UnknownGene: "), "{line}");
    assert!(line.contains("not_a_gene"));
}

#[test]
fn failures_print_one_category_line() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.tsv");
    let res = run(&[
        "fit", "--counts", s(&missing), "--coords", s(&missing), "--comps", s(&missing), "--out", s(dir.path()),
    ]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8(res.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: IoError: "), "{err}");

    let res = run(&["simulate", "basic-ring-linear-lo", "--out", s(dir.path())]);
    assert!(String::from_utf8(res.stderr).unwrap().starts_with("error: UnknownScenario: "));

    let res = bin()
        .env("SVGENE_THREADS", "zero")
        .args(["simulate", "m1", "--out", s(dir.path())])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0), "simulate ignores the thread setting");
}

#[test]
fn thread_variable_must_be_positive() {
    let dir = TempDir::new().unwrap();
    let paths = toy(&dir.path().join("data"), 5, false);
    let out = dir.path().join("fit");
    let mut flags = fit_flags(&paths, &out);
    flags.extend(["--threads", "2"]);
    let res = bin().env("SVGENE_THREADS", "0").args(&flags).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8(res.stderr).unwrap().starts_with("error: InvalidArgument: "));
}

#[test]
fn matrix_market_and_dense_load_identically() {
    let dir = TempDir::new().unwrap();
    let dense = load_dataset(&toy(&dir.path().join("dense"), 6, false)).unwrap();
    let paths = toy(&dir.path().join("mtx"), 6, true);
    assert!(paths.is_mtx());
    assert_eq!(load_dataset(&paths).unwrap(), dense);

    // Explicit zero entries carry no information.
    let text = fs::read_to_string(&paths.counts).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let size = lines.iter().position(|l| !l.starts_with('%')).unwrap();
    let dims: Vec<usize> = lines[size].split_whitespace().map(|v| v.parse().unwrap()).collect();
    let occupied: std::collections::HashSet<(usize, usize)> = lines[size + 1..]
        .iter()
        .map(|l| {
            let f: Vec<usize> = l.split_whitespace().take(2).map(|v| v.parse().unwrap()).collect();
            (f[0], f[1])
        })
        .collect();
    let free: Vec<(usize, usize)> = (1..=dims[0])
        .flat_map(|g| (1..=dims[1]).map(move |sp| (g, sp)))
        .filter(|c| !occupied.contains(c))
        .take(3)
        .collect();
    assert_eq!(free.len(), 3);
    for (g, sp) in &free {
        lines.push(format!("{g} {sp} 0"));
    }
    lines[size] = format!("{} {} {}", dims[0], dims[1], dims[2] + free.len());
    assert!(lines[0].eq_ignore_ascii_case(MTX_HEADER));
    fs::write(&paths.counts, lines.join("\n") + "\n").unwrap();
    assert_eq!(load_dataset(&paths).unwrap(), dense);
}

#[test]
fn simulated_presets_round_trip() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("full");
    let res = run(&["simulate", "basic-star-linear-lo", "--seed", "2", "--format", "mtx", "--out", s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let loaded = load_dataset(&DatasetPaths {
        counts: out.join("counts.mtx"),
        coords: out.join("coords.tsv"),
        comps: out.join("comps.tsv"),
        network: Some(out.join("network.tsv")),
        genes: None,
        spots: None,
    })
    .unwrap();
    assert_eq!((loaded.data.n_spots(), loaded.data.n_genes()), (1024, 5000));
    assert_eq!(loaded.duplicate_edges, 0);
    let sv = body(&out.join("truth.tsv")).iter().filter(|r| r[1] == "1").count();
    assert_eq!(sv, 500);

    let out = dir.path().join("m1");
    let paths = cmd_simulate(&SimulateArgs {
        scenario: "m1".into(),
        out: out.clone(),
        seed: 3,
        ..SimulateArgs::default()
    })
    .unwrap();
    let loaded = load_dataset(&paths).unwrap();
    assert_eq!(loaded.data.n_spots(), 600);
    assert_eq!(body(&out.join("truth.tsv")).iter().filter(|r| r[1] == "1").count(), 350);

    let out = dir.path().join("desk");
    let res = run(&[
        "simulate", "basic-scalefree-periodic-hi", "--grid", "16x16", "--p", "500", "--out", s(&out),
    ]);
    assert!(res.status.success());
    let loaded = load_dataset(&toy_paths(&out)).unwrap();
    assert_eq!((loaded.data.n_spots(), loaded.data.n_genes()), (256, 500));
}

fn toy_paths(dir: &Path) -> DatasetPaths {
    DatasetPaths {
        counts: dir.join("counts.tsv"),
        coords: dir.join("coords.tsv"),
        comps: dir.join("comps.tsv"),
        network: Some(dir.join("network.tsv")),
        genes: None,
        spots: None,
    }
}

/// Truth with genes g1..g20 of which g1..g10 are informative, and a
/// selection of ten genes with `hits` of them informative.
fn replicate(dir: &Path, hits: usize) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let mut truth = String::from("gene\tis_sv\tbeta1\tbeta2\n");
    for j in 1..=20 {
        truth.push_str(&format!("g{j}\t{}\t0\t0\n", u8::from(j <= 10)));
    }
    fs::write(dir.join("truth.tsv"), truth).unwrap();
    let mut sel = String::from("# run_id test\ngene\ttilde_pip\n");
    for j in (1..=hits).chain(11..=10 + (10 - hits)) {
        sel.push_str(&format!("g{j}\t0.99\n"));
    }
    fs::write(dir.join("selected.tsv"), sel).unwrap();
    dir.to_path_buf()
}

#[test]
fn evaluation_of_a_perfect_selection() {
    let dir = TempDir::new().unwrap();
    let rep = replicate(&dir.path().join("r"), 10);
    let rows = cmd_evaluate(&EvaluateArgs {
        selected: Some(rep.join("selected.tsv")),
        truth: Some(rep.join("truth.tsv")),
        ..EvaluateArgs::default()
    })
    .unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][1..], ["1", "1", "1", "0.01", "10"]);
}

#[test]
fn evaluation_aggregates_replicates() {
    let dir = TempDir::new().unwrap();
    let dirs: Vec<String> = [8, 9, 10]
        .iter()
        .map(|&h| s(&replicate(&dir.path().join(format!("r{h}")), h)).to_string())
        .collect();
    let out = dir.path().join("metrics.tsv");
    let mut args = vec!["evaluate", "--out", s(&out), "--dirs"];
    args.extend(dirs.iter().map(String::as_str));
    let res = run(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = body(&out);
    let mean = rows.iter().find(|r| r[0] == "mean").unwrap();
    let sd = rows.iter().find(|r| r[0] == "sd").unwrap();
    assert_eq!((mean[3].as_str(), sd[3].as_str()), ("0.9", "0.1"));
}

#[test]
fn empty_selection_scores_zero() {
    let dir = TempDir::new().unwrap();
    let rep = replicate(&dir.path().join("r"), 10);
    fs::write(rep.join("selected.tsv"), "gene\ttilde_pip\n").unwrap();
    let res = run(&["evaluate", "--dirs", s(&rep)]);
    assert!(res.status.success());
    let out = String::from_utf8(res.stdout).unwrap();
    let row: Vec<&str> = out.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(&row[1..], ["0", "0", "0", "0", "0"]);
}

#[test]
fn evaluation_requires_truth() {
    let dir = TempDir::new().unwrap();
    let rep = replicate(&dir.path().join("r"), 10);
    fs::remove_file(rep.join("truth.tsv")).unwrap();
    let res = run(&["evaluate", "--dirs", s(&rep)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8(res.stderr).unwrap().starts_with("error: MissingTruth: "));
}
