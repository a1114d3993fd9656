use std::path::Path;

use mixmin::cli::run;
use mixmin::io::{load_weights, read_json, write_predictions, ResamplePlan};
use mixmin::objectives::{LossKind, PredictionMatrix};
use mixmin::synthworld::CategoricalWorld;

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["mixmin"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn value_of<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('\t')))
        .unwrap_or_else(|| panic!("no `{key}` in {out}"))
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

fn write_two_source_table(dir: &Path) -> String {
    // 20 samples from a (0.6, 0.4) target scored by (0.8,0.2) and (0.2,0.8)
    let mut scores = Vec::new();
    for i in 0..20 {
        let (a, b) = if i % 5 < 3 { (0.8f64, 0.2f64) } else { (0.2, 0.8) };
        scores.extend([a.ln(), b.ln()]);
    }
    let m = PredictionMatrix::new(
        LossKind::CeUnconditional,
        scores,
        None,
        (0..20).map(|i| format!("doc{i}")).collect(),
        vec!["books".into(), "code".into()],
    )
    .unwrap();
    let pred = dir.join("predictions.csv");
    write_predictions(&m, &pred, &dir.join("manifest.json")).unwrap();
    p(&pred)
}

#[test]
fn fit_then_eval_reproduces_train_objective() {
    let dir = tempfile::tempdir().unwrap();
    let pred = write_two_source_table(dir.path());
    let weights = p(&dir.path().join("w.json"));
    let (code, fit_out, err) = cli(&["fit", "--predictions", &pred, "--seed", "4", "--out", &weights]);
    assert_eq!(code, 0, "{err}");

    let (code, eval_out, err) = cli(&["eval", "--weights", &weights, "--predictions", &pred, "--split", "0.8", "--seed", "4"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(value_of(&fit_out, "train_objective"), value_of(&eval_out, "train_objective"));
    assert_eq!(value_of(&fit_out, "heldout_objective"), value_of(&eval_out, "heldout_objective"));

    let (file, w) = load_weights(Path::new(&weights)).unwrap();
    assert_eq!(file.solver.unwrap().steps, 100);
    assert_eq!(file.solver.unwrap().eta, 1.0);
    assert_eq!(
        file.objective.unwrap().to_string(),
        value_of(&fit_out, "train_objective")
    );
    assert_eq!(w.source_ids(), &["books", "code"]);

    let (code, out, _) = cli(&["eval", "--weights", &weights, "--predictions", &pred]);
    assert_eq!(code, 0);
    assert!(value_of(&out, "objective").parse::<f64>().unwrap() > 0.0);
}

#[test]
fn fit_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let pred = write_two_source_table(dir.path());
    let trace = dir.path().join("trace.csv");
    let (code, _, err) = cli(&[
        "fit", "--predictions", &pred, "--steps", "12", "--eta", "0.5",
        "--out", &p(&dir.path().join("w.json")), "--trace-out", &p(&trace),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step,objective,grad_max_norm,books,code");
    assert_eq!(lines.count(), 13);
}

#[test]
fn balanced_on_seven_sources() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.json");
    let (code, _, err) = cli(&["baseline", "--method", "balanced", "--sources", "a,b,c,d,e,f,g", "--out", &p(&out)]);
    assert_eq!(code, 0, "{err}");
    let (_, w) = load_weights(&out).unwrap();
    assert_eq!(w.values(), &[1.0 / 7.0; 7]);
}

#[test]
fn natural_baseline_and_missing_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("n.json");
    let (code, _, _) = cli(&["baseline", "--method", "natural", "--sources", "a,b", "--sizes", "3,1", "--out", &p(&out)]);
    assert_eq!(code, 0);
    assert_eq!(load_weights(&out).unwrap().1.values(), &[0.75, 0.25]);

    let (code, _, err) = cli(&["baseline", "--method", "natural", "--sources", "a,b", "--out", &p(&out)]);
    assert_eq!(code, 1, "{err}");
    let (code, _, _) = cli(&["baseline", "--method", "natural", "--sources", "a,b", "--sizes", "8.2,0", "--out", &p(&out)]);
    assert_eq!(code, 2);
}

#[test]
fn matrix_baselines_report_objective() {
    let dir = tempfile::tempdir().unwrap();
    let pred = write_two_source_table(dir.path());
    for method in ["random", "grid", "regmix-lite"] {
        let out = dir.path().join(format!("{method}.json"));
        let (code, stdout, err) = cli(&["baseline", "--method", method, "--predictions", &pred, "--out", &p(&out)]);
        assert_eq!(code, 0, "{method}: {err}");
        let (file, _) = load_weights(&out).unwrap();
        assert_eq!(file.method, method);
        assert_eq!(file.objective.unwrap().to_string(), value_of(&stdout, "objective"));
    }
    let (code, _, _) = cli(&["baseline", "--method", "grid", "--sources", "a,b", "--out", &p(&dir.path().join("g.json"))]);
    assert_eq!(code, 1);
}

#[test]
fn oracle_grid_on_two_thirds_world() {
    let dir = tempfile::tempdir().unwrap();
    let world = CategoricalWorld::from_pmfs(vec![vec![0.8, 0.2], vec![0.2, 0.8]], vec![0.6, 0.4]).unwrap();
    let path = dir.path().join("world.json");
    mixmin::io::write_json(&path, &world).unwrap();
    let (code, out, err) = cli(&["oracle", "--world", &p(&path), "--grid-resolution", "0.01"]);
    assert_eq!(code, 0, "{err}");
    let weights: Vec<&str> = out.lines().filter(|l| l.starts_with("weight")).collect();
    assert_eq!(weights, vec!["weight\tsource_0\t0.67", "weight\tsource_1\t0.33"]);
}

#[test]
fn synth_then_oracle_with_weights() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"alphabet_size": 4, "num_sources": 2, "concentration": 1.0,
            "target": {"mixture": [0.25, 0.75]}, "target_samples": 50}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("w");
    let (code, _, err) = cli(&["synth", "--spec", &p(&spec), "--out-dir", &p(&out_dir)]);
    assert_eq!(code, 0, "{err}");
    let world: CategoricalWorld = read_json(&out_dir.join("world.json")).unwrap();
    assert_eq!(world.n_sources(), 2);

    let weights = dir.path().join("fit.json");
    let (code, _, err) = cli(&["fit", "--predictions", &p(&out_dir.join("predictions.csv")), "--out", &p(&weights)]);
    assert_eq!(code, 0, "{err}");
    let (code, out, _) = cli(&["oracle", "--world", &p(&out_dir.join("world.json")), "--weights", &p(&weights)]);
    assert_eq!(code, 0);
    assert!(value_of(&out, "dm_objective").parse::<f64>().unwrap().is_finite());
}

#[test]
fn resample_writes_plan() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.json");
    cli(&["baseline", "--method", "natural", "--sources", "a,b,c", "--sizes", "0.335,0.333,0.332", "--out", &p(&w)]);
    let plan_path = dir.path().join("plan.json");
    let (code, _, err) = cli(&["resample", "--weights", &p(&w), "--budget", "10", "--out", &p(&plan_path)]);
    assert_eq!(code, 0, "{err}");
    let plan: ResamplePlan = read_json(&plan_path).unwrap();
    assert_eq!(plan.counts(), vec![4, 3, 3]);
}

#[test]
fn usage_and_data_errors() {
    assert_eq!(cli(&["fit", "--no-such-flag"]).0, 1);
    assert_eq!(cli(&["frobnicate"]).0, 1);
    assert_eq!(cli(&[]).0, 1);
    assert_eq!(cli(&["--help"]).0, 0);

    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("predictions.csv");
    std::fs::write(dir.path().join("manifest.json"), r#"{"loss_kind": "ce_unconditional", "score_space": "linear", "sources": ["a", "b"]}"#).unwrap();
    std::fs::write(&pred, "sample_id,a,b\nx,0.5,0.0\ny,0.5,0.5\n").unwrap();
    let (code, _, err) = cli(&["fit", "--predictions", &p(&pred), "--out", &p(&dir.path().join("w.json"))]);
    assert_eq!(code, 2);
    assert!(err.contains(":2:3"), "{err}");

    std::fs::write(&pred, "sample_id,a,b\n").unwrap();
    let (code, _, err) = cli(&["fit", "--predictions", &p(&pred), "--out", &p(&dir.path().join("w.json"))]);
    assert_eq!(code, 2);
    assert!(err.contains("no samples"), "{err}");
}
