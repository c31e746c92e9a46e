use fedpers::experiment::{run_experiment, ExperimentConfig, Stage};
use fedpers::metrics::{MetricKind, ReportMethod};
use fedpers::Error;

fn small(builtin: &str) -> ExperimentConfig {
    let text = format!(
        r#"
stages = ["lc", "fl", "kd", "al", "lm"]
[dataset]
builtin = "{builtin}"
[dataset.synthetic]
records_per_node = 140
[data]
window_len = 6
[model]
family = "dnn"
hidden_dims = [8]
[local]
epochs = 2
[federation]
rounds = 2
local_epochs = 1
[personalization.kd]
distill_epochs = 1
[personalization.al]
steps = 2
epochs_per_step = 1
[personalization.lm]
finetune_epochs = 1
[seeds]
data = 3
init = 3
train = 3
"#
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

#[test]
fn single_client_one_round_matches_local() {
    let mut cfg = small("animal_feed");
    cfg.dataset.synthetic.records_per_node = 100;
    cfg.schema(Some(1)).unwrap();
    cfg.dataset.builtin = None;
    cfg.dataset.features = Some(vec!["DateTime".into(), "a".into(), "b".into()]);
    cfg.dataset.target = Some("b".into());
    let dir = tempfile::tempdir().unwrap();
    let csv_dir = dir.path().join("csv");
    std::fs::create_dir(&csv_dir).unwrap();
    let mut body = String::from("DateTime,a,b\n");
    for t in 0..100 {
        body.push_str(&format!(
            "{},{},{}\n",
            t * 3600,
            (t as f64 * 0.3).sin(),
            (t as f64 * 0.2).cos()
        ));
    }
    std::fs::write(csv_dir.join("node0.csv"), body).unwrap();
    cfg.dataset.csv_dir = Some(csv_dir);
    cfg.federation.rounds = 1;
    cfg.federation.local_epochs = 2;
    cfg.local.epochs = 2;
    cfg.stages = vec![Stage::Lc, Stage::Fl];
    let out = run_experiment(&cfg, &dir.path().join("out")).unwrap();
    let row = &out.report.nodes[0];
    let (lc, fl) = (
        row.get(ReportMethod::LC).unwrap(),
        row.get(ReportMethod::FL).unwrap(),
    );
    for k in MetricKind::ALL {
        assert!((lc.get(k).value - fl.get(k).value).abs() < 1e-12);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = small("animal_welfare");
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, &dir.path().join("a")).unwrap();
    run_experiment(&cfg, &dir.path().join("b")).unwrap();
    for f in ["report.csv", "report.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn dairy_report_shape_and_average() {
    let cfg = small("dairy_sales");
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&cfg, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3 * 8);
    for kind in ["MSE", "MAE", "RMSE"] {
        let block: Vec<&csv::StringRecord> = rows.iter().filter(|r| &r[0] == kind).collect();
        let labels: Vec<&str> = block.iter().map(|r| &r[1]).collect();
        assert_eq!(
            labels,
            vec!["Node0", "Node1", "Node2", "Node3", "Node4", "Node5", "Node6", "Average"]
        );
        for col in 2..7 {
            let vals: Vec<f64> = block.iter().map(|r| r[col].parse().unwrap()).collect();
            let mean = vals[..7].iter().sum::<f64>() / 7.0;
            assert!((mean - vals[7]).abs() < 1e-9, "{kind} col {col}");
        }
    }
    let mse_fl: f64 = rows[0][3].parse().unwrap();
    assert_eq!(
        mse_fl,
        out.report.nodes[0]
            .get(ReportMethod::FL)
            .unwrap()
            .get(MetricKind::Mse)
            .value
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["success"], true);
}

#[test]
fn failing_stage_still_writes_manifest() {
    let mut cfg = small("animal_welfare");
    cfg.federation.learning_rate = 1e300;
    let dir = tempfile::tempdir().unwrap();
    let err = run_experiment(&cfg, dir.path()).unwrap_err();
    assert!(matches!(err, Error::Stage { .. }), "{err}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["success"], false);
    let stages = manifest["stages"].as_array().unwrap();
    assert_eq!(stages.last().unwrap()["ok"], false);
    assert_eq!(stages[0]["stage"], "data");
}

#[test]
fn subset_of_stages_only_reports_those() {
    let mut cfg = small("animal_welfare");
    cfg.stages = vec![Stage::Lm];
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&cfg, dir.path()).unwrap();
    for row in &out.report.nodes {
        assert!(row.get(ReportMethod::LM).is_some());
        assert!(row.get(ReportMethod::FL).is_none());
        assert!(row.get(ReportMethod::LC).is_none());
    }
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let cfg = small("animal_feed");
    assert_eq!(
        ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(),
        cfg
    );
    assert!(ExperimentConfig::from_toml("[model]\nfamly = \"dnn\"\n").is_err());
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::load(&path).unwrap().validate().unwrap();
        seen += 1;
    }
    assert!(seen >= 3);
}
