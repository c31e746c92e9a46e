use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Stage};
use crate::data::{
    generate_synthetic, load_csv, prepare_node, DatasetSchema, NodeDataset, RawTable,
};
use crate::error::{Error, Result};
use crate::federation::{ClientHandle, FederationConfig, FederationSession};
use crate::metrics::{MetricReport, MetricValues, NodeRow, ReportMethod};
use crate::models::{gather_rows, init_params, predict, snapshot, ModelParams, ModelSpec};
use crate::personalization::{personalize, AlConfig, KdConfig, LmConfig, PersonalizationConfig};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seconds: f64,
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_sha256: String,
    pub artifacts: Vec<PathBuf>,
    pub stages: Vec<StageRecord>,
    pub success: bool,
}

/// Successful run: the manifest plus the in-memory report.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub report: MetricReport,
    pub original_units: Option<MetricReport>,
}

/// Raw per-node tables from the CSV directory or the synthetic generator.
pub fn load_node_tables(cfg: &ExperimentConfig) -> Result<(DatasetSchema, Vec<RawTable>)> {
    match &cfg.dataset.csv_dir {
        Some(dir) => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Config(format!("no .csv files in {}", dir.display())));
            }
            let schema = cfg.schema(Some(files.len()))?;
            let tables = files
                .iter()
                .map(|f| load_csv(f, &schema))
                .collect::<Result<_>>()?;
            Ok((schema, tables))
        }
        None => {
            let schema = cfg.schema(None)?;
            let tables = generate_synthetic(&schema, &cfg.synthetic())?;
            Ok((schema, tables))
        }
    }
}

fn hash_config(cfg: &ExperimentConfig) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(cfg)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn evaluate(
    spec: &ModelSpec,
    params: &ModelParams,
    node: &NodeDataset,
) -> Result<(MetricValues, MetricValues)> {
    let windows = gather_rows(&node.windows, &node.test);
    let truth = gather_rows(&node.targets, &node.test);
    let pred = predict(spec, params, &windows)?;
    let scaled = MetricValues::evaluate(truth.data(), pred.data())?;
    let t = node.norm.inverse_targets(&truth)?;
    let p = node.norm.inverse_targets(&pred)?;
    let original = MetricValues::evaluate(t.data(), p.data())?;
    Ok((scaled, original))
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    artifacts: Vec<PathBuf>,
    stages: Vec<StageRecord>,
    rows: Vec<NodeRow>,
    original: Vec<NodeRow>,
}

impl Runner<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let result = f(self);
        self.stages.push(StageRecord {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
            ok: result.is_ok(),
            error: result.as_ref().err().map(|e| e.to_string()),
        });
        result.map_err(|e| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        })
    }

    fn snapshot(&mut self, node: usize, method: ReportMethod, params: &ModelParams) -> Result<()> {
        if !self.cfg.output.snapshots {
            return Ok(());
        }
        let dir = self.out.join("snapshots");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("node_{node}_{}.params", method.label()));
        snapshot::save(params, &path)?;
        self.artifacts.push(path);
        Ok(())
    }

    fn record(
        &mut self,
        method: ReportMethod,
        results: Vec<(usize, ModelParams, MetricValues, MetricValues)>,
    ) -> Result<()> {
        for (i, (node, params, scaled, original)) in results.into_iter().enumerate() {
            self.rows[i].set(method, scaled);
            self.original[i].set(method, original);
            self.snapshot(node, method, &params)?;
        }
        Ok(())
    }

    fn federation_config(&self, epochs: Option<usize>) -> FederationConfig {
        FederationConfig {
            seed: self.cfg.seeds.train,
            local_epochs: epochs.unwrap_or(self.cfg.federation.local_epochs),
            ..self.cfg.federation.clone()
        }
    }
}

fn personalization_config(cfg: &ExperimentConfig, stage: Stage) -> PersonalizationConfig {
    let p = &cfg.personalization;
    let seed = derive_seed(cfg.seeds.train, &[stage as u64]);
    match stage {
        Stage::Kd => PersonalizationConfig::Kd(KdConfig {
            seed,
            ..p.kd.clone()
        }),
        Stage::Al => PersonalizationConfig::Al(AlConfig {
            seed,
            ..p.al.clone()
        }),
        _ => PersonalizationConfig::Lm(LmConfig {
            seed,
            ..p.lm.clone()
        }),
    }
}

fn report_method(stage: Stage) -> ReportMethod {
    match stage {
        Stage::Lc => ReportMethod::LC,
        Stage::Fl => ReportMethod::FL,
        Stage::Kd => ReportMethod::KD,
        Stage::Al => ReportMethod::AL,
        Stage::Lm => ReportMethod::LM,
    }
}

/// Runs the configured stages and writes `report.csv`, `report.json`,
/// `manifest.json` and snapshots under `out`. On a stage failure the
/// manifest and any finished artifacts are still written.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let mut runner = Runner {
        cfg,
        out,
        artifacts: Vec::new(),
        stages: Vec::new(),
        rows: Vec::new(),
        original: Vec::new(),
    };
    let result = cfg
        .execution
        .with_jobs(cfg.jobs, || run_stages(&mut runner));
    let success = result.is_ok();
    let mut report = None;
    let mut original = None;
    if !runner.rows.is_empty()
        && runner
            .rows
            .iter()
            .any(|r| r.methods.iter().any(Option::is_some))
    {
        let r = MetricReport::new(runner.rows.clone())?;
        runner.artifacts.extend(r.emit(out)?);
        if cfg.output.original_units {
            let o = MetricReport::new(runner.original.clone())?;
            let path = out.join("report_original.csv");
            std::fs::write(&path, o.to_csv()?)?;
            runner.artifacts.push(path);
            original = Some(o);
        }
        report = Some(r);
    }
    let manifest_path = out.join("manifest.json");
    runner.artifacts.push(manifest_path.clone());
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: hash_config(cfg)?,
        artifacts: runner.artifacts,
        stages: runner.stages,
        success,
    };
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    result?;
    Ok(Outcome {
        manifest,
        report: report.ok_or_else(|| Error::InvalidArgument("no stage produced results".into()))?,
        original_units: original,
    })
}

fn run_stages(r: &mut Runner<'_>) -> Result<()> {
    let cfg = r.cfg;
    let exec = cfg.execution;
    let wanted: Vec<Stage> = Stage::ALL
        .into_iter()
        .filter(|s| cfg.stages.contains(s))
        .collect();

    let (spec, nodes) = r.stage("data", |_| {
        let (schema, tables) = load_node_tables(cfg)?;
        let pipeline = cfg.data.pipeline();
        let target = schema.target_name.clone();
        let nodes = exec
            .map(tables.into_iter().enumerate().collect(), |(i, t)| {
                prepare_node(
                    i,
                    &t,
                    &target,
                    &pipeline,
                    derive_seed(cfg.seeds.data, &[i as u64]),
                )
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let spec = cfg
            .model
            .spec(schema.input_features().len(), pipeline.window_len)?;
        Ok((spec, nodes))
    })?;
    r.rows = nodes.iter().map(|n| NodeRow::new(n.node_id)).collect();
    r.original = r.rows.clone();
    let init = init_params(&spec, cfg.seeds.init)?;

    if wanted.contains(&Stage::Lc) {
        r.stage("lc", |r| {
            let fed = r.federation_config(Some(cfg.local.epochs));
            let results = exec
                .map(nodes.iter().collect(), |n| -> Result<_> {
                    let client = ClientHandle::new(
                        n.clone(),
                        fed.fit_on,
                        derive_seed(fed.seed, &[n.node_id as u64]),
                    )?;
                    let update = client.local_update(&spec, &init, &fed, 0)?;
                    let (s, o) = evaluate(&spec, &update.params, n)?;
                    Ok((n.node_id, update.params, s, o))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            r.record(ReportMethod::LC, results)
        })?;
    }

    let needs_global = wanted
        .iter()
        .any(|s| *s == Stage::Fl || s.is_personalization());
    if !needs_global {
        return Ok(());
    }
    let global = r.stage("fl", |r| {
        let mut session = FederationSession::from_nodes(
            spec.clone(),
            init.clone(),
            nodes.clone(),
            r.federation_config(None),
        )?
        .with_execution(exec);
        if cfg.output.snapshots {
            session = session.with_snapshots(r.out.join("snapshots"));
        }
        let reports = session.run_session()?;
        r.artifacts
            .extend(reports.into_iter().filter_map(|rep| rep.snapshot));
        let (global, _) = session.into_parts();
        if wanted.contains(&Stage::Fl) {
            let results = exec
                .map(nodes.iter().collect(), |n| {
                    evaluate(&spec, &global, n).map(|(s, o)| (n.node_id, global.clone(), s, o))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            r.record(ReportMethod::FL, results)?;
        }
        Ok(global)
    })?;

    for stage in wanted.into_iter().filter(|s| s.is_personalization()) {
        let pcfg = personalization_config(cfg, stage);
        r.stage(stage.name(), |r| {
            let results = exec
                .map(nodes.iter().collect(), |n| -> Result<_> {
                    let p = personalize(&spec, &global, n, &pcfg)?;
                    let (s, o) = evaluate(&p.spec, &p.params, n)?;
                    Ok((n.node_id, p.params, s, o))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            r.record(report_method(stage), results)
        })?;
    }
    Ok(())
}
