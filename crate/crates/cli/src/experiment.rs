use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use textsense_core::array_io::write_params;
use textsense_core::autodiff::Matrix;
use textsense_core::dataset::{generate, read_dataset, Dataset, SplitData, Task};
use textsense_core::heads::{
    build_targets, frame_features, frame_rate, train_har, train_tal, FrameNormalizer, HarModel, LevelTargets,
    TalPyramid, TrainOutcome, WirelessEncoder,
};
use textsense_core::metrics::{accuracy, mean_ap_recordings, Detection, Segment};
use textsense_core::text::{load_embedding_cache, pseudo_cache, EmbeddingCache, TokenMatrix};

use crate::config::{EmbeddingSource, ExperimentConfig};
use crate::report::{run_report, Table};

/// Test-split outputs of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Predictions {
    Har(Vec<usize>),
    Tal(Vec<Vec<Detection>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    /// Report metrics in percent, in column order.
    pub values: Vec<f64>,
    pub predictions: Predictions,
    pub losses: Vec<f64>,
    pub metrics: Vec<Option<f64>>,
    pub params: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub baseline: ModelRun,
    pub fused: ModelRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub columns: Vec<String>,
    pub seeds: Vec<SeedRun>,
    pub report: Table,
}

impl RunOutput {
    /// Rows `seed,model,epoch,loss,metric`.
    pub fn curves(&self) -> Result<Table> {
        let header = ["seed", "model", "epoch", "loss", "metric"].map(String::from).to_vec();
        let mut rows = Vec::new();
        for s in &self.seeds {
            for (name, run) in [(crate::report::BASELINE, &s.baseline), (crate::report::FUSED, &s.fused)] {
                for (epoch, (loss, metric)) in run.losses.iter().zip(&run.metrics).enumerate() {
                    rows.push(vec![
                        s.seed.to_string(),
                        name.to_string(),
                        epoch.to_string(),
                        loss.to_string(),
                        metric.map(|m| m.to_string()).unwrap_or_default(),
                    ]);
                }
            }
        }
        Ok(Table { header, rows })
    }
}

enum Prepared {
    Har {
        x_train: Matrix,
        y_train: Vec<usize>,
        x_test: Matrix,
        y_test: Vec<usize>,
    },
    Tal {
        train_inputs: Vec<Matrix>,
        train_targets: Vec<Vec<LevelTargets>>,
        test_inputs: Vec<Matrix>,
        test_fps: Vec<f64>,
        test_durations: Vec<f64>,
        test_segments: Vec<Vec<Segment>>,
    },
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let data = match &cfg.dataset_dir {
        Some(dir) => read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))?,
        None => generate(&cfg.dataset)?,
    };
    if data.spec.task != cfg.task || data.spec.modality != cfg.modality {
        bail!(
            "invalid argument: dataset is {}/{} but the config asks for {}/{}",
            data.spec.task,
            data.spec.modality,
            cfg.task,
            cfg.modality
        );
    }
    Ok(data)
}

fn cache_for(cfg: &ExperimentConfig, labels: &[String]) -> Result<EmbeddingCache> {
    match cfg.embedding_source.resolve(cfg.strategy) {
        EmbeddingSource::Pseudo => Ok(pseudo_cache(labels, cfg.embedding_dim, cfg.strategy)?),
        EmbeddingSource::Cache(path) => {
            let cache = load_embedding_cache(&path)?;
            if cache.strategy != cfg.strategy {
                bail!(
                    "invalid argument: cache {} holds {} embeddings, config selects {}",
                    path.display(),
                    cache.strategy.tag(),
                    cfg.strategy.tag()
                );
            }
            Ok(cache)
        }
    }
}

/// Initial label tokens for the configured source and strategy.
pub fn load_tokens(cfg: &ExperimentConfig, labels: &[String]) -> Result<TokenMatrix> {
    let cache = cache_for(cfg, labels)?;
    Ok(TokenMatrix::from_cache(&cache, labels)?)
}

fn prepare(cfg: &ExperimentConfig, data: &Dataset) -> Result<Prepared> {
    match (&data.train, &data.test) {
        (SplitData::Har(train), SplitData::Har(test)) => {
            let encoder = WirelessEncoder::fit(&train.sequences)?;
            Ok(Prepared::Har {
                x_train: encoder.encode_all(&train.sequences)?,
                y_train: train.labels.clone(),
                x_test: encoder.encode_all(&test.sequences)?,
                y_test: test.labels.clone(),
            })
        }
        (SplitData::Tal(train), SplitData::Tal(test)) => {
            let window = cfg.tal.window;
            let frames = |recs: &[textsense_core::dataset::TalRecording]| -> Result<Vec<Matrix>> {
                recs.iter()
                    .map(|r| Ok(frame_features(&r.sequence, window)?))
                    .collect()
            };
            let raw_train = frames(train)?;
            let raw_test = frames(test)?;
            let norm = FrameNormalizer::fit(&raw_train)?;
            let classes = data.labels.len();
            let train_targets = train
                .iter()
                .zip(&raw_train)
                .map(|(r, f)| {
                    build_targets(
                        f.rows(),
                        &r.segments,
                        frame_rate(&r.sequence, window),
                        cfg.tal.levels,
                        classes,
                    )
                })
                .collect();
            Ok(Prepared::Tal {
                train_inputs: raw_train.iter().map(|f| norm.apply(f)).collect::<Result<_, _>>()?,
                train_targets,
                test_inputs: raw_test.iter().map(|f| norm.apply(f)).collect::<Result<_, _>>()?,
                test_fps: test.iter().map(|r| frame_rate(&r.sequence, window)).collect(),
                test_durations: test
                    .iter()
                    .map(|r| r.sequence.values.rows() as f64 / r.sequence.sample_rate)
                    .collect(),
                test_segments: test.iter().map(|r| r.segments.clone()).collect(),
            })
        }
        _ => bail!("invalid argument: train and test splits hold different tasks"),
    }
}

pub fn columns(cfg: &ExperimentConfig) -> Vec<String> {
    match cfg.task {
        Task::Har => vec!["accuracy".into()],
        Task::Tal => cfg
            .tal_thresholds()
            .iter()
            .map(|t| format!("mAP@{t}"))
            .chain(std::iter::once("Avg".into()))
            .collect(),
    }
}

fn finish(values: Vec<f64>, predictions: Predictions, outcome: TrainOutcome, params: Vec<Matrix>) -> ModelRun {
    ModelRun {
        values,
        predictions,
        losses: outcome.epoch_losses,
        metrics: outcome.epoch_metrics,
        params,
    }
}

fn run_model(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    classes: usize,
    tokens: Option<&TokenMatrix>,
    seed: u64,
) -> Result<ModelRun> {
    let text = tokens.map(|t| (t.clone(), cfg.fusion));
    match prepared {
        Prepared::Har {
            x_train,
            y_train,
            x_test,
            y_test,
        } => {
            let mut model = HarModel::new(x_train.cols(), cfg.hidden, classes, text, seed)?;
            let outcome = train_har(&mut model, x_train, y_train, &cfg.training, seed)?;
            let pred = model.predict(x_test)?;
            let acc = accuracy(&pred, y_test)? * 100.0;
            Ok(finish(vec![acc], Predictions::Har(pred), outcome, model.params()))
        }
        Prepared::Tal {
            train_inputs,
            train_targets,
            test_inputs,
            test_fps,
            test_durations,
            test_segments,
        } => {
            let mut model = TalPyramid::new(train_inputs[0].cols(), classes, &cfg.tal, text, seed)?;
            let outcome = train_tal(&mut model, train_inputs, train_targets, &cfg.training, seed)?;
            let dets = test_inputs
                .iter()
                .zip(test_fps.iter().zip(test_durations))
                .map(|(x, (&fps, &dur))| Ok(model.detect(x, fps, dur, &cfg.tal)?))
                .collect::<Result<Vec<_>>>()?;
            let pairs: Vec<(&[Detection], &[Segment])> = dets
                .iter()
                .zip(test_segments)
                .map(|(d, g)| (d.as_slice(), g.as_slice()))
                .collect();
            let (aps, avg) = mean_ap_recordings(&pairs, cfg.tal_thresholds())?;
            let values = aps.iter().chain(std::iter::once(&avg)).map(|v| v * 100.0).collect();
            Ok(finish(values, Predictions::Tal(dets), outcome, model.params()))
        }
    }
}

/// Trains the wireless-only and the fused model for every seed on `data`.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<RunOutput> {
    cfg.validate()?;
    let tokens = load_tokens(cfg, &data.labels)?;
    let prepared = prepare(cfg, data)?;
    let classes = data.labels.len();
    let seeds = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let baseline = run_model(cfg, &prepared, classes, None, seed)
                .with_context(|| format!("seed {seed}, wireless-only model"))?;
            let fused = run_model(cfg, &prepared, classes, Some(&tokens), seed)
                .with_context(|| format!("seed {seed}, fused model"))?;
            Ok(SeedRun { seed, baseline, fused })
        })
        .collect::<Result<Vec<_>>>()?;
    let columns = columns(cfg);
    let summary: Vec<(u64, Vec<f64>, Vec<f64>)> = seeds
        .iter()
        .map(|s| (s.seed, s.baseline.values.clone(), s.fused.values.clone()))
        .collect();
    let report = run_report(&columns, &summary);
    Ok(RunOutput {
        columns,
        seeds,
        report,
    })
}

/// Writes `report.csv`, `report.txt`, `curves.csv` and `predictions.json`.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    out.report.write(&dir.join("report.csv"))?;
    std::fs::write(dir.join("report.txt"), out.report.render())?;
    out.curves()?.write(&dir.join("curves.csv"))?;
    #[derive(Serialize)]
    struct SeedPredictions<'a> {
        seed: u64,
        baseline: &'a Predictions,
        fused: &'a Predictions,
    }
    let preds: Vec<SeedPredictions> = out
        .seeds
        .iter()
        .map(|s| SeedPredictions {
            seed: s.seed,
            baseline: &s.baseline.predictions,
            fused: &s.fused.predictions,
        })
        .collect();
    std::fs::write(dir.join("predictions.json"), serde_json::to_string(&preds)? + "\n")?;
    for s in &out.seeds {
        let seed_dir = dir.join("params").join(format!("seed{}", s.seed));
        write_params(&seed_dir.join("wireless"), &s.baseline.params)?;
        write_params(&seed_dir.join("fused"), &s.fused.params)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use textsense_core::dataset::Modality;
    use textsense_core::heads::TrainConfig;

    fn small(task: Task) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            task,
            modality: Modality::Rfid,
            seeds: vec![0, 1],
            training: TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        };
        cfg.dataset.train = 12;
        cfg.dataset.test = 6;
        cfg.dataset.recording_duration = 12.0;
        cfg.resolve().unwrap()
    }

    #[test]
    fn har_run_has_one_column_per_seed_row() {
        let cfg = small(Task::Har);
        let data = load_dataset(&cfg).unwrap();
        let out = run_experiment(&cfg, &data).unwrap();
        assert_eq!(out.columns, vec!["accuracy"]);
        assert_eq!(out.seeds.len(), 2);
        assert_eq!(out.report.rows.len(), 2 * 3 + 5);
        for s in &out.seeds {
            assert_eq!(s.baseline.losses.len(), 3);
            assert!(s.baseline.metrics.iter().all(Option::is_some));
        }
    }

    #[test]
    fn saved_parameters_reproduce_the_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(Task::Har);
        let data = load_dataset(&cfg).unwrap();
        let out = run_experiment(&cfg, &data).unwrap();
        write_run(dir.path(), &out).unwrap();
        let Prepared::Har { x_train, x_test, .. } = prepare(&cfg, &data).unwrap() else {
            panic!("HAR inputs expected")
        };
        for s in &out.seeds {
            let params = textsense_core::array_io::read_params(
                &dir.path().join(format!("params/seed{}/wireless", s.seed)),
            )
            .unwrap();
            let mut model = HarModel::new(x_train.cols(), cfg.hidden, data.labels.len(), None, 99).unwrap();
            model.set_params(&params);
            assert_eq!(Predictions::Har(model.predict(&x_test).unwrap()), s.baseline.predictions);
        }
    }

    #[test]
    fn tal_run_reports_every_threshold() {
        let cfg = small(Task::Tal);
        let data = load_dataset(&cfg).unwrap();
        let out = run_experiment(&cfg, &data).unwrap();
        assert_eq!(out.columns.len(), cfg.tal_thresholds().len() + 1);
        assert_eq!(out.columns[0], "mAP@0.5");
        let csv = Table::from_csv(&out.report.to_csv().unwrap()).unwrap();
        for row in csv.rows.iter().filter(|r| r[0] != "std") {
            let v = Table::numbers(row, 2).unwrap();
            let (avg, cols) = v.split_last().unwrap();
            let mean = cols.iter().sum::<f64>() / cols.len() as f64;
            assert!((avg - mean).abs() < 1e-9, "{row:?}");
        }
    }

    #[test]
    fn cache_strategy_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(Task::Har);
        let labels = cfg.dataset.labels();
        let path = dir.path().join("c.json");
        let cache = pseudo_cache(&labels, 8, textsense_core::text::PromptStrategy::Tle).unwrap();
        textsense_core::text::write_embedding_cache(&path, &cache).unwrap();
        let cfg = ExperimentConfig {
            embedding_source: EmbeddingSource::Cache(path),
            ..cfg
        };
        let err = load_tokens(&cfg, &labels).unwrap_err();
        assert!(err.to_string().contains("TLE"), "{err}");
    }
}
