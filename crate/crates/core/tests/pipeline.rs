//! End-to-end runs on generated data.

use mgqe::codec;
use mgqe::eval::{code_similarity_matrix, FIGURE_CATEGORIES};
use mgqe::experiment::{self, DataSource, ExperimentConfig, Metrics, ResultTable, SchemeKind, TaskData};
use mgqe::models::{Model, ModelKind};
use mgqe::train::EpochStats;

fn synthetic(scheme: SchemeKind) -> ExperimentConfig {
    ExperimentConfig {
        scheme,
        data: DataSource::Synthetic,
        dim: 32,
        subspaces: 32,
        centroids: 128,
        rank: 24,
        ..ExperimentConfig::default()
    }
}

fn item_rec_data() -> TaskData {
    experiment::load_task_data(&synthetic(SchemeKind::Full)).unwrap()
}

fn hit_rate(m: &Metrics) -> f64 {
    match m {
        Metrics::Ranking(r) => r.hr_at_k,
        Metrics::Rmse(_) => panic!("ranking metrics expected"),
    }
}

#[test]
fn training_beats_an_untrained_model() {
    let data = item_rec_data();
    let trained = experiment::run(&synthetic(SchemeKind::Full), &data, |_, _| Ok(())).unwrap();
    let TaskData::ItemRec(ds, _) = &data else {
        unreachable!()
    };
    let config = synthetic(SchemeKind::Full);
    let mut untrained = experiment::build_model(&config, ds.num_users, ds.num_items).unwrap();
    untrained.freeze_for_serving().unwrap();
    let untrained = experiment::evaluate(&config, &untrained, &data).unwrap();
    assert!(hit_rate(&trained.metrics) > 2.0 * hit_rate(&untrained));
}

#[test]
fn runs_are_deterministic_per_seed() {
    let data = item_rec_data();
    let config = ExperimentConfig {
        epochs: 3,
        ..synthetic(SchemeKind::Mgqe)
    };
    let a = experiment::run(&config, &data, |_, _| Ok(())).unwrap();
    let b = experiment::run(&config, &data, |_, _| Ok(())).unwrap();
    assert_eq!(codec::encode(&a.model).unwrap(), codec::encode(&b.model).unwrap());
    assert_eq!(a.metrics, b.metrics);

    let other = experiment::run(&ExperimentConfig { seed: 1, ..config }, &data, |_, _| Ok(())).unwrap();
    assert_ne!(codec::encode(&a.model).unwrap(), codec::encode(&other.model).unwrap());
}

#[test]
fn mgqe_codes_cluster_by_genre() {
    let data = item_rec_data();
    let outcome = experiment::run(&synthetic(SchemeKind::Mgqe), &data, |_, _| Ok(())).unwrap();
    let TaskData::ItemRec(_, genres) = &data else {
        unreachable!()
    };
    let codes = outcome.model.schemes()[1].item_codes().unwrap();
    let matrix = code_similarity_matrix(&codes, genres, &FIGURE_CATEGORIES, 200, 0).unwrap();
    let dominant = matrix.diagonal_dominance().iter().filter(|&&d| d).count();
    assert!(dominant >= 3, "only {dominant} categories dominate");
}

fn final_loss(epochs: &[EpochStats]) -> f64 {
    epochs.last().unwrap().task_loss
}

fn decreasing_after_two(epochs: &[EpochStats]) -> bool {
    epochs.windows(2).skip(1).all(|w| w[1].task_loss < w[0].task_loss)
}

#[test]
fn mgqe_loss_tracks_full_embeddings() {
    let data = item_rec_data();
    let full = experiment::run(&synthetic(SchemeKind::Full), &data, |_, _| Ok(())).unwrap();
    let mgqe = experiment::run(&synthetic(SchemeKind::Mgqe), &data, |_, _| Ok(())).unwrap();
    assert!(decreasing_after_two(&full.epochs));
    assert!(decreasing_after_two(&mgqe.epochs));
    let gap = (final_loss(&mgqe.epochs) - final_loss(&full.epochs)).abs() / final_loss(&full.epochs);
    assert!(gap <= 0.15, "final loss gap {gap}");
}

#[test]
fn every_scheme_survives_export() {
    let data = item_rec_data();
    let dir = tempfile::tempdir().unwrap();
    for scheme in [
        SchemeKind::Full,
        SchemeKind::LowRank,
        SchemeKind::Scalar,
        SchemeKind::Dpq,
        SchemeKind::Mgqe,
    ] {
        for model in [ModelKind::Gmf, ModelKind::NeuMf] {
            let config = ExperimentConfig {
                model,
                epochs: 1,
                ..synthetic(scheme)
            };
            let outcome = experiment::run(&config, &data, |_, _| Ok(())).unwrap();
            let path = dir.path().join(format!("{model}-{scheme}.{}", codec::EXTENSION));
            let bytes = codec::export(&outcome.model, &path).unwrap();
            assert_eq!(bytes, std::fs::metadata(&path).unwrap().len());
            let back = codec::import(&path).unwrap();
            assert_eq!(experiment::evaluate(&config, &back, &data).unwrap(), outcome.metrics);
            assert_eq!(codec::packed_size_bits(&back).unwrap(), outcome.size.total_packed_bits());
        }
    }
}

#[test]
fn item_to_item_regression_learns() {
    let config = ExperimentConfig {
        task: experiment::Task::Item2Item,
        model: ModelKind::Item2Item,
        pair_items: 500,
        pair_count: 20_000,
        learning_rate: 0.01,
        epochs: 10,
        ..synthetic(SchemeKind::Full)
    };
    let data = experiment::load_task_data(&config).unwrap();
    let rmse = |m| match m {
        Metrics::Rmse(v) => v,
        Metrics::Ranking(_) => unreachable!(),
    };
    let trained = experiment::run(&config, &data, |_, _| Ok(())).unwrap();
    let mut untrained = experiment::build_model(&config, 0, config.pair_items).unwrap();
    untrained.freeze_for_serving().unwrap();
    let before = rmse(experiment::evaluate(&config, &untrained, &data).unwrap());
    let after = rmse(trained.metrics);
    assert!(after < 0.8 * before, "{after} vs {before}");
}

#[test]
fn table_reproduction_covers_every_row() {
    let base = ExperimentConfig {
        epochs: 1,
        synth_users: 100,
        synth_items: 80,
        ..synthetic(SchemeKind::Full)
    };
    let data = experiment::load_task_data(&base).unwrap();
    let rows = experiment::repro_table(ResultTable::Table5, &base, &data, 2, |_, _| {}).unwrap();
    assert_eq!(rows.len(), ResultTable::Table5.rows(&base).len());
    assert!(rows.iter().all(|r| r.repeats == 2 && r.hr_at_k.is_some()));

    let mut csv = Vec::new();
    experiment::write_table_csv(&rows, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), rows.len() + 1);
}

#[test]
fn missing_movielens_is_reported() {
    let config = ExperimentConfig {
        data_dir: Some(std::env::temp_dir().join("no-such-movielens")),
        ..ExperimentConfig::default()
    };
    assert!(matches!(
        experiment::load_task_data(&config),
        Err(mgqe::Error::DataUnavailable(_))
    ));
}
