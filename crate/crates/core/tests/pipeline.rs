use amm_align::data_io::{synth_generate, Dataset, SyntheticSpec};
use amm_align::retrieval::{eval_protocol, EvalOptions};
use amm_align::trainer::{ablate, AblationAxis, TrainConfig};
use amm_align::{IdentityProjector, Rng, Split};
use proptest::prelude::*;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec { n_pairs: 120, d_latent: 4, d_x: 6, d_y: 5, words_per_caption: 4, ..SyntheticSpec::default() }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        proj_dim: 4,
        hidden: 4,
        epochs: 1,
        phase2_epochs: Some(1),
        n_samples: 2,
        sample_size: 8,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn alpha_sweep_gives_one_report_per_value() {
    let data = synth_generate(&small_spec()).unwrap().dataset().unwrap();
    let values: Vec<String> = (1..=9).map(|k| format!("0.{k}")).collect();
    let rows = ablate(&small_config(), AblationAxis::Alpha, &values, &data).unwrap();
    assert_eq!(rows.len(), 9);
    for (row, v) in rows.iter().zip(&values) {
        assert_eq!(&row.value, v);
        assert!(row.best_metric > 0.0 && row.best_metric <= 1.0);
    }
    let line = serde_json::to_value(&rows[0]).unwrap();
    assert_eq!(line["axis"], "alpha");
    assert!(line["report"]["mean"]["map"]["mean"].is_number());
}

#[test]
fn sampling_axis_changes_only_word_sampling() {
    let base = small_config();
    let on = AblationAxis::Sampling.apply(&base, "on").unwrap();
    let off = AblationAxis::Sampling.apply(&base, "off").unwrap();
    assert!(on.word_sampling && !off.word_sampling);
    assert_eq!(TrainConfig { word_sampling: true, ..off }, on);
}

#[test]
fn identity_data_with_identity_heads_retrieves_perfectly() {
    let spec = SyntheticSpec {
        n_pairs: 500,
        d_latent: 8,
        d_x: 8,
        d_y: 8,
        noise_sigma: 0.0,
        identity_maps: true,
        ..SyntheticSpec::default()
    };
    let data = synth_generate(&spec).unwrap().dataset().unwrap();
    let opts = EvalOptions { normalize: true, n_samples: 3, sample_size: 40, ..EvalOptions::default() };
    let report =
        eval_protocol(&data, Split::Test, &IdentityProjector, &IdentityProjector, &opts, &Rng::new(1)).unwrap();
    for d in [report.c2v, report.v2c, report.mean] {
        assert_eq!([d.r_at_1.mean, d.r_at_5.mean, d.r_at_10.mean, d.map.mean], [1.0; 4]);
    }
}

#[test]
fn dataset_survives_a_disk_round_trip() {
    let synth = synth_generate(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    synth.save_dir(dir.path()).unwrap();
    let loaded = Dataset::load_dir(dir.path()).unwrap();
    let direct = synth.dataset().unwrap();
    let pairs: Vec<usize> = (0..120).collect();
    assert_eq!(loaded.x_batch(&pairs), direct.x_batch(&pairs));
    assert_eq!(loaded.manifest(), direct.manifest());
    assert_eq!(loaded.captions(), direct.captions());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn eval_report_is_a_function_of_the_seed(seed in any::<u64>(), threads in 1usize..4) {
        let data = synth_generate(&small_spec()).unwrap().dataset().unwrap();
        let cfg = TrainConfig { seed, ..small_config() };
        let state = amm_align::trainer::TrainState::new(&cfg, data.x_dim(), data.y_dim()).unwrap();
        let opts = EvalOptions { n_samples: 3, sample_size: 6, normalize: false, threads: 1 };
        let rng = Rng::new(seed);
        let a = eval_protocol(&data, Split::Eval, &state.x_head, &state.y_head, &opts, &rng).unwrap();
        let b = eval_protocol(&data, Split::Eval, &state.x_head, &state.y_head, &EvalOptions { threads, ..opts }, &rng).unwrap();
        prop_assert_eq!(&a, &b);
        for d in [a.c2v, a.v2c, a.mean] {
            prop_assert!(d.r_at_1.mean <= d.r_at_5.mean && d.r_at_5.mean <= d.r_at_10.mean);
            prop_assert!(d.map.mean > 0.0 && d.map.mean <= 1.0);
        }
        prop_assert_eq!(a.selection_metric(), a.mean.map.mean);
    }
}
