use csad_core::data::{ClipRecord, Condition, FeatureExtractor};
use csad_core::dsp::AudioClip;
use csad_core::eval::{
    clip_score, read_scores, roc_auc, score_from_logits, score_records, segment_score,
    write_embeddings, write_scores, AucReport, ScoreRecord,
};
use csad_core::model::{Model, ModelConfig};
use csad_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &p) in positive.iter().enumerate() {
        for (j, &q) in positive.iter().enumerate() {
            if p && !q {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

#[test]
fn auc_reference_cases() {
    let auc = roc_auc(&[0.9, 0.4, 0.5, 0.1], &[true, true, false, false]).unwrap();
    assert_eq!(auc, 0.75);
    assert_eq!(
        roc_auc(&[3.0, 4.0, 1.0, 2.0], &[true, true, false, false]).unwrap(),
        1.0
    );
    assert_eq!(
        roc_auc(&[1.0; 5], &[true, false, true, false, false]).unwrap(),
        0.5
    );
    assert!(matches!(
        roc_auc(&[1.0, 2.0], &[true, true]),
        Err(Error::InvalidArgument(_))
    ));
    assert!(roc_auc(&[1.0], &[true, false]).is_err());
}

#[test]
fn sort_based_auc_equals_pair_count_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n = rng.random_range(2..=50);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..8) as f64 * 0.25)
            .collect();
        assert_eq!(
            roc_auc(&scores, &labels).unwrap(),
            pair_auc(&scores, &labels)
        );
    }
}

proptest! {
    #[test]
    fn auc_ignores_monotone_transforms(
        raw in prop::collection::vec((0u8..20, any::<bool>()), 2..40),
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
    ) {
        let mut labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64 / 7.0).collect();
        let base = roc_auc(&scores, &labels).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        prop_assert_eq!(roc_auc(&exp, &labels).unwrap(), base);
        prop_assert_eq!(roc_auc(&affine, &labels).unwrap(), base);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        prop_assert!((base + roc_auc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn segment_scores_are_nonnegative(logits in prop::collection::vec(-50.0f64..50.0, 4), id in 0usize..4) {
        prop_assert!(score_from_logits(&logits, id).unwrap() >= 0.0);
    }
}

#[test]
fn score_reference_values() {
    assert!((score_from_logits(&[0.0; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-15);
    assert_eq!(score_from_logits(&[0.0, 800.0, 0.0, 0.0], 1).unwrap(), 0.0);
    // Probability 0.1 at the target: logits ln 0.1 and ln 0.3 three times.
    let logits = [0.1f64.ln(), 0.3f64.ln(), 0.3f64.ln(), 0.3f64.ln()];
    assert!((score_from_logits(&logits, 0).unwrap() - std::f64::consts::LN_10).abs() < 1e-6);
    assert!(score_from_logits(&logits, 4).is_err());
}

fn clip_record(samples: Vec<f64>, id: usize, condition: Condition, source: &str) -> ClipRecord {
    ClipRecord {
        clip: AudioClip::new(samples, 16000).unwrap(),
        machine_type: "synth".into(),
        machine_id: id,
        condition,
        anomaly_kind: None,
        source: source.into(),
    }
}

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
}

#[test]
fn ten_second_clip_yields_four_segments() {
    let ex = FeatureExtractor::new(&ModelConfig::default()).unwrap();
    assert_eq!(ex.tile(&noise(160000, 1)).unwrap().len(), 4);
    assert!(matches!(
        ex.tile(&noise(33279, 1)),
        Err(Error::TooShort { .. })
    ));
}

#[test]
fn uniform_total_head_scores_ln_classes() {
    let config = ModelConfig::reduced();
    let mut model = Model::new(config.clone(), 1).unwrap();
    for p in model.params_mut() {
        if p.name.starts_with("total.") {
            p.value = csad_tensor::Tensor::zeros(p.value.shape());
        }
    }
    let ex = FeatureExtractor::new(&config).unwrap();
    let seg = ex.extract(&noise(config.segment_len(), 2)).unwrap();
    assert_eq!(segment_score(&model, &seg, 3).unwrap(), 4f64.ln());
    assert!(segment_score(&model, &seg, 4).is_err());
}

#[test]
fn clip_score_is_mean_of_segment_scores() {
    let config = ModelConfig::reduced();
    let model = Model::new(config.clone(), 2).unwrap();
    let ex = FeatureExtractor::new(&config).unwrap();
    let seg = config.segment_len();
    let samples = noise(3 * seg + 17, 3);
    let rec = clip_record(samples.clone(), 2, Condition::Normal, "fixture");
    let s = clip_score(&model, &ex, &rec).unwrap();
    assert_eq!(s.segment_scores.len(), 3);
    for (i, &v) in s.segment_scores.iter().enumerate() {
        let manual = segment_score(&model, &ex.extract(&samples[i * seg..]).unwrap(), 2).unwrap();
        assert!((v - manual).abs() < 1e-12);
    }
    assert!((s.score - s.segment_scores.iter().sum::<f64>() / 3.0).abs() < 1e-15);

    let reordered: Vec<f64> = [2, 0, 1]
        .iter()
        .flat_map(|&i| samples[i * seg..(i + 1) * seg].to_vec())
        .collect();
    let r = clip_score(
        &model,
        &ex,
        &clip_record(reordered, 2, Condition::Normal, "reordered"),
    )
    .unwrap();
    assert!((r.score - s.score).abs() < 1e-12);

    let short = clip_record(noise(seg - 1, 4), 0, Condition::Normal, "short.wav");
    match clip_score(&model, &ex, &short) {
        Err(Error::TooShort { what, .. }) => assert_eq!(what, "short.wav"),
        other => panic!("expected too-short, got {other:?}"),
    }
}

#[test]
fn scoring_is_independent_of_thread_count() {
    let config = ModelConfig::reduced();
    let model = Model::new(config.clone(), 3).unwrap();
    let recs: Vec<ClipRecord> = (0..7)
        .map(|i| {
            clip_record(
                noise(2 * config.segment_len(), i),
                i as usize % 4,
                Condition::Normal,
                "x",
            )
        })
        .collect();
    assert_eq!(
        score_records(&model, &recs, 1).unwrap(),
        score_records(&model, &recs, 3).unwrap()
    );
}

fn score(source: &str, id: usize, condition: Condition, segs: &[f64]) -> ScoreRecord {
    ScoreRecord {
        source: source.into(),
        machine_type: "fan".into(),
        machine_id: id,
        condition,
        score: segs.iter().sum::<f64>() / segs.len() as f64,
        segment_scores: segs.to_vec(),
    }
}

#[test]
fn scores_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.csv");
    let scores = vec![
        score("a.wav", 0, Condition::Normal, &[0.1, 0.2]),
        score("b,c.wav", 1, Condition::Anomaly, &[1.0 / 3.0]),
    ];
    write_scores(&path, &scores).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("source,machine_type,machine_id,condition,score,seg_0,seg_1\n"));
    assert_eq!(read_scores(&path).unwrap(), scores);
}

#[test]
fn report_groups_by_machine() {
    let scores = vec![
        score("a", 0, Condition::Anomaly, &[0.9]),
        score("b", 0, Condition::Anomaly, &[0.4]),
        score("c", 0, Condition::Normal, &[0.5]),
        score("d", 0, Condition::Normal, &[0.1]),
        score("e", 1, Condition::Anomaly, &[2.0]),
        score("f", 1, Condition::Normal, &[1.0]),
    ];
    let report = AucReport::from_scores(&scores).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows[0].auc, 0.75);
    assert_eq!(report.rows[1].auc, 1.0);
    assert!((report.mean() - 0.875).abs() < 1e-15);
    let table = report.render();
    assert!(
        table.contains("75.00") && table.contains("87.50"),
        "{table}"
    );
}

#[test]
fn embeddings_have_one_row_per_clip() {
    let config = ModelConfig::reduced();
    let model = Model::new(config.clone(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    write_embeddings(&path, &model, &[]).unwrap();
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        "source,machine_type,machine_id,condition,emb_0,emb_1,emb_2,emb_3\n"
    );
    let recs: Vec<ClipRecord> = (0..3)
        .map(|i| clip_record(noise(config.segment_len(), i), 0, Condition::Unknown, "y"))
        .collect();
    write_embeddings(&path, &model, &recs).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 8));
}
