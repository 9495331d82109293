use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;

use schemex::data::parse_dataset;
use schemex::decode::{decode_ie, ScoreMatrix, TypedSpan};
use schemex::engine::{extract, extract_traced, plan_level, OracleScorer, supervision, train, ExtractConfig, TrainConfig};
use schemex::model::checkpoint::{read_checkpoint, write_checkpoint};
use schemex::model::optim::OptimConfig;
use schemex::model::{circle_loss, Model, ModelConfig};
use schemex::query::{path_labels, Passage, PathElement, PrefixGroup, QueryBuilder, QueryConfig, TargetMatrix};
use schemex::schema::parse_schema;
use schemex::tokenize::Vocab;
use schemex::{Mode, Model64};

const SCHEMA: &str = r#"{"person": {"work for ( organization )": null, "live in ( location )": null}, "organization": {"based in ( location )": null}, "location": null}"#;
const PERMUTED: &str = r#"{"location": null, "organization": {"based in ( location )": null}, "person": {"live in ( location )": null, "work for ( organization )": null}}"#;
const TEXTS: [&str; 3] = [
    "John Smith works for Acme Corp in Paris .",
    "Acme Corp is based in Berlin , near Mary Jones .",
    "Lee Chan lives in Oslo and met Tom Hale .",
];

fn toy_model(vocab: &Vocab, layers: usize, seed: u64) -> Model64 {
    let config = ModelConfig {
        vocab_size: vocab.len(),
        hidden: 16,
        heads: 2,
        layers,
        ffn: 32,
        head_dim: 8,
        max_len: 128,
        final_norm: true,
        rotary: true,
    };
    Model::init(config, seed, 0.5).unwrap()
}

fn small_config() -> ExtractConfig {
    ExtractConfig {
        query: QueryConfig {
            max_len: 128,
            max_prompt_len: 64,
            isolation: true,
        },
        ..ExtractConfig::default()
    }
}

const GOLD: &str = r#"{"text": "John Smith works for Acme Corp in Paris .", "paths": [[{"type": "person", "start": 0, "end": 10}, {"type": "work for ( organization )", "start": 21, "end": 30}], [{"type": "person", "start": 0, "end": 10}, {"type": "live in ( location )", "start": 34, "end": 39}], [{"type": "organization", "start": 21, "end": 30}, {"type": "based in ( location )", "start": 34, "end": 39}], [{"type": "location", "start": 34, "end": 39}]]}
{"text": "Lee Chan lives in Oslo and met Tom Hale .", "paths": [[{"type": "person", "start": 0, "end": 8}, {"type": "live in ( location )", "start": 18, "end": 22}], [{"type": "person", "start": 31, "end": 39}], [{"type": "location", "start": 18, "end": 22}]]}"#;

#[test]
fn extraction_ignores_sibling_order() {
    let a = parse_schema(SCHEMA).unwrap();
    let b = parse_schema(PERMUTED).unwrap();
    let va = Vocab::build(&TEXTS, &a.labels()).unwrap();
    let vb = Vocab::build(&TEXTS, &b.labels()).unwrap();
    assert_eq!(va, vb);
    let examples = parse_dataset(GOLD, &a).unwrap();
    let oracle = OracleScorer::from_examples(&examples);
    for budget in [16, 24, 64] {
        let cfg = ExtractConfig {
            query: QueryConfig {
                max_prompt_len: budget,
                ..small_config().query
            },
            ..small_config()
        };
        for ex in &examples {
            let mut ta = Vec::new();
            let pa = extract_traced(&QueryBuilder::new(&a, &va, cfg.query), &oracle, &ex.text, &cfg, Some(&mut ta)).unwrap();
            let pb = extract(&QueryBuilder::new(&b, &vb, cfg.query), &oracle, &ex.text, &cfg).unwrap();
            assert_eq!(pa, pb, "{budget}: {}", ex.text);
            let mut got: Vec<_> = pa.into_iter().map(|p| p.elements).collect();
            let mut want = ex.gold_paths();
            got.sort();
            want.sort();
            assert_eq!(got, want);
            if budget == 16 {
                assert!(ta.len() > a.depth());
            }
        }
    }
}

#[test]
fn plan_ignores_prior_order() {
    let schema = parse_schema(SCHEMA).unwrap();
    let vocab = Vocab::build(&TEXTS, &schema.labels()).unwrap();
    let qb = QueryBuilder::new(&schema, &vocab, QueryConfig::default());
    let passage = Passage::new(&vocab, TEXTS[0]);
    let p1 = vec![PathElement::span("person", 0, 10, "John Smith")];
    let p2 = vec![PathElement::span("organization", 21, 30, "Acme Corp")];
    let fwd = plan_level(&qb, 2, &[p1.clone(), p2.clone()], &passage).unwrap();
    let rev = plan_level(&qb, 2, &[p2, p1], &passage).unwrap();
    let groups = |p: &schemex::engine::LevelPlan| p.groups.iter().cloned().map(|g| (g.path, g.types)).collect::<BTreeSet<_>>();
    assert_eq!(groups(&fwd), groups(&rev));
    assert_eq!(fwd.queries.len(), 1);
}

#[test]
fn paths_respect_schema_depth() {
    let schema = parse_schema(SCHEMA).unwrap();
    let vocab = Vocab::build(&TEXTS, &schema.labels()).unwrap();
    let model = toy_model(&vocab, 1, 3);
    let cfg = ExtractConfig {
        delta_ie: -1e30,
        ..small_config()
    };
    let qb = QueryBuilder::new(&schema, &vocab, cfg.query);
    let paths = extract(&qb, &model, TEXTS[1], &cfg).unwrap();
    assert!(paths.iter().any(|p| p.elements.len() == 2));
    for p in &paths {
        assert!(p.elements.len() <= schema.depth());
        assert!(schema.node_at(&path_labels(&p.elements)).is_ok());
        for el in &p.elements {
            let s = el.span.as_ref().unwrap();
            assert!(s.start < s.end && s.end <= TEXTS[1].chars().count());
        }
    }
}

#[test]
fn isolation_off_is_plain_sequence() {
    let schema = parse_schema(SCHEMA).unwrap();
    let vocab = Vocab::build(&TEXTS, &schema.labels()).unwrap();
    let cfg = QueryConfig {
        isolation: false,
        ..QueryConfig::default()
    };
    let qb = QueryBuilder::new(&schema, &vocab, cfg);
    let groups = vec![
        PrefixGroup::from_schema(&schema, vec![PathElement::span("person", 0, 10, "John Smith")]).unwrap(),
        PrefixGroup::from_schema(&schema, vec![PathElement::span("organization", 21, 30, "Acme Corp")]).unwrap(),
    ];
    let q = qb.build_query(groups, &Passage::new(&vocab, TEXTS[0]), Mode::Extract).unwrap();
    assert!(q.attention_mask.iter().all(|&m| m));
    let esi = q.esi_len();
    assert_eq!(&q.position_ids[..esi], (0..esi).collect::<Vec<_>>().as_slice());
}

#[test]
fn first_epoch_loss_is_summed_circle_loss() {
    let schema = parse_schema(SCHEMA).unwrap();
    let records = r#"{"text": "John Smith works for Acme Corp in Paris .", "paths": [[{"type": "person", "start": 0, "end": 10}, {"type": "work for ( organization )", "start": 21, "end": 30}], [{"type": "location", "start": 34, "end": 39}]]}
{"text": "Lee Chan lives in Oslo and met Tom Hale .", "paths": [[{"type": "person", "start": 0, "end": 8}, {"type": "live in ( location )", "start": 18, "end": 22}]]}"#;
    let examples = parse_dataset(records, &schema).unwrap();
    let vocab = Vocab::build(&TEXTS, &schema.labels()).unwrap();
    let ecfg = small_config();
    let mut model = toy_model(&vocab, 1, 5);
    let expected: f64 = examples
        .iter()
        .flat_map(|ex| supervision(&schema, &vocab, ecfg.query, ex).unwrap())
        .map(|(q, t)| model.loss(&q, &t).unwrap())
        .sum();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let logs = train(&mut model, &schema, &vocab, &examples, &ecfg, &cfg, |_| {}).unwrap();
    assert!((logs[0].loss - expected).abs() <= 1e-9 * expected.abs());
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let schema = parse_schema(SCHEMA).unwrap();
    let records = r#"{"text": "John Smith works for Acme Corp in Paris .", "paths": [[{"type": "person", "start": 0, "end": 10}, {"type": "work for ( organization )", "start": 21, "end": 30}], [{"type": "location", "start": 34, "end": 39}]]}"#;
    let examples = parse_dataset(records, &schema).unwrap();
    let vocab = Vocab::build(&TEXTS, &schema.labels()).unwrap();
    let ecfg = small_config();
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 1,
        eval_every: 0,
        optim: OptimConfig {
            learning_rate: 1e-2,
            ..OptimConfig::default()
        },
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = Model::<f32>::init(toy_model(&vocab, 1, 5).config, 5, 0.1).unwrap();
        let logs = train(&mut m, &schema, &vocab, &examples, &ecfg, &cfg, |_| {}).unwrap();
        (m, logs)
    };
    let (m1, l1) = run();
    let (m2, l2) = run();
    assert!(l1.last().unwrap().loss < l1[0].loss);
    assert_eq!(l1, l2);
    let bytes = |m: &Model<f32>| {
        let mut b = Vec::new();
        write_checkpoint(&mut b, m).unwrap();
        b
    };
    assert_eq!(bytes(&m1), bytes(&m2));
    let back: Model<f32> = read_checkpoint(&mut bytes(&m1).as_slice()).unwrap();
    assert_eq!(back, m1);
}

fn mask_and_values(n: usize, seed: &[i8]) -> (Array2<bool>, Array2<f64>) {
    let mask = Array2::from_shape_fn((n, n), |(i, j)| i <= j);
    let values = Array2::from_shape_fn((n, n), |(i, j)| f64::from(seed[(i * n + j) % seed.len()]) / 4.0);
    (mask, values)
}

proptest! {
    #[test]
    fn loss_moves_with_cell_direction(seed in prop::collection::vec(-12i8..12, 1..40), n in 2usize..7, cell in 0usize..49, bump in 0.01f64..3.0) {
        let (mask, values) = mask_and_values(n, &seed);
        let cells = Array2::from_shape_fn((n, n), |(i, j)| mask[[i, j]] && (i + 2 * j) % 3 == 0);
        let target = TargetMatrix { cells };
        let (i, j) = ((cell / 7) % n, cell % n);
        prop_assume!(mask[[i, j]]);
        let z = ScoreMatrix::masked(&values, &mask);
        let before = circle_loss(&z, &target, &mask).unwrap();
        let mut up = z.clone();
        up.values[[i, j]] += bump;
        let after = circle_loss(&up, &target, &mask).unwrap();
        if target.cells[[i, j]] {
            prop_assert!(after < before);
        } else {
            prop_assert!(after > before);
        }
    }

    #[test]
    fn higher_threshold_never_adds_spans(seed in prop::collection::vec(-12i8..12, 1..60), words in 1usize..12, lo in -3.0f64..3.0, gap in 0.0f64..3.0) {
        let schema = parse_schema(r#"{"a": null, "b": null, "c": null}"#).unwrap();
        let text = vec!["w"; words].join(" ");
        let vocab = Vocab::build(&[text.as_str()], &schema.labels()).unwrap();
        let qb = QueryBuilder::new(&schema, &vocab, QueryConfig::default());
        let q = qb.build_query(vec![PrefixGroup::from_schema(&schema, vec![]).unwrap()], &Passage::new(&vocab, text.as_str()), Mode::Extract).unwrap();
        let n = q.len();
        let raw = Array2::from_shape_fn((n, n), |(i, j)| f64::from(seed[(i * 31 + j * 7) % seed.len()]) / 4.0);
        let z = ScoreMatrix::masked(&raw, &q.scoring_mask);
        let low: BTreeSet<TypedSpan> = decode_ie(&z, &q, lo).into_iter().collect();
        let high: BTreeSet<TypedSpan> = decode_ie(&z, &q, lo + gap).into_iter().collect();
        prop_assert!(high.is_subset(&low));
    }
}
