use afg_core::corpus::{retrieve_topk, synth_generate, Example, Passage, SynthConfig, TaskKind};
use afg_core::eval::{exact_match, topk_recall, unigram_f1};
use afg_core::labeling::{cxmi_from_log_probs, label_split, strinc_label, LabelConfig};
use afg_core::model::{pack_input, E2eModel, Mode, ModelConfig, Vocab, SEP};
use afg_core::numerics::Tensor;
use afg_core::pseudo::{pseudo_recall, simulate_split, PromptKind, PseudoAnswer, PseudoSource, SimulatorConfig};
use afg_core::text::normalize_answer;
use afg_core::training::{loss_total, LossBreakdown};
use proptest::prelude::*;

const WORDS: &[&str] = &["a", "the", "an", "red", "blue", "river", "Zorb", "town", "is", "of", "x", "y"];

fn phrase(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec((prop::sample::select(WORDS), prop::sample::select(&["", "", ",", ".", "!"][..])), 1..max)
        .prop_map(|ws| ws.into_iter().map(|(w, p)| format!("{w}{p}")).collect::<Vec<_>>().join(" "))
}

fn passage(pid: String, text: String, rank: usize) -> Passage {
    Passage {
        pid,
        title: String::new(),
        text,
        rank,
        score: 0.0,
    }
}

fn example_with(passages: Vec<String>, pseudo: String, gold: String) -> Example {
    let n = passages.len();
    Example {
        id: "e".into(),
        task_kind: TaskKind::Qa,
        query: "what is the river of zorb ?".into(),
        gold_answers: vec![gold],
        passages: passages
            .into_iter()
            .enumerate()
            .map(|(i, t)| passage(format!("p{i}"), t, n - i))
            .collect(),
        pseudo: Some(PseudoAnswer {
            text: pseudo,
            prompt_kind: PromptKind::Concise,
            source: PseudoSource::Simulator,
        }),
        silver: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_shift_invariant(row in prop::collection::vec(-20.0f64..20.0, 1..12), c in -50.0f64..50.0) {
        let n = row.len();
        let a = Tensor::from_rows(1, n, row.clone()).unwrap().softmax_rows().unwrap();
        let b = Tensor::from_rows(1, n, row.iter().map(|v| v + c).collect()).unwrap().softmax_rows().unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn causal_softmax_rows_are_distributions(data in prop::collection::vec(-5.0f64..5.0, 16)) {
        let t = Tensor::from_rows(4, 4, data).unwrap().softmax_rows_masked(true).unwrap();
        for r in 0..4 {
            prop_assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(t.row(r)[r + 1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn cxmi_is_monotone_and_centered(l0 in -30.0f64..0.0, l1 in -30.0f64..0.0, d in 0.01f64..5.0) {
        let s = cxmi_from_log_probs(l1, l0);
        prop_assert!(s > 0.0 && s < 1.0);
        prop_assert!(cxmi_from_log_probs(l1 + d, l0) > s);
        prop_assert_eq!(cxmi_from_log_probs(l0, l0), 0.5);
    }

    #[test]
    fn loss_breakdown_identity(g in 0.0f64..50.0, c in 0.0f64..50.0, sigma in 0.0f64..=1.0) {
        let b = LossBreakdown::new(g, c, sigma);
        prop_assert_eq!(b.l_total, (1.0 - sigma) * g + sigma * c);
        prop_assert_eq!(loss_total(g, c, 0.0), g);
        prop_assert_eq!(loss_total(g, c, 1.0), c);
    }

    #[test]
    fn normalization_is_idempotent(s in phrase(10)) {
        let once = normalize_answer(&s);
        prop_assert_eq!(normalize_answer(&once), once.clone());
        prop_assert!(!once.contains("  "));
    }

    #[test]
    fn metric_bounds_and_identities(pred in phrase(6), gold in phrase(6)) {
        let golds = vec![gold.clone()];
        let f1 = unigram_f1(&pred, &golds);
        prop_assert!((0.0..=1.0).contains(&f1));
        prop_assert_eq!(f1, unigram_f1(&gold, &[pred.clone()]));
        if exact_match(&pred, &golds) == 1 {
            prop_assert_eq!(f1, 1.0);
        }
        if !normalize_answer(&pred).is_empty() {
            prop_assert_eq!(exact_match(&pred, &[pred.clone()]), 1);
            prop_assert_eq!(unigram_f1(&pred, &[pred.clone()]), 1.0);
        }
    }

    #[test]
    fn topk_recall_monotone(texts in prop::collection::vec(phrase(8), 1..7), gold in phrase(3)) {
        let ex = example_with(texts.clone(), "x".into(), gold);
        let mut prev = 0;
        for k in 1..=texts.len() + 1 {
            let r = topk_recall(&ex, k);
            prop_assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn retrieve_matches_brute_force(query in phrase(6), texts in prop::collection::vec(phrase(8), 1..10), k in 1usize..12) {
        let corpus: Vec<Passage> = texts.iter().enumerate().map(|(i, t)| passage(format!("p{i:02}"), t.clone(), 0)).collect();
        let got = retrieve_topk(&query, &corpus, k).unwrap();

        let words = |s: &str| -> Vec<String> {
            let mut w: Vec<String> = normalize_answer(s).split(' ').filter(|t| !t.is_empty()).map(String::from).collect();
            w.sort();
            w.dedup();
            w
        };
        let q = words(&query);
        let mut all: Vec<(usize, String)> = corpus
            .iter()
            .map(|p| (words(&p.text).iter().filter(|w| q.contains(w)).count(), p.pid.clone()))
            .collect();
        all.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        all.truncate(k);

        prop_assert_eq!(got.len(), all.len());
        for (i, (p, (score, pid))) in got.iter().zip(&all).enumerate() {
            prop_assert_eq!(&p.pid, pid);
            prop_assert_eq!(p.score, *score as f64);
            prop_assert_eq!(p.rank, i + 1);
        }
    }

    #[test]
    fn packed_spans_are_ordered_and_fit(
        texts in prop::collection::vec(phrase(30), 1..6),
        pseudo in phrase(8),
        max_len in 12usize..80,
    ) {
        let ex = example_with(texts.clone(), pseudo.clone(), "river".into());
        let vocab = Vocab::from_examples([&ex]);
        let Ok(f) = pack_input(&ex, &vocab, Mode::E2e, max_len) else {
            return Ok(());
        };
        prop_assert!(f.len() <= max_len);
        let q = vocab.encode(&ex.query);
        prop_assert_eq!(&f.ids[f.spans.query.clone()], q.as_slice());
        let s = f.spans.pseudo.clone().unwrap();
        prop_assert_eq!(f.ids[s.start - 1], SEP);
        prop_assert!(!s.is_empty());
        let mut end = s.end;
        for (span, &src) in f.spans.passages.iter().zip(&f.spans.passage_source) {
            prop_assert_eq!(span.start, end + 1);
            prop_assert_eq!(f.ids[end], SEP);
            prop_assert!(!span.is_empty());
            let full = vocab.encode(&ex.passages[src].text);
            prop_assert_eq!(&f.ids[span.clone()], &full[..span.len()]);
            end = span.end;
        }
        prop_assert_eq!(end, f.len());
        let ranks: Vec<usize> = f.spans.passage_source.iter().map(|&i| ex.passages[i].rank).collect();
        prop_assert!(ranks.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(ranks.len(), texts.len());
    }
}

fn small_synth(distractor_rate: f64) -> SynthConfig {
    SynthConfig {
        n_entities: 10,
        n_train: 40,
        n_dev: 10,
        n_test: 10,
        distractor_rate,
        ..SynthConfig::default()
    }
}

#[test]
fn synth_and_simulator_are_seed_determined() {
    let a = synth_generate(&small_synth(0.3), 5).unwrap();
    let b = synth_generate(&small_synth(0.3), 5).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.world, b.world);
    let c = synth_generate(&small_synth(0.3), 6).unwrap();
    assert_ne!(a.train, c.train);

    let (mut x, mut y) = (a.train.clone(), b.train.clone());
    simulate_split(&mut x, &SimulatorConfig::default(), &a.world, "train").unwrap();
    simulate_split(&mut y, &SimulatorConfig::default(), &b.world, "train").unwrap();
    assert_eq!(x, y);
}

#[test]
fn gold_always_retrievable_without_distractors() {
    let out = synth_generate(&small_synth(0.0), 1).unwrap();
    for ex in out.train.iter().chain(&out.dev) {
        assert_eq!(topk_recall(ex, ex.k()), 1, "{}", ex.id);
    }
}

#[test]
fn pseudo_recall_is_mean_strinc() {
    let mut out = synth_generate(&small_synth(0.3), 2).unwrap();
    simulate_split(&mut out.train, &SimulatorConfig::default(), &out.world, "train").unwrap();
    let manual = out
        .train
        .iter()
        .map(|e| f64::from(strinc_label(&e.pseudo.as_ref().unwrap().text, &e.gold_answers)))
        .sum::<f64>()
        / out.train.len() as f64;
    assert_eq!(pseudo_recall(&out.train).unwrap(), manual);
}

fn tiny_model(examples: &[Example]) -> E2eModel {
    let config = ModelConfig {
        d_model: 8,
        d_k: 8,
        d_ff: 16,
        n_heads: 2,
        n_layers_enc: 1,
        n_layers_dec: 1,
        max_input_len: 128,
        max_output_len: 6,
        ..ModelConfig::default()
    };
    E2eModel::new(config, Vocab::from_examples(examples), 3).unwrap()
}

fn labeled_examples() -> Vec<Example> {
    let mut out = synth_generate(&small_synth(0.3), 4).unwrap();
    simulate_split(&mut out.train, &SimulatorConfig::default(), &out.world, "train").unwrap();
    label_split(&mut out.train, &LabelConfig::default(), None).unwrap();
    out.train.truncate(6);
    out.train
}

#[test]
fn next_token_distribution_sums_to_one() {
    let exs = labeled_examples();
    let model = tiny_model(&exs);
    for ex in &exs {
        let enc = model.encode(&model.pack(ex, Mode::E2e).unwrap()).unwrap();
        for prefix in [vec![0], vec![0, 5, 7]] {
            let lp = model.next_token_log_probs(&enc, &prefix).unwrap();
            let total: f64 = lp.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn cls_weights_never_change_generation() {
    let exs = labeled_examples();
    let mut model = tiny_model(&exs);
    let before: Vec<_> = exs.iter().map(|e| model.answer(e, Mode::E2e).unwrap()).collect();
    let enc0 = model.encode(&model.pack(&exs[0], Mode::E2e).unwrap()).unwrap();
    let cls0 = model.cls_forward(&enc0).unwrap();
    for name in model.cls_param_names() {
        let id = model.params.id(&name).unwrap();
        for v in model.params.get_mut(id).value.data_mut() {
            *v += 0.37;
        }
    }
    let after: Vec<_> = exs.iter().map(|e| model.answer(e, Mode::E2e).unwrap()).collect();
    assert_eq!(before, after);
    assert_ne!(model.cls_forward(&enc0).unwrap(), cls0);
}

#[test]
fn lexical_threshold_is_inclusive() {
    use afg_core::labeling::lexical_label;
    let golds = vec!["red river".to_string()];
    assert_eq!(lexical_label("the red town .", &golds, 0.5).unwrap(), (1, 0.5));
    assert_eq!(lexical_label("the red town .", &golds, 0.5000001).unwrap().0, 0);
}
