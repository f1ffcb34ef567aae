use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use tsr_core::collection::{collection_from_docs, CaptionDoc, EmptyCaptionPolicy};
use tsr_core::features::FeatureStore;
use tsr_core::kbest::{Hypothesis, KBestList};
use tsr_core::pipeline::{run_corpus, QueryInfo, RunParams, Sentence};
use tsr_core::rerank::{select_best, RerankParams};
use tsr_core::retrieval::{score_cnn, score_hca, score_txt, Mode, Query, RetrievalParams, Retriever};
use tsr_core::textcore::{Scaled, TokenSeq};
use tsr_core::tune::{stepwise_search, GridSpec, PipelineObjective};

fn words(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0u8..12).prop_map(|w| format!("w{w}")), 1..max)
}

fn weights() -> HashMap<String, f64> {
    (0..12).map(|i| (format!("w{i}"), 0.25 + i as f64 * 0.3)).collect()
}

fn kbest(hyps: Vec<Vec<String>>) -> KBestList {
    let list = hyps
        .into_iter()
        .enumerate()
        .map(|(i, t)| Hypothesis::new(TokenSeq::new(t).unwrap(), -(i as f64) * 0.5).unwrap())
        .collect();
    KBestList::new("s", list).unwrap()
}

#[derive(Debug, Clone)]
struct Toy {
    docs: Vec<(Vec<String>, u8, Vec<u8>)>,
    points: Vec<(f32, f32)>,
    hyps: Vec<Vec<String>>,
    query_image: u8,
}

fn toy() -> impl Strategy<Value = Toy> {
    (
        prop::collection::vec((words(8), 0u8..6, prop::collection::vec(0u8..3, 0..3)), 1..40),
        prop::collection::vec((0.0f32..50.0, 0.0f32..50.0), 6),
        prop::collection::vec(words(7), 1..6),
        0u8..6,
    )
        .prop_map(|(docs, points, hyps, query_image)| Toy {
            docs,
            points,
            hyps,
            query_image,
        })
}

fn build(t: &Toy) -> (tsr_core::Collection, FeatureStore) {
    let docs = t.docs.iter().enumerate().map(|(i, (tokens, img, cats))| {
        CaptionDoc::new(format!("c{i:03}"), format!("img{img}"), TokenSeq::new(tokens.clone()).unwrap())
            .with_categories(cats.iter().map(|c| format!("cat{c}")))
    });
    let coll = collection_from_docs(docs, EmptyCaptionPolicy::Reject).unwrap();
    let mut feats = FeatureStore::new();
    for (i, (x, y)) in t.points.iter().enumerate() {
        feats.insert(format!("img{i}"), vec![*x, *y]).unwrap();
    }
    (coll, feats)
}

proptest! {
    #[test]
    fn cnn_never_exceeds_txt_and_decays_with_distance(
        m in words(8), n in prop::collection::vec(words(6), 1..4),
        v1 in 0.0f32..100.0, v2 in 0.0f32..100.0, b in 0.0f64..0.5,
    ) {
        let w = weights();
        let doc = CaptionDoc::new("m", "i", TokenSeq::new(m).unwrap());
        let hyps: Vec<Hypothesis> = n.into_iter().map(|t| Hypothesis::new(TokenSeq::new(t).unwrap(), 0.0).unwrap()).collect();
        let params = RetrievalParams { b, ..RetrievalParams::defaults(Mode::Cnn) };
        let at = |v: f32| {
            let mut f = FeatureStore::new();
            f.insert("q", vec![0.0]).unwrap();
            f.insert("i", vec![v]).unwrap();
            score_cnn(&doc, &hyps, "q", &f, &w, &params).unwrap()
        };
        let txt = score_txt(&doc, &hyps, &w);
        let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
        prop_assert!(at(lo) <= txt);
        prop_assert!(at(hi) <= at(lo));
        prop_assert_eq!(at(0.0), txt);
        if f64::from(hi) >= params.d {
            prop_assert_eq!(at(hi), 0.0);
        }
    }

    #[test]
    fn hca_is_gated_text_score(
        m in words(8), n in words(6),
        a in prop::collection::btree_set(0u8..3, 0..3), q in prop::collection::btree_set(0u8..3, 0..3),
    ) {
        let w = weights();
        let doc = CaptionDoc::new("m", "i", TokenSeq::new(m).unwrap()).with_categories(a.iter().map(|c| c.to_string()));
        let hyps = [Hypothesis::new(TokenSeq::new(n).unwrap(), 0.0).unwrap()];
        let qs: BTreeSet<String> = q.iter().map(|c| c.to_string()).collect();
        let s = score_hca(&doc, &hyps, Some(&qs), &w);
        let txt = score_txt(&doc, &hyps, &w);
        prop_assert!(s == 0.0 || s == txt);
    }

    #[test]
    fn match_lists_hold_only_positive_scores(t in toy(), k_m in 1usize..20, d in 1.0f64..80.0) {
        let (coll, feats) = build(&t);
        let w = weights();
        let retr = Retriever::new(&coll, &feats, &w);
        let list = kbest(t.hyps.clone());
        let img = format!("img{}", t.query_image);
        let cats: BTreeSet<String> = t.docs[0].2.iter().map(|c| format!("cat{c}")).collect();
        let query = Query { image_id: Some(&img), categories: Some(&cats) };
        for mode in Mode::ALL {
            let params = RetrievalParams { k_n: 10, k_m, b: 0.01, d };
            let got = retr.retrieve(&list, &query, mode, &params).unwrap();
            prop_assert!(got.len() <= k_m);
            prop_assert!(got.matches.iter().all(|m| m.score > 0.0));
            let positive = coll.docs().iter().filter(|doc| score_txt(doc, list.hyps(), &w) > 0.0).count();
            prop_assert!(got.len() <= positive);
            for pair in got.matches.windows(2) {
                prop_assert!(pair[0].score >= pair[1].score);
            }
        }
    }

    #[test]
    fn empty_feature_store_makes_cnn_equal_txt(t in toy()) {
        let (coll, _) = build(&t);
        let empty = FeatureStore::new();
        let w = weights();
        let retr = Retriever::new(&coll, &empty, &w);
        let list = kbest(t.hyps.clone());
        let img = format!("img{}", t.query_image);
        let query = Query { image_id: Some(&img), categories: None };
        let params = RetrievalParams::defaults(Mode::Cnn);
        let txt = retr.retrieve(&list, &query, Mode::Txt, &params).unwrap();
        let cnn = retr.retrieve(&list, &query, Mode::Cnn, &params).unwrap();
        prop_assert!(cnn.used_fallback);
        let a: Vec<(u32, u64)> = txt.matches.iter().map(|m| (m.doc_id, m.score.to_bits())).collect();
        let b: Vec<(u32, u64)> = cnn.matches.iter().map(|m| (m.doc_id, m.score.to_bits())).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn choice_stays_within_k_r_and_survives_joint_rescaling(
        t in toy(), k_r in 1usize..6, lambda in 0.0f64..50.0, c in prop::sample::select(vec![0.5, 2.0, 4.0, 8.0]),
    ) {
        let (coll, feats) = build(&t);
        let w = weights();
        let retr = Retriever::new(&coll, &feats, &w);
        let list = kbest(t.hyps.clone());
        let query = Query::default();
        let matches = retr.retrieve(&list, &query, Mode::Txt, &RetrievalParams::defaults(Mode::Txt)).unwrap();
        let out = select_best(&list, &matches, &w, &RerankParams { k_r, lambda }).unwrap();
        prop_assert!(out.decoder_rank_of_chosen <= k_r.min(list.len()));
        prop_assert_eq!(&out.chosen, &list.hyps()[out.decoder_rank_of_chosen - 1]);
        let scaled = Scaled { inner: &w, factor: c };
        let out2 = select_best(&list, &matches, &scaled, &RerankParams { k_r, lambda: lambda / c }).unwrap();
        prop_assert_eq!(out.decoder_rank_of_chosen, out2.decoder_rank_of_chosen);
    }
}

fn dev_set() -> (tsr_core::Collection, Vec<Sentence>, Vec<TokenSeq>) {
    let captions = [
        "a dog runs on the grass",
        "a brown dog plays in the park",
        "a cat sleeps on the couch",
        "a black cat on a red couch",
        "a man rides a bike down the street",
        "a person riding a bicycle on the road",
    ];
    let docs = captions
        .iter()
        .enumerate()
        .map(|(i, c)| CaptionDoc::new(format!("c{i}"), format!("img{}", i / 2), TokenSeq::parse(c)));
    let coll = collection_from_docs(docs, EmptyCaptionPolicy::Reject).unwrap();
    let lists = [
        vec![("a hound runs on the grass", -1.0), ("a dog runs on the grass", -1.5), ("a dog run grass", -2.0)],
        vec![("a kitty sleeps on the couch", -1.0), ("a cat sleeps on the couch", -1.2), ("cat couch", -3.0)],
        vec![("a man drives a bike down the street", -0.5), ("a man rides a bike down the street", -0.9), ("man bike", -2.0)],
    ];
    let refs = ["a dog runs on the grass", "a cat sleeps on the couch", "a man rides a bike down the street"];
    let sentences = lists
        .iter()
        .enumerate()
        .map(|(i, l)| Sentence {
            kbest: KBestList::new(
                format!("s{i}"),
                l.iter().map(|(t, s)| Hypothesis::new(TokenSeq::parse(t), *s).unwrap()).collect(),
            )
            .unwrap(),
            query: QueryInfo::default(),
        })
        .collect();
    (coll, sentences, refs.iter().map(|r| TokenSeq::parse(r)).collect())
}

#[test]
fn tuner_on_pipeline_objective() {
    let (coll, sentences, refs) = dev_set();
    let feats = FeatureStore::new();
    let w = weights_for(&coll);
    let retr = Retriever::new(&coll, &feats, &w);
    let objective = PipelineObjective::new(&retr, &sentences, refs.iter().collect(), Mode::Txt).unwrap();
    let grid = GridSpec {
        k_n: vec![1, 2, 3],
        k_m: vec![1, 4],
        // A pass starting at k_r = 1 or λ = 0 ties everywhere and never
        // leaves its starting point.
        k_r: vec![3, 1],
        lambda: vec![10.0, 0.0, 100.0],
        d: Some(vec![80.0, 90.0]),
    };
    let a = stepwise_search(&grid, Mode::Txt, &objective).unwrap();
    let b = stepwise_search(&grid, Mode::Txt, &objective).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trace.len(), 3 + 2 + 2 + 3);
    let initial = a.trace[0].bleu;
    assert!(a.best_bleu >= initial);
    let max = a.trace.iter().map(|t| t.bleu).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.best_bleu, max);
    // Reranking towards captions fixes the first two sentences.
    assert!(a.best.rerank.lambda > 0.0 && a.best.rerank.k_r == 3);
    let mut p = RunParams::defaults(Mode::Txt);
    p.retrieval = a.best.retrieval;
    p.rerank = a.best.rerank;
    let out = run_corpus(&retr, &sentences, &p).unwrap();
    assert_eq!(out[0].output.chosen.tokens, refs[0]);
    assert_eq!(out[1].output.chosen.tokens, refs[1]);

    let deep = GridSpec { k_n: vec![4], ..grid };
    assert!(stepwise_search(&deep, Mode::Txt, &objective).is_err());
}

fn weights_for(coll: &tsr_core::Collection) -> HashMap<String, f64> {
    let n = coll.len() as f64;
    (0..coll.vocab_size() as u32)
        .map(|t| (coll.term(t).to_string(), (n / coll.postings(t).len() as f64).ln() + 0.1))
        .collect()
}
