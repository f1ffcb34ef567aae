use std::fs::{self, File};
use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use tsr_core::collection::{ingest_collection, Collection, EmptyCaptionPolicy};
use tsr_core::evalsig::approx_randomization;
use tsr_core::features::{load_features, FeatureStore};
use tsr_core::kbest::{self, read_kbest};
use tsr_core::pipeline::{
    align_matchlists, attach_queries, evaluate, fallback_count, paired_stats, read_queries, rerank_all, retrieve_all,
    write_diagnostics, write_outputs, BleuReport, CompareReport, Segments, Sentence, SentenceOutcome,
};
use tsr_core::retrieval::{read_matchlists, write_matchlists, Retriever};
use tsr_core::textcore::{build_idf_from_reader, IdfTable};
use tsr_core::tune::{stepwise_search, GridSpec, PipelineObjective, TuneResult};
use tsr_core::{Mode, TokenSeq};

use crate::config::PipelineConfig;

pub const MATCHES_FILE: &str = "matches.txt";
pub const OUTPUT_FILE: &str = "output.txt";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";
pub const BLEU_FILE: &str = "bleu.txt";
pub const CONFIG_FILE: &str = "config.toml";
pub const TRACE_FILE: &str = "trace.tsv";
pub const TUNED_FILE: &str = "tuned.toml";

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn policy(skip: bool) -> EmptyCaptionPolicy {
    if skip {
        EmptyCaptionPolicy::SkipWithWarning
    } else {
        EmptyCaptionPolicy::Reject
    }
}

pub fn extract_idf(corpus: &Path, out: &Path) -> Result<()> {
    let table = build_idf_from_reader(open(corpus)?).with_context(|| format!("reading {}", corpus.display()))?;
    table.write_to(create(out)?)?;
    println!("doc_count\t{}", table.doc_count());
    println!("vocab_size\t{}", table.vocab_size());
    Ok(())
}

fn ingest(path: &Path, skip_empty: bool) -> Result<Collection> {
    ingest_collection(open(path)?, policy(skip_empty)).with_context(|| format!("reading {}", path.display()))
}

pub fn build_index(collection: &Path, out: &Path, skip_empty: bool) -> Result<()> {
    let coll = ingest(collection, skip_empty)?;
    coll.write_index(create(out)?)?;
    println!("captions\t{}", coll.len());
    println!("images\t{}", coll.num_images());
    println!("vocab_size\t{}", coll.vocab_size());
    Ok(())
}

/// Everything a retrieval or reranking stage reads.
struct Inputs {
    collection: Collection,
    features: FeatureStore,
    idf: IdfTable,
    sentences: Vec<Sentence>,
}

fn load_inputs(cfg: &PipelineConfig, with_features: bool) -> Result<Inputs> {
    let collection = match (&cfg.index, &cfg.collection) {
        (Some(index), _) => {
            Collection::read_index(open(index)?).with_context(|| format!("reading index {}", index.display()))?
        }
        (None, Some(path)) => ingest(path, cfg.skip_empty_captions)?,
        (None, None) => bail!("missing input: pass --collection or --index"),
    };
    if cfg.mode == Mode::Hca && !collection.has_categories() {
        bail!("HCA mode needs category annotations in the collection");
    }
    let features = if with_features && cfg.mode == Mode::Cnn {
        let path = cfg.require(&cfg.features, "features")?;
        load_features(open(path)?, None).with_context(|| format!("reading {}", path.display()))?
    } else {
        FeatureStore::new()
    };
    let idf_path = cfg.require(&cfg.idf, "idf")?;
    let idf = IdfTable::read_from(open(idf_path)?).with_context(|| format!("reading {}", idf_path.display()))?;
    let kbest_path = cfg.require(&cfg.kbest, "kbest")?;
    let lists = read_kbest(open(kbest_path)?).with_context(|| format!("reading {}", kbest_path.display()))?;
    let required = cfg.retrieval.k_n.max(cfg.rerank.k_r);
    let depth = kbest::depth(&lists);
    if depth < required {
        bail!("k-best depth {depth} is below max(k_n, k_r) = {required}; lower --k-n/--k-r or supply deeper lists");
    }
    let queries = match &cfg.queries {
        Some(path) => read_queries(open(path)?).with_context(|| format!("reading {}", path.display()))?,
        None => {
            if cfg.mode != Mode::Txt {
                warn!("no queries file: every sentence will fall back to text-only retrieval");
            }
            Default::default()
        }
    };
    let sentences = attach_queries(lists, &queries);
    info!(
        "{} captions, {} sentences, mode {}",
        collection.len(),
        sentences.len(),
        cfg.mode
    );
    Ok(Inputs {
        collection,
        features,
        idf,
        sentences,
    })
}

fn report_fallbacks(outcomes: &[SentenceOutcome]) {
    println!("sentences\t{}", outcomes.len());
    println!("fallbacks\t{}", fallback_count(outcomes));
}

pub fn retrieve(cfg: &PipelineConfig) -> Result<()> {
    let inputs = load_inputs(cfg, true)?;
    cfg.persist(CONFIG_FILE)?;
    let retriever = Retriever::new(&inputs.collection, &inputs.features, &inputs.idf);
    let lists = retrieve_all(&retriever, &inputs.sentences, cfg.mode, &cfg.retrieval)?;
    write_matchlists(create(&cfg.output_dir.join(MATCHES_FILE))?, &lists)?;
    println!("sentences\t{}", lists.len());
    println!("fallbacks\t{}", lists.iter().filter(|l| l.used_fallback).count());
    Ok(())
}

fn write_run_outputs(cfg: &PipelineConfig, outcomes: &[SentenceOutcome], diagnostics: bool) -> Result<()> {
    write_outputs(create(&cfg.output_dir.join(OUTPUT_FILE))?, outcomes)?;
    if diagnostics {
        write_diagnostics(create(&cfg.output_dir.join(DIAGNOSTICS_FILE))?, outcomes)?;
    }
    report_fallbacks(outcomes);
    if let Some(path) = &cfg.references {
        let refs = Segments::read(open(path)?).with_context(|| format!("reading {}", path.display()))?;
        let report = BleuReport {
            stats: evaluate(&Segments::from_outcomes(outcomes), &refs)?,
            sentences: refs.len(),
        };
        fs::write(cfg.output_dir.join(BLEU_FILE), format!("{report}\n"))?;
        println!("{report}");
    }
    Ok(())
}

pub fn rerank(cfg: &PipelineConfig, matches: Option<&Path>, diagnostics: bool) -> Result<()> {
    let inputs = load_inputs(cfg, false)?;
    let default_matches = cfg.output_dir.join(MATCHES_FILE);
    let path = matches.unwrap_or(&default_matches);
    let lists = read_matchlists(open(path)?, &inputs.collection, cfg.mode)
        .with_context(|| format!("reading {}", path.display()))?;
    let lists = align_matchlists(&inputs.sentences, lists, cfg.mode)?;
    cfg.persist(CONFIG_FILE)?;
    let outcomes = rerank_all(&inputs.sentences, &lists, &inputs.idf, &cfg.rerank)?;
    write_run_outputs(cfg, &outcomes, diagnostics)
}

pub fn pipeline(cfg: &PipelineConfig, diagnostics: bool) -> Result<()> {
    let inputs = load_inputs(cfg, true)?;
    cfg.persist(CONFIG_FILE)?;
    let retriever = Retriever::new(&inputs.collection, &inputs.features, &inputs.idf);
    let lists = retrieve_all(&retriever, &inputs.sentences, cfg.mode, &cfg.retrieval)?;
    let outcomes = rerank_all(&inputs.sentences, &lists, &inputs.idf, &cfg.rerank)?;
    write_run_outputs(cfg, &outcomes, diagnostics)
}

fn read_segments(path: &Path) -> Result<Segments> {
    Segments::read(open(path)?).with_context(|| format!("reading {}", path.display()))
}

pub fn evaluate_cmd(hyp: &Path, reference: &Path) -> Result<()> {
    let refs = read_segments(reference)?;
    let report = BleuReport {
        stats: evaluate(&read_segments(hyp)?, &refs)?,
        sentences: refs.len(),
    };
    println!("{report}");
    Ok(())
}

fn display_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn compare(a: &Path, b: &Path, reference: &Path, trials: u64, seed: u64, names: (Option<String>, Option<String>)) -> Result<()> {
    let pairs = paired_stats(&read_segments(a)?, &read_segments(b)?, &read_segments(reference)?)?;
    let result = approx_randomization(&pairs, trials, seed)?;
    let report = CompareReport {
        name_a: names.0.unwrap_or_else(|| display_name(a)),
        name_b: names.1.unwrap_or_else(|| display_name(b)),
        result,
    };
    println!("{report}");
    Ok(())
}

fn write_trace(path: &Path, result: &TuneResult) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "param\tk_n\tk_m\tk_r\tlambda\td\tbleu")?;
    for t in &result.trace {
        let (r, k) = (&t.point.retrieval, &t.point.rerank);
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            t.param, r.k_n, r.k_m, k.k_r, k.lambda, r.d, t.bleu
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn tune(cfg: &PipelineConfig, grid_path: Option<&Path>) -> Result<()> {
    let grid = match grid_path {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<GridSpec>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => GridSpec::default_for(cfg.mode),
    };
    grid.validate()?;
    // The depth check below covers the grid, not the run's own k_n.
    let mut probe = cfg.clone();
    probe.retrieval.k_n = grid.max_k_n();
    probe.rerank.k_r = grid.k_r.iter().copied().max().unwrap_or(1);
    let inputs = load_inputs(&probe, true)?;
    let ref_path = cfg.require(&cfg.references, "references")?;
    let refs = read_segments(ref_path)?;
    let references = reference_order(&inputs.sentences, &refs)?;
    cfg.persist(CONFIG_FILE)?;
    let retriever = Retriever::new(&inputs.collection, &inputs.features, &inputs.idf);
    let objective = PipelineObjective::new(&retriever, &inputs.sentences, references, cfg.mode)?;
    let result = stepwise_search(&grid, cfg.mode, &objective)?;
    write_trace(&cfg.output_dir.join(TRACE_FILE), &result)?;
    let mut tuned = cfg.clone();
    tuned.retrieval = result.best.retrieval;
    tuned.rerank = result.best.rerank;
    let tuned_path = tuned.persist(TUNED_FILE)?;
    let (r, k) = (&result.best.retrieval, &result.best.rerank);
    println!("points\t{}", result.trace.len());
    println!("best_bleu\t{}", result.best_bleu);
    println!("k_n\t{}\nk_m\t{}\nk_r\t{}\nlambda\t{}", r.k_n, r.k_m, k.k_r, k.lambda);
    if cfg.mode == Mode::Cnn {
        println!("d\t{}", r.d);
    }
    println!("tuned_config\t{}", tuned_path.display());
    Ok(())
}

/// References in sentence order: by id for keyed files, else by position.
fn reference_order<'a>(sentences: &[Sentence], refs: &'a Segments) -> Result<Vec<&'a TokenSeq>> {
    if refs.len() != sentences.len() {
        bail!("{} sentences vs {} references", sentences.len(), refs.len());
    }
    if !refs.keyed {
        return Ok(refs.items.iter().map(|(_, t)| t).collect());
    }
    let by_id: HashMap<&str, &TokenSeq> = refs.items.iter().map(|(id, t)| (id.as_str(), t)).collect();
    sentences
        .iter()
        .map(|s| {
            by_id
                .get(s.kbest.sent_id())
                .copied()
                .with_context(|| format!("no reference for sentence `{}`", s.kbest.sent_id()))
        })
        .collect()
}
