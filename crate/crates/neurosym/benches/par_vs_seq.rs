//! Data-parallel vs sequential throughput on the two hottest batch paths:
//! document preprocessing and relevance scoring. The `parallel` feature
//! (default) routes `par::map_slice` through rayon; `map_slice_seq` is the
//! always-sequential baseline, so one binary measures both.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use neurosym::corpus::{preprocess, PreprocessConfig};
use neurosym::par;
use neurosym::semantic;
use neurosym::synth;

fn bench_preprocess(c: &mut Criterion) {
    let docs = synth::textual_corpus(200, 7);
    let cfg = PreprocessConfig::default().with_stopwords(synth::bundled_stopwords());
    let mut group = c.benchmark_group("preprocess_600_docs");
    group.bench_with_input(BenchmarkId::new("parallel_feature", ""), &docs, |b, docs| {
        b.iter(|| par::map_slice(docs, |d| preprocess(d, &cfg)))
    });
    group.bench_with_input(BenchmarkId::new("sequential", ""), &docs, |b, docs| {
        b.iter(|| par::map_slice_seq(docs, |d| preprocess(d, &cfg)))
    });
    group.finish();
}

fn bench_relevance(c: &mut Criterion) {
    let bench = synth::planted_benchmark(100, 7);
    let docs = &bench.corpus.documents;
    let lex = &bench.domain_lexicon;
    let em = &bench.em_tweet;
    let mut group = c.benchmark_group("relevance_300_docs");
    group.bench_function("parallel_feature", |b| {
        b.iter(|| {
            par::map_slice(docs, |d| semantic::relevance(d, lex, em).unwrap())
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            par::map_slice_seq(docs, |d| semantic::relevance(d, lex, em).unwrap())
        })
    });
    group.finish();
}

criterion_group!(benches, bench_preprocess, bench_relevance);
criterion_main!(benches);
