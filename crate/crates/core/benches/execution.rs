use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use paradigm::baseline::{BaselineConfig, Transducer};
use paradigm::corpus::{build_vocab, split_dataset, Triple};
use paradigm::parallel::{self, Execution};
use paradigm::predict::{predict_all, Query, System};
use paradigm::seq2seq::{Seq2SeqConfig, Seq2SeqModel};
use paradigm::synthetic;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn small_config() -> Seq2SeqConfig {
    Seq2SeqConfig {
        embedding: 32,
        hidden: 48,
        attention: 48,
        readout: 48,
        beam: 4,
        ..Seq2SeqConfig::default()
    }
}

fn data() -> (Vec<Triple>, Vec<Query>) {
    let split = split_dataset(&synthetic::generate(600, 2), 2).unwrap();
    let queries = split.test.iter().map(Query::from).collect();
    (split.train, queries)
}

fn batch_gradients(c: &mut Criterion) {
    let (train, _) = data();
    let model = Seq2SeqModel::new(build_vocab(&train), small_config()).unwrap();
    let batch: Vec<(Vec<usize>, Vec<usize>)> = train
        .iter()
        .take(20)
        .map(|t| {
            (
                model.encode_source(&t.base, &t.tag),
                model.vocab.encode_target(&t.derived),
            )
        })
        .collect();
    let mut group = c.benchmark_group("batch_gradients");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| parallel::map(exec, &batch, |(s, t)| model.net.loss_and_gradients(s, t).unwrap()))
        });
    }
    group.finish();
}

fn predict(c: &mut Criterion) {
    let (train, queries) = data();
    let seq2seq = System::Seq2seq(Seq2SeqModel::new(build_vocab(&train), small_config()).unwrap());
    let baseline = System::Baseline(Transducer::train(&train, BaselineConfig::default()).unwrap());
    let mut group = c.benchmark_group("predict");
    group.sample_size(20);
    for (system, label, k) in [(&seq2seq, "seq2seq_k5", 5), (&baseline, "baseline_k1", 1)] {
        for (name, exec) in MODES {
            group.bench_function(BenchmarkId::new(label, name), |b| {
                b.iter(|| predict_all(system, &queries, k, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, batch_gradients, predict);
criterion_main!(benches);
