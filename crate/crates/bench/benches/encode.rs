use criterion::{criterion_group, criterion_main, Criterion};
use mrl_core::data::{gen_corpus, CorpusConfig, Lexicon, WorldConfig};
use mrl_core::{ModelConfig, SpeechTextModel};

fn bench_encode(c: &mut Criterion) {
    let lex = Lexicon::new(&WorldConfig::default()).expect("lexicon");
    let corpus = gen_corpus(&lex, &CorpusConfig::default(), 1).expect("corpus");
    let e = &corpus.examples[0];
    let model = SpeechTextModel::new(ModelConfig::default()).expect("model");
    c.bench_function("encode_text", |b| b.iter(|| model.encode_text(&e.document, &[]).expect("encode")));
    c.bench_function("encode_speech_late_fusion", |b| {
        b.iter(|| model.encode_speech_late_fusion(&e.frames, &[]).expect("encode"))
    });
    c.bench_function("encode_speech_dual", |b| b.iter(|| model.encode_speech_dual(&e.frames).expect("encode")));
}

criterion_group!(benches, bench_encode);
criterion_main!(benches);
