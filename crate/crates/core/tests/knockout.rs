// SPDX-License-Identifier: MIT OR Apache-2.0

use affectscope::knockout::{
    all_layers_zeroed_accuracy, critical_summary, knockout_sweep, Ablation, DEFAULT_CRITICAL_THRESHOLD,
};
use affectscope::runtime::toy::{cue_corpus, digit_cue, CueReader, ToyCircuit};
use affectscope::runtime::{LabelReadout, Model, ModelConfig, Sublayer, Tokenizer};
use affectscope::stimulus::{render_prompt, Corpus, EmotionLabel, PromptTemplate, SetTag};

fn sweep(model: &Model, corpus: &Corpus, sublayer: Sublayer, ablation: Ablation, seed: u64) -> affectscope::knockout::KnockoutSweep {
    knockout_sweep(model, corpus, &PromptTemplate::default(), sublayer, ablation, seed, DEFAULT_CRITICAL_THRESHOLD).unwrap()
}

#[test]
fn sole_reader_under_weight_noise_is_the_single_critical_layer() {
    let circuit = ToyCircuit {
        noise_std: 0.02,
        seed: 4,
        ..ToyCircuit::new(4, vec![CueReader::one_hot(2, 0, *b"12345678")])
    };
    let model = circuit.build().unwrap();
    let corpus = cue_corpus("s", SetTag::A, 6, digit_cue).unwrap();
    let mhsa = sweep(&model, &corpus, Sublayer::Mhsa, Ablation::Zero, 0);
    assert!(mhsa.baseline_acc >= 0.95, "baseline {}", mhsa.baseline_acc);
    assert!(mhsa.results[2].ablated_acc <= 0.25);
    for r in mhsa.results.iter().filter(|r| r.layer != 2) {
        assert!(r.drop <= 5.0, "layer {} drop {}", r.layer, r.drop);
    }
    assert_eq!(mhsa.critical_layers(), vec![2]);
    let ffn = sweep(&model, &corpus, Sublayer::Ffn, Ablation::Zero, 0);
    assert_eq!(ffn.critical_count(), 0);
}

/// Group cue `#$%&` picks a pair of labels, bit cue `<>` picks within the pair.
fn split_circuit(group_layer: usize, bit_layer: usize) -> ToyCircuit {
    let group = CueReader {
        layer: group_layer,
        head: 0,
        cues: b"#$%&"
            .iter()
            .enumerate()
            .map(|(g, &b)| (b, vec![(EmotionLabel::ALL[2 * g], 1.0), (EmotionLabel::ALL[2 * g + 1], 1.0)]))
            .collect(),
    };
    let bit = CueReader {
        layer: bit_layer,
        head: 0,
        cues: b"<>"
            .iter()
            .enumerate()
            .map(|(k, &b)| (b, (0..4).map(|g| (EmotionLabel::ALL[2 * g + k], 1.0)).collect()))
            .collect(),
    };
    ToyCircuit::new(4, vec![group, bit])
}

fn split_cue(e: EmotionLabel) -> String {
    let c = e.code();
    format!("{}{}", b"#$%&"[c / 2] as char, b"<>"[c % 2] as char)
}

#[test]
fn distributed_circuit_has_more_critical_layers() {
    let corpus = cue_corpus("s", SetTag::A, 3, split_cue).unwrap();
    let split = split_circuit(1, 3).build().unwrap();
    let distributed = sweep(&split, &corpus, Sublayer::Mhsa, Ablation::Zero, 0);
    assert_eq!(distributed.baseline_acc, 1.0);
    assert_eq!(distributed.critical_layers(), vec![1, 3]);

    let single = ToyCircuit::new(4, vec![CueReader::one_hot(1, 0, *b"12345678")]).build().unwrap();
    let digits = cue_corpus("s", SetTag::A, 3, digit_cue).unwrap();
    let local = sweep(&single, &digits, Sublayer::Mhsa, Ablation::Zero, 0);
    assert!(distributed.critical_count() > local.critical_count());

    let rows = critical_summary(&[("distributed", &distributed), ("local", &local)]);
    assert_eq!((rows[0].critical_count, rows[1].critical_count), (2, 1));
}

#[test]
fn noise_ablation_is_seeded() {
    let model = Model::from_config(ModelConfig::tiny(5), LabelReadout::default()).unwrap();
    let corpus = cue_corpus("s", SetTag::A, 2, digit_cue).unwrap();
    let a = sweep(&model, &corpus, Sublayer::Ffn, Ablation::Noise, 17);
    let b = sweep(&model, &corpus, Sublayer::Ffn, Ablation::Noise, 17);
    assert_eq!(a, b);
    let toy = ToyCircuit::new(3, vec![CueReader::one_hot(1, 0, *b"12345678")]).build().unwrap();
    let noisy = sweep(&toy, &corpus, Sublayer::Mhsa, Ablation::Noise, 3);
    assert!(noisy.results[1].drop > DEFAULT_CRITICAL_THRESHOLD);
}

/// Label logits of a model whose blocks contribute nothing: final layer
/// norm of the embedding sum, then the unembedding.
fn embedding_only_label(model: &Model, tokens: &[u32], ext: usize) -> EmotionLabel {
    let cfg = model.config();
    let w = model.weights();
    let d = cfg.d_model;
    let t = tokens[ext] as usize;
    let h: Vec<f32> = (0..d)
        .map(|i| w.token_embedding[t * d + i] + w.position_embedding[ext * d + i])
        .collect();
    let mu = h.iter().sum::<f32>() / d as f32;
    let var = h.iter().map(|x| (x - mu) * (x - mu)).sum::<f32>() / d as f32;
    let normed: Vec<f32> = (0..d)
        .map(|i| (h[i] - mu) / (var + 1e-5).sqrt() * w.final_gain[i] + w.final_bias[i])
        .collect();
    let logits: Vec<f32> = model
        .readout()
        .tokens()
        .iter()
        .map(|&tok| (0..d).map(|i| normed[i] * w.unembedding[i * cfg.vocab_size + tok as usize]).sum())
        .collect();
    let best = (0..8).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    EmotionLabel::ALL[best]
}

#[test]
fn all_layers_zeroed_matches_embedding_only_oracle() {
    let template = PromptTemplate::default();
    let tokenizer = Tokenizer::new();
    for seed in 0..3 {
        let model = Model::from_config(ModelConfig::tiny(seed), LabelReadout::default()).unwrap();
        let corpus = cue_corpus("s", SetTag::A, 2, digit_cue).unwrap();
        let correct = corpus
            .stimuli()
            .iter()
            .filter(|s| {
                let p = render_prompt(&template, s, &tokenizer).unwrap();
                embedding_only_label(&model, &p.tokens, p.extraction_index) == s.emotion.unwrap()
            })
            .count();
        let expected = correct as f64 / corpus.len() as f64;
        assert_eq!(all_layers_zeroed_accuracy(&model, &corpus, &template).unwrap(), expected);
    }
}
