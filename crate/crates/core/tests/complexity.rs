//! Operation counts of the three architectures as the utterance grows.

use multirate_core::baselines::{
    selfattn_attention_macs, self_attention_decode, self_attention_encode, SelfAttnCost,
    SelfAttnWeights,
};
use multirate_core::features::{CorpusSpec, UtteranceLength};
use multirate_core::weights::Tensor;
use multirate_core::{
    synth_corpus, unroll_frames, weights_init, ContextTree, Model, ModelConfig, ModelKind,
    ModelWeights, SynthCost,
};

fn weights() -> ModelWeights {
    weights_init(5, &ModelConfig::default()).unwrap()
}

fn tree(length: UtteranceLength, seed: u64) -> ContextTree {
    synth_corpus(seed, &CorpusSpec::with_length(length)).unwrap().remove(0)
}

fn cost(model: &Model, tree: &ContextTree) -> SynthCost {
    let mut c = SynthCost::default();
    model.synthesize(tree, &mut multirate_core::decoder::DiscardFrames, Some(&mut c)).unwrap();
    c
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Short words, syllables and phones: 200 phones already give 50+ words,
/// and few frames keep the counted runs quick.
fn dense_tree(phones: usize, seed: u64) -> ContextTree {
    let spec = CorpusSpec {
        syllables_per_word: (1, 2),
        phones_per_syllable: (1, 2),
        duration_frames: (1, 2),
        ..CorpusSpec::with_length(UtteranceLength::Phones(phones))
    };
    synth_corpus(seed, &spec).unwrap().remove(0)
}

#[test]
fn pooled_per_frame_cost_is_constant_once_every_level_is_capped() {
    let m = Model::build(ModelKind::MultiRate, &weights()).unwrap();
    let costs: Vec<u64> = [200, 1000, 5000]
        .iter()
        .map(|&n| {
            let t = dense_tree(n, n as u64);
            assert!(t.words().rows() >= 50, "{} words", t.words().rows());
            cost(&m, &t).per_frame_macs()
        })
        .collect();
    assert_eq!(costs[0], costs[1]);
    assert_eq!(costs[1], costs[2]);
}

#[test]
fn unpooled_per_frame_cost_grows_linearly_with_context() {
    let w = weights();
    let m = Model::build(ModelKind::MultiRateNoPool, &w).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, n) in [100, 200, 400, 800, 1600, 3200].into_iter().enumerate() {
        let t = dense_tree(n, i as u64);
        let units = t.words().rows() + t.syllables().rows() + t.phones().rows();
        x.push(units as f64);
        y.push(cost(&m, &t).per_frame_macs() as f64);
    }
    let r2 = r_squared(&x, &y);
    assert!(r2 > 0.999, "R^2 {r2}");
    assert!(y.windows(2).all(|p| p[1] > p[0]));
}

#[test]
fn self_attention_cost_is_quadratic_in_frames() {
    let w = SelfAttnWeights::from_model(&weights()).unwrap();
    let lengths = [400usize, 800, 1600, 3200];
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, &n) in lengths.iter().enumerate() {
        let track = unroll_frames(&tree(UtteranceLength::Frames(n), i as u64));
        assert_eq!(track.len(), n);
        let mut c = SelfAttnCost::default();
        self_attention_encode(&track, &w, Some(&mut c)).unwrap();
        assert_eq!(c.attention.macs, selfattn_attention_macs(&w, n));
        x.push((n * n) as f64);
        y.push(c.attention.macs as f64);
    }
    let r2 = r_squared(&x, &y);
    assert!(r2 > 0.999, "R^2 {r2}");
    for p in y.windows(2) {
        assert_eq!(p[1] / p[0], 4.0);
    }
}

#[test]
fn self_attention_per_frame_cost_grows_but_plain_recurrence_does_not() {
    let w = weights();
    let sa = Model::build(ModelKind::FrameSelfAttention, &w).unwrap();
    let plain = Model::build(ModelKind::PlainRecurrent, &w).unwrap();
    let short = tree(UtteranceLength::Frames(800), 1);
    let long = tree(UtteranceLength::Frames(3200), 2);

    let per_frame = |m: &Model, t: &ContextTree| cost(m, t).total().macs as f64 / t.frame_count() as f64;
    assert!(per_frame(&sa, &long) >= 2.5 * per_frame(&sa, &short));
    assert_eq!(cost(&plain, &short).per_frame_macs(), cost(&plain, &long).per_frame_macs());
    assert_eq!(per_frame(&plain, &short), per_frame(&plain, &long));
}

#[test]
fn first_frame_cost_by_architecture() {
    let w = weights();
    let sa = Model::build(ModelKind::FrameSelfAttention, &w).unwrap();
    let mr = Model::build(ModelKind::MultiRate, &w).unwrap();

    let sa_short = cost(&sa, &tree(UtteranceLength::Frames(800), 1)).first_frame_macs();
    let sa_long = cost(&sa, &tree(UtteranceLength::Frames(3200), 2)).first_frame_macs();
    assert!(sa_long >= 10 * sa_short, "{sa_long} vs {sa_short}");

    let mr_long = cost(&mr, &tree(UtteranceLength::Frames(3200), 2)).first_frame_macs();
    assert!(sa_long >= 100 * mr_long, "{sa_long} vs {mr_long}");

    let mr_10 = cost(&mr, &tree(UtteranceLength::seconds(10.0), 3)).first_frame_macs();
    let mr_60 = cost(&mr, &tree(UtteranceLength::seconds(60.0), 4)).first_frame_macs();
    assert!(mr_60 <= 4 * mr_10, "{mr_60} vs {mr_10}");
}

#[test]
fn baselines_emit_one_frame_per_input_frame() {
    let w = weights();
    let t = tree(UtteranceLength::Frames(257), 9);
    for kind in ModelKind::ALL {
        let m = Model::build(kind, &w).unwrap();
        assert_eq!(m.synthesize_frames(&t).unwrap().len(), 257, "{kind}");
    }
}

#[test]
fn zero_weights_reduce_every_model_to_its_output_bias() {
    let mut w = weights().zeroed();
    for name in ["dec.out.bias", "lstm.out.bias", "sa.out.bias"] {
        let b = w.get_mut(name).unwrap();
        for (i, v) in b.data.iter_mut().enumerate() {
            *v = i as f32 * 0.25 - 1.0;
        }
    }
    let t = tree(UtteranceLength::Frames(40), 4);
    for kind in ModelKind::ALL {
        let bias = match kind {
            ModelKind::MultiRate | ModelKind::MultiRateNoPool => "dec.out.bias",
            ModelKind::PlainRecurrent => "lstm.out.bias",
            ModelKind::FrameSelfAttention => "sa.out.bias",
        };
        let expected = w.vector(bias).unwrap();
        for f in Model::build(kind, &w).unwrap().synthesize_frames(&t).unwrap() {
            assert_eq!(f.as_slice(), &expected[..], "{kind}");
        }
    }
}

#[test]
fn single_frame_self_attention_ignores_queries_and_keys() {
    let base = weights();
    let spec = CorpusSpec {
        duration_frames: (1, 1),
        ..CorpusSpec::with_length(UtteranceLength::Phones(1))
    };
    let t = synth_corpus(6, &spec).unwrap().remove(0);
    let track = unroll_frames(&t);
    assert_eq!(track.len(), 1);
    let out = |w: &ModelWeights| {
        self_attention_decode(&track, &SelfAttnWeights::from_model(w).unwrap(), None).unwrap()
    };
    let reference = out(&base);
    let mut scrambled = base.clone();
    let names: Vec<String> = base
        .tensors()
        .keys()
        .filter(|k| k.starts_with("sa.layer") && (k.ends_with(".wq") || k.ends_with(".wk")))
        .cloned()
        .collect();
    assert!(!names.is_empty());
    for name in names {
        let t = scrambled.get(&name).unwrap();
        let data = t.data.iter().map(|v| v * -3.0 + 0.5).collect();
        scrambled.insert(name, Tensor::new(t.shape.clone(), data).unwrap());
    }
    assert_eq!(out(&scrambled), reference);
}
