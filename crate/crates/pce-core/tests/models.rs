use pce_core::data::Dataset;
use pce_core::models::*;
use pce_core::numerics::gradcheck::relative_error;
use pce_core::numerics::{Graph, Tensor};
use pce_core::synth::{generate, generate_features, FeatureStore, GeneratorConfig};

fn tiny_corpus(seed: u64, n: usize) -> (Dataset, FeatureStore) {
    let cfg = GeneratorConfig {
        n_participants: 12,
        n_stimuli: 10,
        n_samples: n,
        mean_fixations: 6.0,
        feature_dim_text: 10,
        feature_dim_image: 14,
        seed,
        ..Default::default()
    };
    let ds = generate(&cfg).unwrap();
    let fs = generate_features(&cfg, &ds, seed).unwrap();
    (ds, fs)
}

fn small_config(inputs: &Prepared) -> ModelConfig {
    ModelConfig {
        n_heads: 2,
        n_layers: 2,
        ff_dim: 8,
        emb_dim: 4,
        model_dim: 6,
        lstm_hidden: 5,
        ..Default::default()
    }
    .fit_to(inputs)
}

fn logits(net: &dyn Network, inputs: &Prepared, batch: &[usize]) -> Vec<f64> {
    let mut g = Graph::new();
    let z = net.logits(&mut g, inputs, batch).unwrap();
    g.value(z).to_vec()
}

fn loss(net: &dyn Network, inputs: &Prepared, batch: &[usize]) -> f64 {
    let mut g = Graph::new();
    let z = net.logits(&mut g, inputs, batch).unwrap();
    let targets: Vec<usize> = batch.iter().map(|&i| inputs.samples[i].label).collect();
    let l = g.cross_entropy(z, &targets).unwrap();
    g.value(l)[0]
}

/// Largest relative error between backprop and central differences over up to
/// `per_param` coordinates of every parameter.
fn model_gradcheck<N: Network + Clone>(net: &N, inputs: &Prepared, batch: &[usize], per_param: usize) -> f64 {
    let grads = {
        let mut g = Graph::new();
        let z = net.logits(&mut g, inputs, batch).unwrap();
        let targets: Vec<usize> = batch.iter().map(|&i| inputs.samples[i].label).collect();
        let l = g.cross_entropy(z, &targets).unwrap();
        g.backward(l).unwrap();
        g.param_grads().unwrap()
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for id in net.store().ids().collect::<Vec<_>>() {
        let len = net.store().get(id).len();
        let step = (len / per_param).max(1);
        for j in (0..len).step_by(step).take(per_param) {
            let orig = net.store().get(id).data()[j];
            probe.store_mut().get_mut(id).data_mut()[j] = orig + h;
            let plus = loss(&probe, inputs, batch);
            probe.store_mut().get_mut(id).data_mut()[j] = orig - h;
            let minus = loss(&probe, inputs, batch);
            probe.store_mut().get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g[j]);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    worst
}

#[test]
fn lstm_gradients_match_finite_differences() {
    for seed in 0..3 {
        let (ds, _) = tiny_corpus(seed, 20);
        let inputs = Prepared::new(&ds, None, None).unwrap();
        let net = PerceptionLstm::new(&small_config(&inputs), seed).unwrap();
        let err = model_gradcheck(&net, &inputs, &[0, 3, 5, 7], 12);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn transformer_gradients_match_finite_differences() {
    for (guided, lambda) in [(false, None), (true, Some(500.0)), (true, Some(0.7))] {
        let (ds, fs) = tiny_corpus(4, 20);
        let inputs = Prepared::new(&ds, Some(&fs), lambda).unwrap();
        let mut cfg = small_config(&inputs);
        if let Some(l) = lambda {
            cfg.lambda = l;
        }
        let net = MultimodalTransformer::new(&cfg, guided, 9).unwrap();
        let err = model_gradcheck(&net, &inputs, &[1, 2, 8], 10);
        assert!(err < 1e-4, "guided {guided} lambda {lambda:?}: {err}");
    }
}

#[test]
fn zero_head_gives_uniform_predictions() {
    let (ds, fs) = tiny_corpus(1, 15);
    let inputs = Prepared::new(&ds, Some(&fs), None).unwrap();
    let cfg = small_config(&inputs);
    let mut lstm = PerceptionLstm::new(&cfg, 1).unwrap();
    let mut tr = MultimodalTransformer::new(&cfg, false, 1).unwrap();
    for (store, head) in [(&mut lstm.store, lstm.head), (&mut tr.store, tr.head)] {
        store.get_mut(head.weight).data_mut().fill(0.0);
        store.get_mut(head.bias).data_mut().fill(0.0);
    }
    let all: Vec<usize> = (0..inputs.len()).collect();
    for p in lstm.predict(&inputs, &all).unwrap().into_iter().chain(tr.predict(&inputs, &all).unwrap()) {
        assert!(p.probs.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn single_step_lstm_matches_hand_computation() {
    let (ds, _) = tiny_corpus(2, 15);
    let mut inputs = Prepared::new(&ds, None, None).unwrap();
    inputs.samples[0].aois.truncate(1);
    let net = PerceptionLstm::new(&small_config(&inputs), 3).unwrap();
    let c = &net.config;
    let s = &inputs.samples[0];
    let st = &net.store;
    let row = |id, r: usize, w: usize| st.get(id).data()[r * w..(r + 1) * w].to_vec();
    let mut x = row(net.aoi_emb.table, s.aois[0], c.emb_dim);
    x.extend(row(net.participant_emb.unwrap().table, s.participant, c.emb_dim));
    let affine = |x: &[f64], w: &Tensor, b: &Tensor, out: usize| -> Vec<f64> {
        (0..out)
            .map(|j| b.data()[j] + x.iter().enumerate().map(|(i, v)| v * w.data()[i * out + j]).sum::<f64>())
            .collect()
    };
    let f: Vec<f64> = affine(&x, st.get(net.ff.weight), st.get(net.ff.bias), c.ff_dim)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let hd = c.lstm_hidden;
    let z = affine(&f, st.get(net.cell.w_input), st.get(net.cell.bias), 4 * hd);
    let h: Vec<f64> = (0..hd)
        .map(|k| {
            let cell = sigmoid(z[k]) * z[2 * hd + k].tanh();
            sigmoid(z[3 * hd + k]) * cell.tanh()
        })
        .collect();
    let want = affine(&h, st.get(net.head.weight), st.get(net.head.bias), 3);
    let got = logits(&net, &inputs, &[0]);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn batching_does_not_change_outputs() {
    let (ds, fs) = tiny_corpus(5, 30);
    let inputs = Prepared::new(&ds, Some(&fs), Some(2.0)).unwrap();
    let mut cfg = small_config(&inputs);
    cfg.lambda = 2.0;
    let nets: Vec<Box<dyn Network>> = vec![
        Box::new(PerceptionLstm::new(&cfg, 1).unwrap()),
        Box::new(MultimodalTransformer::new(&cfg, true, 1).unwrap()),
    ];
    let batch: Vec<usize> = vec![4, 0, 17, 9, 22, 3];
    for net in &nets {
        let together = logits(net.as_ref(), &inputs, &batch);
        for (k, &i) in batch.iter().enumerate() {
            let alone = logits(net.as_ref(), &inputs, &[i]);
            for c in 0..3 {
                assert!((together[k * 3 + c] - alone[c]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn pgmt_without_bias_weight_is_the_content_transformer() {
    let (ds, fs) = tiny_corpus(6, 80);
    let inputs = Prepared::new(&ds, Some(&fs), Some(0.0)).unwrap();
    let mut cfg = small_config(&inputs);
    cfg.lambda = 0.0;
    let content = MultimodalTransformer::new(&cfg, false, 21).unwrap();
    let pgmt = MultimodalTransformer::new(&cfg, true, 21).unwrap();
    assert_eq!(content.store.trainable_count(), pgmt.store.trainable_count());
    let batch: Vec<usize> = (0..50).collect();
    let a = logits(&content, &inputs, &batch);
    let b = logits(&pgmt, &inputs, &batch);
    assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

#[test]
fn pgmt_requires_matching_biases() {
    let (ds, fs) = tiny_corpus(6, 20);
    let inputs = Prepared::new(&ds, Some(&fs), Some(5.0)).unwrap();
    let cfg = small_config(&inputs);
    let pgmt = MultimodalTransformer::new(&cfg, true, 1).unwrap();
    let mut g = Graph::new();
    assert!(pgmt.logits(&mut g, &inputs, &[0]).is_err());
    let bare = Prepared::new(&ds, None, None).unwrap();
    let tr = MultimodalTransformer::new(&cfg, false, 1).unwrap();
    let mut g = Graph::new();
    assert!(tr.logits(&mut g, &bare, &[0]).is_err());
}

#[test]
fn transition_bias_raises_attention_between_linked_tokens() {
    let (ds, fs) = tiny_corpus(7, 40);
    let strong = Prepared::new(&ds, Some(&fs), Some(500.0)).unwrap();
    let none = Prepared::new(&ds, Some(&fs), Some(0.0)).unwrap();
    let base = small_config(&strong);
    let (i, a, b) = (0..strong.len())
        .find_map(|i| {
            let bias = strong.samples[i].bias.as_ref().unwrap();
            let n = (bias.len() as f64).sqrt() as usize;
            (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).find(|&(a, b)| a != b && bias[a * n + b] > 0.0).map(|(a, b)| (i, a, b))
        })
        .expect("some sample links two tokens");
    let weight = |inputs: &Prepared, lambda: f64| {
        let cfg = ModelConfig { lambda, ..base.clone() };
        let net = MultimodalTransformer::new(&cfg, true, 3).unwrap();
        let mut g = Graph::new();
        let trace = net.trace(&mut g, inputs, &[i]).unwrap();
        let n = trace.lengths[0];
        g.attention_probs(trace.attention[0], 0, 0).unwrap()[a * n + b]
    };
    let w0 = weight(&none, 0.0);
    let w500 = weight(&strong, 500.0);
    assert!(w500 > w0, "{w500} <= {w0}");
    assert!(w500 > 0.1);
}

fn permute_rows(data: &[f64], dim: usize, perm: &[usize]) -> Vec<f64> {
    perm.iter().flat_map(|&p| data[p * dim..(p + 1) * dim].to_vec()).collect()
}

#[test]
fn token_order_does_not_matter_without_positions() {
    let (ds, fs) = tiny_corpus(8, 20);
    let inputs = Prepared::new(&ds, Some(&fs), Some(3.0)).unwrap();
    let mut cfg = small_config(&inputs);
    cfg.lambda = 3.0;
    let net = MultimodalTransformer::new(&cfg, true, 2).unwrap();
    let sample = 0;
    let k = inputs.samples[sample].stimulus;
    let st = &inputs.stimuli[k];
    let (w, r) = (st.n_words, st.n_regions);
    let word_perm: Vec<usize> = (0..w).rev().collect();
    let region_perm: Vec<usize> = (0..r).map(|j| (j + 1) % r).collect();
    let mut permuted = inputs.clone();
    permuted.stimuli[k].text = permute_rows(&st.text, cfg.text_dim, &word_perm);
    permuted.stimuli[k].image = permute_rows(&st.image, cfg.image_dim, &region_perm);
    // token position t of the permuted input holds original token pos[t]
    let mut pos = vec![0];
    pos.extend(word_perm.iter().map(|&p| 1 + p));
    pos.extend(region_perm.iter().map(|&p| 1 + w + p));
    let n = pos.len();
    let bias = inputs.samples[sample].bias.clone().unwrap();
    permuted.samples[sample].bias = Some((0..n * n).map(|ij| bias[pos[ij / n] * n + pos[ij % n]]).collect());

    let a = logits(&net, &inputs, &[sample]);
    let b = logits(&net, &permuted, &[sample]);
    for c in 0..3 {
        assert!((a[c] - b[c]).abs() < 1e-10, "{a:?} vs {b:?}");
    }
    let positional = MultimodalTransformer::new(&ModelConfig { positional: true, ..cfg }, true, 2).unwrap();
    let a = logits(&positional, &inputs, &[sample]);
    let b = logits(&positional, &permuted, &[sample]);
    assert!((0..3).any(|c| (a[c] - b[c]).abs() > 1e-10));
}

#[test]
fn participant_off_ignores_identity() {
    let (ds, fs) = tiny_corpus(9, 20);
    let inputs = Prepared::new(&ds, Some(&fs), None).unwrap();
    let cfg = ModelConfig {
        use_participant: false,
        ..small_config(&inputs)
    };
    let mut other = inputs.clone();
    other.samples[0].participant = (inputs.samples[0].participant + 1) % inputs.n_participants;
    let nets: Vec<Box<dyn Network>> = vec![
        Box::new(PerceptionLstm::new(&cfg, 4).unwrap()),
        Box::new(MultimodalTransformer::new(&cfg, false, 4).unwrap()),
    ];
    for net in &nets {
        assert_eq!(logits(net.as_ref(), &inputs, &[0]), logits(net.as_ref(), &other, &[0]));
    }
    let with = PerceptionLstm::new(&small_config(&inputs), 4).unwrap();
    assert_ne!(logits(&with, &inputs, &[0]), logits(&with, &other, &[0]));
}

#[test]
fn ensemble_average_is_symmetric() {
    let a = Prediction::new([0.7, 0.2, 0.1]).unwrap();
    let b = Prediction::new([0.1, 0.3, 0.6]).unwrap();
    assert_eq!(ensemble_forward(&a, &b), ensemble_forward(&b, &a));
    assert_eq!(ensemble_forward(&a, &a), a);
    let m = ensemble_forward(&a, &b);
    assert!((m.probs[0] - 0.4).abs() < 1e-15);
}

#[test]
fn checkpoints_round_trip() {
    let (ds, fs) = tiny_corpus(10, 20);
    let inputs = Prepared::new(&ds, Some(&fs), Some(500.0)).unwrap();
    let cfg = small_config(&inputs);
    for kind in ModelKind::ALL {
        let model = Model::new(kind, &cfg, 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path(), 77).unwrap();
        let (back, seed) = load_model(dir.path()).unwrap();
        assert_eq!(seed, 77);
        assert_eq!(back.kind(), kind);
        assert_eq!(back.trainable_params(), model.trainable_params());
        assert_eq!(back.predict_all(&inputs).unwrap(), model.predict_all(&inputs).unwrap());
    }
    assert!(load_model(std::path::Path::new("/nonexistent/checkpoint")).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let (ds, _) = tiny_corpus(11, 10);
    let inputs = Prepared::new(&ds, None, None).unwrap();
    let cfg = small_config(&inputs);
    assert!(MultimodalTransformer::new(&ModelConfig { n_heads: 4, ..cfg.clone() }, false, 1).is_err());
    assert!(Model::new(ModelKind::Lstm, &ModelConfig { n_aois: 0, ..cfg }, 1).is_err());
}
