use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pce_core::data::*;
use pce_core::encoding::*;

fn ewcx() -> Dataset {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ewcx");
    load_dataset(&dir.join(FIXATIONS_FILE), &dir.join(LABELS_FILE), &dir.join(STIMULI_FILE)).unwrap()
}

fn seq(aois: &[String]) -> FixationSequence {
    let fx = aois
        .iter()
        .enumerate()
        .map(|(i, a)| Fixation {
            index: i as u32 + 1,
            aoi: AoiId::parse(a).unwrap(),
            x: 10.0,
            y: 10.0,
            duration_ms: 120.0,
        })
        .collect();
    FixationSequence::new("p", "s", fx).unwrap()
}

fn random_sequence(rng: &mut ChaCha8Rng) -> Vec<String> {
    let pool: Vec<String> = ["a", "b", "c", "d", "e"]
        .iter()
        .flat_map(|l| [format!("vis_{l}"), format!("txt_{l}")])
        .chain(["off".to_string()])
        .collect();
    let k = rng.gen_range(1..=pool.len());
    let alphabet: Vec<String> = pool.choose_multiple(rng, k).cloned().collect();
    let len = rng.gen_range(1..40);
    (0..len).map(|_| alphabet.choose(rng).unwrap().clone()).collect()
}

#[test]
fn ewcx_amplified_matrix() {
    let ds = ewcx();
    let t = transition_matrix(&ds.samples()[0].sequence);
    let order: Vec<&str> = t.order().iter().map(AoiId::as_str).collect();
    assert_eq!(order, ["vis_wall", "txt_wall", "off", "txt_rock"]);
    let a = amplify(&t, 5.0).unwrap();
    assert_eq!(
        a.rows(),
        vec![
            vec![0.0, 5.0, 0.0, 0.0],
            vec![5.0, 0.0, 5.0, 5.0],
            vec![0.0, 5.0, 0.0, 5.0],
            vec![0.0, 5.0, 5.0, 0.0],
        ]
    );
}

#[test]
fn transition_matrix_matches_pair_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let aois = random_sequence(&mut rng);
        let t = transition_matrix(&seq(&aois));
        let tc = transition_matrix_counted(&seq(&aois));

        let mut order: Vec<&String> = Vec::new();
        for a in &aois {
            if !order.contains(&a) {
                order.push(a);
            }
        }
        assert_eq!(t.size(), order.len());
        for (i, from) in order.iter().enumerate() {
            for (j, to) in order.iter().enumerate() {
                let count = aois.windows(2).filter(|w| &w[0] == *from && &w[1] == *to).count() as u32;
                assert_eq!(t.get(i, j), u32::from(count > 0));
                assert_eq!(tc.get(i, j), count);
            }
        }
        let lambda: f64 = rng.gen_range(0.0..1000.0);
        let a = amplify(&t, lambda).unwrap();
        let unit = amplify(&t, 1.0).unwrap();
        let n = t.size();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(a.get(i, j), a.get(j, i));
                assert_eq!(a.get(i, j), lambda * unit.get(i, j));
            }
        }
    }
}

#[test]
fn amplify_rejects_bad_lambda() {
    let t = transition_matrix(&seq(&["vis_a".into(), "txt_a".into()]));
    assert!(amplify(&t, -1.0).is_err());
    assert!(amplify(&t, f64::NAN).is_err());
    assert!(amplify(&t, 0.0).unwrap().rows().iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn encode_decode_round_trip() {
    let ds = ewcx();
    let s = &ds.samples()[0].sequence;
    let idx = encode_sequence(s, ds.aoi_vocab()).unwrap();
    assert_eq!(idx, [0, 1, 2, 3, 1]);
    let back = decode_sequence(&idx, ds.aoi_vocab()).unwrap();
    assert_eq!(back, s.aois().cloned().collect::<Vec<_>>());
    assert!(decode_sequence(&[99], ds.aoi_vocab()).is_err());
}

#[test]
fn ewcx_token_map_and_bias() {
    let ds = ewcx();
    let st = ds.stimulus("2412873").unwrap();
    let map = token_aoi_map(st);
    let names: Vec<Option<&str>> = map.positions.iter().map(|p| p.as_ref().map(AoiId::as_str)).collect();
    // [cls] a wall behind the rock | vis_wall vis_rock
    assert_eq!(
        names,
        [None, None, Some("txt_wall"), None, None, Some("txt_rock"), Some("vis_wall"), Some("vis_rock")]
    );
    let bias = exposure_bias(&ds.samples()[0].sequence, st, 5.0).unwrap();
    assert_eq!(bias.shape(), &[8, 8]);
    let b = |i: usize, j: usize| bias.data()[i * 8 + j];
    // vis_wall ↔ txt_wall was fixated in sequence
    assert_eq!(b(6, 2), 5.0);
    assert_eq!(b(2, 6), 5.0);
    assert_eq!(b(2, 5), 5.0);
    // vis_rock was never fixated
    assert!((0..8).all(|j| b(7, j) == 0.0 && b(j, 7) == 0.0));
    // unmapped positions carry no bias
    assert!((0..8).all(|j| b(0, j) == 0.0 && b(1, j) == 0.0));
}

#[test]
fn token_bias_same_span_words_get_zero() {
    let st = Stimulus {
        stimulus_id: "s".into(),
        caption: "red fire hydrant".into(),
        image_w: 100.0,
        image_h: 100.0,
        regions: vec![Region {
            aoi: AoiId::parse("vis_fire_hydrant").unwrap(),
            x: 0.0,
            y: 0.0,
            w: 50.0,
            h: 50.0,
        }],
        caption_spans: vec![CaptionSpan {
            aoi: AoiId::parse("txt_fire_hydrant").unwrap(),
            start: 4,
            end: 16,
        }],
    };
    let s = seq(&["txt_fire_hydrant".into(), "txt_fire_hydrant".into(), "vis_fire_hydrant".into()]);
    let bias = exposure_bias(&s, &st, 2.0).unwrap();
    let n = 5;
    let b = |i: usize, j: usize| bias.data()[i * n + j];
    // self transition on the diagonal, none across the two words of one span
    assert_eq!(b(2, 2), 4.0);
    assert_eq!(b(2, 3), 0.0);
    assert_eq!(b(3, 2), 0.0);
    assert_eq!(b(2, 4), 2.0);
    assert_eq!(b(4, 3), 2.0);
}

#[test]
fn token_bias_follows_a_permutation_of_positions() {
    let ds = ewcx();
    let st = ds.stimulus("2412873").unwrap();
    let t = {
        let mut t = transition_matrix(&ds.samples()[0].sequence);
        let map = token_aoi_map(st);
        t.extend_order(map.positions.iter().flatten());
        t
    };
    let amp = amplify(&t, 3.0).unwrap();
    let map = token_aoi_map(st);
    let base = token_bias(&amp, &map).unwrap();
    let n = map.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let permuted = TokenAoiMap {
        positions: perm.iter().map(|&p| map.positions[p].clone()).collect(),
    };
    let pb = token_bias(&amp, &permuted).unwrap();
    for i in 0..n {
        for j in 0..n {
            assert_eq!(pb.data()[i * n + j], base.data()[perm[i] * n + perm[j]]);
        }
    }
}

#[test]
fn token_bias_requires_every_aoi() {
    let ds = ewcx();
    let st = ds.stimulus("2412873").unwrap();
    let t = transition_matrix(&ds.samples()[0].sequence);
    let err = token_bias(&amplify(&t, 1.0).unwrap(), &token_aoi_map(st)).unwrap_err();
    assert!(err.to_string().contains("vis_rock"));
}
