mod common;

use common::{synthetic_examples, tiny_config};
use oqgen_model::decode::{
    beam_decode, beam_search, greedy_decode, has_repeated_trigram, length_penalized_score, nucleus_filter,
    nucleus_sample, rank_finished, sample_from, BeamHypothesis,
};
use oqgen_model::vocab::EOS_ID;
use oqgen_model::{DecodeOptions, Generator, OutputKind, Result, SamplingOptions, StepModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A step model defined by a function of the prefix.
struct Rigged<F: Fn(&[usize]) -> Vec<f64>> {
    size: usize,
    f: F,
}

impl<F: Fn(&[usize]) -> Vec<f64>> StepModel for Rigged<F> {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn log_probs(&self, generated: &[usize]) -> Result<Vec<f64>> {
        let p = (self.f)(generated);
        Ok(p.iter().map(|x| x.ln()).collect())
    }
}

fn beam(beam: usize, min_len: usize, max_len: usize, trigram_block: bool) -> DecodeOptions {
    DecodeOptions {
        beam,
        length_penalty: 1.5,
        min_len,
        max_len,
        trigram_block,
    }
}

#[test]
fn beam_of_one_is_greedy_on_random_models() {
    let (vocab, examples) = synthetic_examples(50, 99);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut nonempty = 0;
    for (i, ex) in examples.iter().enumerate() {
        let model = Generator::new(tiny_config(8), vocab.clone(), OutputKind::Question, i as u64).unwrap();
        let prepared = model.prepare(&ex.input).unwrap();
        let bound = model.bind(&prepared);
        let (min_len, block) = (rng.random_range(0..4), rng.random_bool(0.5));
        let greedy = greedy_decode(&bound, min_len, 12, block).unwrap();
        let beamed = beam_decode(&bound, &beam(1, min_len, 12, block)).unwrap();
        assert_eq!(greedy, beamed, "model {i}");
        nonempty += usize::from(!greedy.is_empty());
    }
    assert!(nonempty > 25);
}

#[test]
fn trigram_blocking_holds_over_a_hundred_decodes() {
    let (vocab, examples) = synthetic_examples(25, 5);
    let mut decodes = 0;
    for seed in 0..4u64 {
        let model = Generator::new(tiny_config(8), vocab.clone(), OutputKind::Question, 100 + seed).unwrap();
        for ex in &examples {
            let prepared = model.prepare(&ex.input).unwrap();
            let out = beam_decode(&model.bind(&prepared), &beam(3, 1, 20, true)).unwrap();
            assert!(!has_repeated_trigram(&out), "{out:?}");
            decodes += 1;
        }
    }
    assert_eq!(decodes, 100);

    // A model that wants to loop "5 6 7 5 6 7 ..." is stopped from doing so,
    // while the unblocked search repeats.
    let looping = Rigged {
        size: 9,
        f: |g: &[usize]| {
            let want = 5 + g.len() % 3;
            (0..9)
                .map(|t| if t == want { 0.9 } else if t == EOS_ID { 0.001 } else { 0.099 / 7.0 })
                .collect()
        },
    };
    assert!(has_repeated_trigram(&beam_decode(&looping, &beam(3, 1, 12, false)).unwrap()));
    for b in 1..=4 {
        let out = beam_decode(&looping, &beam(b, 1, 12, true)).unwrap();
        assert!(!has_repeated_trigram(&out), "beam {b}: {out:?}");
    }
}

#[test]
fn length_penalty_ranks_the_worked_example() {
    let short = BeamHypothesis {
        tokens: vec![5, 6, 7, EOS_ID],
        log_prob: -4.0,
        finished: true,
    };
    let long = BeamHypothesis {
        tokens: vec![5, 6, 7, 8, 5, 6, 7, EOS_ID],
        log_prob: -5.0,
        finished: true,
    };
    assert_eq!(length_penalized_score(-4.0, 4, 1.5), -0.5);
    let want = -5.0 / 8f64.powf(1.5);
    assert_eq!(long.score(1.5), want);
    assert!((want + 0.221).abs() < 1e-3);
    assert_eq!(rank_finished(&[short.clone(), long.clone()], 1.5), Some(1));
    assert_eq!(rank_finished(&[long, short], 1.5), Some(0));
}

#[test]
fn peaked_model_is_followed_exactly() {
    let script = [6usize, 8, 5, 7];
    let peaked = Rigged {
        size: 10,
        f: |g: &[usize]| {
            let want = script.get(g.len()).copied().unwrap_or(EOS_ID);
            (0..10).map(|t| if t == want { 1.0 - 9e-9 } else { 1e-9 }).collect()
        },
    };
    for b in [1, 3, 5] {
        assert_eq!(beam_decode(&peaked, &beam(b, 1, 100, true)).unwrap(), script);
    }
    assert!(beam_search(&peaked, &beam(0, 1, 10, true)).is_err());
}

#[test]
fn end_token_waits_for_min_len() {
    let eager = Rigged {
        size: 8,
        f: |_: &[usize]| (0..8).map(|t| if t == EOS_ID { 0.9 } else { 0.1 / 7.0 }).collect(),
    };
    assert!(beam_decode(&eager, &beam(2, 0, 10, false)).unwrap().is_empty());
    for min_len in 1..5 {
        assert_eq!(greedy_decode(&eager, min_len, 10, false).unwrap().len(), min_len);
        assert_eq!(beam_decode(&eager, &beam(1, min_len, 10, false)).unwrap().len(), min_len);
    }
    let never = Rigged {
        size: 8,
        f: |_: &[usize]| (0..8).map(|t| if t == 6 { 0.9 } else { 0.1 / 7.0 }).collect(),
    };
    assert_eq!(greedy_decode(&never, 0, 7, false).unwrap(), vec![6; 7]);
    assert_eq!(beam_decode(&never, &beam(5, 0, 7, false)).unwrap().len(), 7);
}

#[test]
fn beam_log_probs_never_increase() {
    let (vocab, examples) = synthetic_examples(5, 8);
    let model = Generator::new(tiny_config(8), vocab, OutputKind::Question, 2).unwrap();
    for ex in &examples {
        let prepared = model.prepare(&ex.input).unwrap();
        let bound = model.bind(&prepared);
        for h in beam_search(&bound, &beam(4, 1, 10, true)).unwrap() {
            assert!(h.finished);
            let mut lp = 0.0;
            for i in 0..h.tokens.len() {
                let step = bound.log_probs(&h.tokens[..i]).unwrap()[h.tokens[i]];
                assert!(step <= 0.0);
                lp += step;
            }
            assert!((lp - h.log_prob).abs() < 1e-9);
        }
    }
}

const DIST: [f64; 4] = [0.5, 0.3, 0.15, 0.05];

#[test]
fn nucleus_frequencies_match_truncation() {
    let dist = nucleus_filter(&DIST, 10, 0.7).unwrap();
    assert_eq!(dist.iter().map(|d| d.0).collect::<Vec<_>>(), [0, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = [0usize; 4];
    let draws = 100_000;
    for _ in 0..draws {
        counts[sample_from(&dist, &mut rng).unwrap()] += 1;
    }
    let want = [0.625, 0.375, 0.0, 0.0];
    for (c, w) in counts.iter().zip(want) {
        assert!((*c as f64 / draws as f64 - w).abs() <= 0.01, "{counts:?}");
    }
}

/// One step over words 4..8 with `DIST` and no end token.
fn four_way() -> Rigged<impl Fn(&[usize]) -> Vec<f64>> {
    Rigged {
        size: 8,
        f: |_: &[usize]| {
            let mut p = vec![0.0; 8];
            p[4..8].copy_from_slice(&DIST);
            p
        },
    }
}

#[test]
fn nucleus_sampler_end_to_end() {
    let model = four_way();
    let opts = SamplingOptions {
        top_k: 10,
        top_p: 0.7,
        min_len: 0,
        max_len: 1,
    };
    let mut counts = [0usize; 8];
    let draws = 100_000u64;
    for seed in 0..draws {
        counts[nucleus_sample(&model, &opts, seed).unwrap()[0]] += 1;
    }
    assert!((counts[4] as f64 / draws as f64 - 0.625).abs() <= 0.01);
    assert!((counts[5] as f64 / draws as f64 - 0.375).abs() <= 0.01);
    assert_eq!(counts[6] + counts[7], 0);

    // k = 1 or a vanishing p leaves only the argmax.
    for (k, p) in [(1, 0.7), (1, 1.0), (10, 1e-9)] {
        let opts = SamplingOptions {
            top_k: k,
            top_p: p,
            min_len: 0,
            max_len: 5,
        };
        for seed in 0..50 {
            assert_eq!(nucleus_sample(&model, &opts, seed).unwrap(), vec![4; 5]);
        }
    }
    assert!(nucleus_filter(&DIST, 0, 0.5).is_err());
    assert!(nucleus_filter(&DIST, 3, 0.0).is_err());
}

#[test]
fn sampling_is_seeded() {
    let (vocab, examples) = synthetic_examples(3, 1);
    let model = Generator::new(tiny_config(8), vocab, OutputKind::Question, 9).unwrap();
    let prepared = model.prepare(&examples[0].input).unwrap();
    let bound = model.bind(&prepared);
    let opts = SamplingOptions::default();
    assert_eq!(nucleus_sample(&bound, &opts, 3).unwrap(), nucleus_sample(&bound, &opts, 3).unwrap());
}
