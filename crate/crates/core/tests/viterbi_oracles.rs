mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softtrellis::viterbi::{decode, viterbi_encode};
use softtrellis::{Topology, TrellisConfig};

#[test]
fn viterbi_matches_exhaustive_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let cfg = tiny_config(&mut rng, 6);
        let w = random_block(&mut rng, cfg.block_len(), 2.5);
        let c = cfg.emission();
        let best = enumerate_paths(&cfg)
            .iter()
            .map(|p| energy(&w, p.states.iter().map(|&s| c[s])))
            .fold(f64::INFINITY, f64::min);
        let path = viterbi_encode(&w, &cfg).unwrap();
        assert_eq!(path.distortion, best);
        assert_eq!(path.distortion, energy(&w, path.codeword.iter().copied()));
        for (t, &s) in path.states.iter().enumerate() {
            assert_eq!(path.codeword[t], c[s]);
        }
    }
}

#[test]
fn fully_connected_constant_input() {
    let cfg = TrellisConfig::build(8, 2, 0, 3, Topology::FullyConnected).unwrap();
    for s in 0..4 {
        let w = vec![cfg.emission()[s]; 8];
        let path = viterbi_encode(&w, &cfg).unwrap();
        assert_eq!(path.states, vec![s; 8]);
        assert_eq!(path.distortion, 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn encode_is_idempotent_and_decodes(seed in any::<u64>(), w in proptest::collection::vec(-3.0f64..3.0, 16)) {
        let cfg = TrellisConfig::build(16, 2, 2, seed, Topology::ShiftRegister).unwrap();
        let first = viterbi_encode(&w, &cfg).unwrap();
        prop_assert_eq!(decode(&first.bits, &cfg).unwrap(), first.codeword.clone());
        let again = viterbi_encode(&first.codeword, &cfg).unwrap();
        prop_assert_eq!(again.distortion, 0.0);
        prop_assert_eq!(again.codeword, first.codeword);
    }
}
