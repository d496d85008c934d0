use bdtf_core::crypto::{decrypt_chunk, decrypt_chunked, encrypt_chunked, hash, DataKey, CHUNK_SIZE};
use bdtf_core::types::TradeId;
use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn bytes(seed: u64, n: usize) -> Vec<u8> {
    let mut v = vec![0u8; n];
    ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut v);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_trip_any_size(len in 1usize..(4 << 20), seed: u64) {
        let data = bytes(seed, len);
        let key = DataKey(hash(&seed.to_be_bytes()).0);
        let id = TradeId(hash(&len.to_be_bytes()).0[..16].try_into().unwrap());
        let chunks = encrypt_chunked(&key, &data, &id).unwrap();
        prop_assert_eq!(chunks.len(), len.div_ceil(CHUNK_SIZE));
        prop_assert_eq!(decrypt_chunked(&key, &chunks, &id).unwrap(), data.clone());

        // Each chunk decrypts alone to its slice of the plaintext.
        for c in &chunks {
            let start = c.index as usize * CHUNK_SIZE;
            let end = (start + CHUNK_SIZE).min(len);
            prop_assert_eq!(decrypt_chunk(&key, c, &id).unwrap(), data[start..end].to_vec());
        }

        // A chunk made for one trade never opens under another.
        let mut other = id;
        other.0[0] ^= 1;
        prop_assert!(decrypt_chunk(&key, &chunks[0], &other).is_err());
    }

    #[test]
    fn any_bit_flip_fails(len in 1usize..5000, seed: u64, pos: usize, bit in 0u8..8) {
        let data = bytes(seed, len);
        let key = DataKey([3; 32]);
        let id = TradeId([4; 16]);
        let c = encrypt_chunked(&key, &data, &id).unwrap().remove(0);
        let body_len = c.body.len();
        let mut m = c.clone();
        match pos % 3 {
            0 => m.body[pos % body_len] ^= 1 << bit,
            1 => m.tag[pos % 16] ^= 1 << bit,
            _ => m.nonce[pos % 12] ^= 1 << bit,
        }
        prop_assert!(decrypt_chunk(&key, &m, &id).is_err());
    }
}
