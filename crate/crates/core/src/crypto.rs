//! Hashing, signatures and chunked authenticated encryption.
//!
//! SHA-256 is the only hash in the system: block headers, Merkle trees,
//! addresses and measurements all use it. Signatures are Ed25519.
//! Bulk data is sealed with AES-256-GCM in 64 KiB chunks so that any single
//! chunk can be opened on its own.

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce, Tag};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::{hex_bytes, TradeId};

/// Plaintext bytes per encrypted chunk.
pub const CHUNK_SIZE: usize = 64 * 1024;

hex_bytes!(
    /// SHA-256 digest.
    Hash256,
    32
);

hex_bytes!(
    /// Ledger account identifier: first 20 bytes of SHA-256(public key).
    Address,
    20
);

hex_bytes!(
    /// Ed25519 verification key bytes.
    PublicKey,
    32
);

hex_bytes!(
    /// Ed25519 signature bytes.
    Signature,
    64
);

hex_bytes!(
    /// AES-256 key a buyer generates for one trade.
    DataKey,
    32
);

impl Hash256 {
    pub const ZERO: Hash256 = Hash256([0u8; 32]);
}

impl Signature {
    pub const ZERO: Signature = Signature([0u8; 64]);
}

impl DataKey {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        DataKey(k)
    }
}

impl Address {
    pub fn from_public_key(pk: &PublicKey) -> Self {
        let digest = hash(&pk.0);
        let mut a = [0u8; 20];
        a.copy_from_slice(&digest.0[..20]);
        Address(a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("malformed public key")]
    MalformedKey,
    #[error("cannot encrypt an empty payload")]
    EmptyPayload,
    #[error("chunk {index} failed authentication")]
    Authentication { index: u32 },
    #[error("chunk sequence mismatch: {0}")]
    ChunkMismatch(String),
}

pub fn hash(bytes: &[u8]) -> Hash256 {
    Hash256(Sha256::digest(bytes).into())
}

/// SHA-256 over the concatenation of two digests.
pub fn hash_pair(left: &Hash256, right: &Hash256) -> Hash256 {
    let mut h = Sha256::new();
    h.update(left.0);
    h.update(right.0);
    Hash256(h.finalize().into())
}

/// Ed25519 signing key together with its derived public key and address.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
    address: Address,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair")
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&seed);
        let public = PublicKey(signing.verifying_key().to_bytes());
        let address = Address::from_public_key(&public);
        Self {
            signing,
            public,
            address,
        }
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }
}

/// Strict Ed25519 verification. A key that does not decode to a curve point
/// is an error rather than a plain `false`.
pub fn verify(pk: &PublicKey, message: &[u8], sig: &Signature) -> Result<bool, CryptoError> {
    let vk = VerifyingKey::from_bytes(&pk.0).map_err(|_| CryptoError::MalformedKey)?;
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    Ok(vk.verify_strict(message, &sig).is_ok())
}

/// One AES-256-GCM sealed slice of a larger payload.
#[derive(Clone, PartialEq, Eq)]
pub struct CipherChunk {
    pub index: u32,
    pub total: u32,
    pub nonce: [u8; 12],
    pub tag: [u8; 16],
    pub body: Vec<u8>,
}

impl std::fmt::Debug for CipherChunk {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CipherChunk")
            .field("index", &self.index)
            .field("total", &self.total)
            .field("body_len", &self.body.len())
            .finish()
    }
}

/// Nonce for chunk `index`: the counter in little-endian, zero padded.
pub fn chunk_nonce(index: u32) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[..8].copy_from_slice(&u64::from(index).to_le_bytes());
    n
}

/// Associated data binding a chunk to its trade and position.
pub fn chunk_aad(trade_id: &TradeId, index: u32, total: u32) -> [u8; 24] {
    let mut aad = [0u8; 24];
    aad[..16].copy_from_slice(&trade_id.0);
    aad[16..20].copy_from_slice(&index.to_be_bytes());
    aad[20..].copy_from_slice(&total.to_be_bytes());
    aad
}

pub fn encrypt_chunked(
    key: &DataKey,
    data: &[u8],
    trade_id: &TradeId,
) -> Result<Vec<CipherChunk>, CryptoError> {
    if data.is_empty() {
        return Err(CryptoError::EmptyPayload);
    }
    let cipher = Aes256Gcm::new_from_slice(&key.0).expect("32-byte key");
    let total = u32::try_from(data.len().div_ceil(CHUNK_SIZE))
        .map_err(|_| CryptoError::ChunkMismatch("payload has too many chunks".into()))?;
    data.chunks(CHUNK_SIZE)
        .enumerate()
        .map(|(i, slice)| {
            let index = i as u32;
            let nonce = chunk_nonce(index);
            let mut body = slice.to_vec();
            let tag = cipher
                .encrypt_in_place_detached(
                    Nonce::from_slice(&nonce),
                    &chunk_aad(trade_id, index, total),
                    &mut body,
                )
                .expect("AES-GCM encryption of bounded chunk");
            Ok(CipherChunk {
                index,
                total,
                nonce,
                tag: tag.into(),
                body,
            })
        })
        .collect()
}

/// Opens a single chunk without needing its siblings.
pub fn decrypt_chunk(
    key: &DataKey,
    chunk: &CipherChunk,
    trade_id: &TradeId,
) -> Result<Vec<u8>, CryptoError> {
    if chunk.index >= chunk.total {
        return Err(CryptoError::ChunkMismatch(format!(
            "index {} not below total {}",
            chunk.index, chunk.total
        )));
    }
    if chunk.body.len() > CHUNK_SIZE {
        return Err(CryptoError::ChunkMismatch("oversized chunk body".into()));
    }
    if chunk.nonce != chunk_nonce(chunk.index) {
        return Err(CryptoError::Authentication { index: chunk.index });
    }
    let cipher = Aes256Gcm::new_from_slice(&key.0).expect("32-byte key");
    let mut body = chunk.body.clone();
    cipher
        .decrypt_in_place_detached(
            Nonce::from_slice(&chunk.nonce),
            &chunk_aad(trade_id, chunk.index, chunk.total),
            &mut body,
            Tag::from_slice(&chunk.tag),
        )
        .map_err(|_| CryptoError::Authentication { index: chunk.index })?;
    Ok(body)
}

/// Opens a complete chunk sequence. Chunks must be present exactly once each
/// and in order, all agreeing on `total`.
pub fn decrypt_chunked(
    key: &DataKey,
    chunks: &[CipherChunk],
    trade_id: &TradeId,
) -> Result<Vec<u8>, CryptoError> {
    let total = chunks
        .first()
        .map(|c| c.total)
        .ok_or_else(|| CryptoError::ChunkMismatch("no chunks".into()))?;
    if chunks.len() != total as usize {
        return Err(CryptoError::ChunkMismatch(format!(
            "have {} chunks, header says {}",
            chunks.len(),
            total
        )));
    }
    let mut out = Vec::with_capacity(chunks.len() * CHUNK_SIZE);
    for (i, c) in chunks.iter().enumerate() {
        if c.index as usize != i || c.total != total {
            return Err(CryptoError::ChunkMismatch(format!(
                "position {i} holds chunk {}/{}",
                c.index, c.total
            )));
        }
        out.extend_from_slice(&decrypt_chunk(key, c, trade_id)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(7)
    }

    #[test]
    fn sha256_empty_vector() {
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn sha256_abc_vector() {
        assert_eq!(
            hash(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn address_is_hash_prefix() {
        let kp = KeyPair::generate(&mut rng());
        let h = hash(&kp.public_key().0);
        assert_eq!(&kp.address().0[..], &h.0[..20]);
    }

    #[test]
    fn sign_verify_empty_message() {
        let kp = KeyPair::generate(&mut rng());
        let sig = kp.sign(b"");
        assert_eq!(verify(&kp.public_key(), b"", &sig), Ok(true));
    }

    #[test]
    fn bit_flip_in_message_fails() {
        let kp = KeyPair::generate(&mut rng());
        let msg = b"pay 10 to seller".to_vec();
        let sig = kp.sign(&msg);
        for bit in 0..msg.len() * 8 {
            let mut m = msg.clone();
            m[bit / 8] ^= 1 << (bit % 8);
            assert_eq!(verify(&kp.public_key(), &m, &sig), Ok(false));
        }
    }

    #[test]
    fn bit_flip_in_signature_fails() {
        let kp = KeyPair::generate(&mut rng());
        let sig = kp.sign(b"m");
        let mut bad = sig;
        bad.0[10] ^= 0x04;
        assert_eq!(verify(&kp.public_key(), b"m", &bad), Ok(false));
    }

    #[test]
    fn other_key_does_not_verify() {
        let mut r = rng();
        let a = KeyPair::generate(&mut r);
        let b = KeyPair::generate(&mut r);
        let sig = a.sign(b"hello");
        assert_eq!(verify(&b.public_key(), b"hello", &sig), Ok(false));
    }

    #[test]
    fn malformed_key_is_error() {
        // y = 2 is not on the curve.
        let mut raw = [0u8; 32];
        raw[0] = 2;
        let res = verify(&PublicKey(raw), b"x", &Signature::ZERO);
        assert_eq!(res, Err(CryptoError::MalformedKey));
    }

    #[test]
    fn one_byte_payload_is_one_chunk() {
        let key = DataKey::random(&mut rng());
        let id = TradeId([1; 16]);
        let chunks = encrypt_chunked(&key, b"x", &id).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(decrypt_chunked(&key, &chunks, &id).unwrap(), b"x");
    }

    #[test]
    fn boundary_payload_splits_in_two() {
        let mut r = rng();
        let key = DataKey::random(&mut r);
        let id = TradeId([2; 16]);
        let mut data = vec![0u8; CHUNK_SIZE + 1];
        r.fill_bytes(&mut data);
        let chunks = encrypt_chunked(&key, &data, &id).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1].body.len(), 1);
        let first = decrypt_chunk(&key, &chunks[0], &id).unwrap();
        assert_eq!(first, &data[..CHUNK_SIZE]);
    }

    #[test]
    fn wrong_trade_id_fails_authentication() {
        let key = DataKey::random(&mut rng());
        let chunks = encrypt_chunked(&key, b"payload", &TradeId([3; 16])).unwrap();
        assert_eq!(
            decrypt_chunk(&key, &chunks[0], &TradeId([4; 16])),
            Err(CryptoError::Authentication { index: 0 })
        );
    }

    #[test]
    fn empty_payload_rejected() {
        let key = DataKey::random(&mut rng());
        assert_eq!(
            encrypt_chunked(&key, b"", &TradeId([0; 16])),
            Err(CryptoError::EmptyPayload)
        );
    }

    #[test]
    fn reordered_or_missing_chunks_rejected() {
        let mut r = rng();
        let key = DataKey::random(&mut r);
        let id = TradeId([5; 16]);
        let data = vec![7u8; CHUNK_SIZE * 2 + 5];
        let mut chunks = encrypt_chunked(&key, &data, &id).unwrap();
        chunks.swap(0, 1);
        assert!(matches!(
            decrypt_chunked(&key, &chunks, &id),
            Err(CryptoError::ChunkMismatch(_))
        ));
        chunks.swap(0, 1);
        chunks.pop();
        assert!(matches!(
            decrypt_chunked(&key, &chunks, &id),
            Err(CryptoError::ChunkMismatch(_))
        ));
    }

    #[test]
    fn tampered_index_or_total_fails() {
        let key = DataKey::random(&mut rng());
        let id = TradeId([6; 16]);
        let data = vec![1u8; CHUNK_SIZE + 10];
        let chunks = encrypt_chunked(&key, &data, &id).unwrap();
        let mut c = chunks[0].clone();
        c.total = 3;
        assert_eq!(
            decrypt_chunk(&key, &c, &id),
            Err(CryptoError::Authentication { index: 0 })
        );
    }
}
