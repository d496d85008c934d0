//! Simulated remote attestation.
//!
//! An enclave's measurement is a digest of the trading program version and
//! every configuration value that changes its behavior. A root of trust
//! signs `measurement || enclave_pubkey || nonce`; clients compare the
//! measurement with the one they expect for the published program and
//! config, and check that the nonce is the challenge they just sent.

use crate::crypto::{self, hash, Hash256, KeyPair, PublicKey, Signature};
use crate::wire::{Reader, WireError, Writer};

pub const REPORT_LEN: usize = 32 + 32 + 32 + 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Measurement(pub Hash256);

/// Everything that goes into an enclave measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnclaveIdentity {
    pub program_version: String,
    pub checkpoint_hash: Hash256,
    pub network_config_hash: Hash256,
    pub confirm_depth: u64,
    pub fifo_capacity: u64,
}

impl EnclaveIdentity {
    pub fn measurement(&self) -> Measurement {
        let mut w = Writer::new();
        w.str16(&self.program_version)
            .raw(&self.checkpoint_hash.0)
            .raw(&self.network_config_hash.0)
            .u64(self.confirm_depth)
            .u64(self.fifo_capacity);
        Measurement(hash(&w.finish()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationReport {
    pub measurement: Measurement,
    pub enclave_pubkey: PublicKey,
    pub nonce: [u8; 32],
    pub root_signature: Signature,
}

fn signed_body(m: &Measurement, enclave_pubkey: &PublicKey, nonce: &[u8; 32]) -> [u8; 96] {
    let mut body = [0u8; 96];
    body[..32].copy_from_slice(&m.0 .0);
    body[32..64].copy_from_slice(&enclave_pubkey.0);
    body[64..].copy_from_slice(nonce);
    body
}

impl AttestationReport {
    pub fn encode(&self) -> [u8; REPORT_LEN] {
        let mut out = [0u8; REPORT_LEN];
        out[..96].copy_from_slice(&signed_body(
            &self.measurement,
            &self.enclave_pubkey,
            &self.nonce,
        ));
        out[96..].copy_from_slice(&self.root_signature.0);
        out
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(AttestationReport {
            measurement: Measurement(Hash256(r.array()?)),
            enclave_pubkey: PublicKey(r.array()?),
            nonce: r.array()?,
            root_signature: Signature(r.array()?),
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let rep = Self::read(&mut r)?;
        r.finish()?;
        Ok(rep)
    }
}

/// Something that can vouch for an enclave's measurement.
pub trait RootOfTrust {
    fn public_key(&self) -> PublicKey;
    fn quote(
        &self,
        measurement: Measurement,
        enclave_pubkey: PublicKey,
        nonce: [u8; 32],
    ) -> AttestationReport;
}

/// Software stand-in for a hardware quoting key.
#[derive(Debug, Clone)]
pub struct SoftwareRoot {
    key: KeyPair,
}

impl SoftwareRoot {
    pub fn new(key: KeyPair) -> Self {
        SoftwareRoot { key }
    }
}

impl RootOfTrust for SoftwareRoot {
    fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    fn quote(
        &self,
        measurement: Measurement,
        enclave_pubkey: PublicKey,
        nonce: [u8; 32],
    ) -> AttestationReport {
        let root_signature = self
            .key
            .sign(&signed_body(&measurement, &enclave_pubkey, &nonce));
        AttestationReport {
            measurement,
            enclave_pubkey,
            nonce,
            root_signature,
        }
    }
}

pub fn generate_report(
    root: &dyn RootOfTrust,
    identity: &EnclaveIdentity,
    enclave_pubkey: PublicKey,
    challenge: [u8; 32],
) -> AttestationReport {
    root.quote(identity.measurement(), enclave_pubkey, challenge)
}

/// True iff the root signature verifies, the measurement is the expected
/// one, and the report echoes this caller's challenge.
pub fn verify_report(
    report: &AttestationReport,
    expected: &Measurement,
    root_pubkey: &PublicKey,
    challenge: &[u8; 32],
) -> bool {
    if &report.measurement != expected || &report.nonce != challenge {
        return false;
    }
    let body = signed_body(&report.measurement, &report.enclave_pubkey, &report.nonce);
    crypto::verify(root_pubkey, &body, &report.root_signature).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity() -> EnclaveIdentity {
        EnclaveIdentity {
            program_version: "bdtf-trading-program/1.0".into(),
            checkpoint_hash: hash(b"genesis"),
            network_config_hash: hash(b"config"),
            confirm_depth: 6,
            fifo_capacity: 144,
        }
    }

    fn root() -> SoftwareRoot {
        SoftwareRoot::new(KeyPair::from_seed([42; 32]))
    }

    fn enclave_key() -> PublicKey {
        KeyPair::from_seed([43; 32]).public_key()
    }

    #[test]
    fn same_config_same_report() {
        let a = generate_report(&root(), &identity(), enclave_key(), [1; 32]);
        let b = generate_report(&root(), &identity(), enclave_key(), [1; 32]);
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_changes_measurement() {
        let mut other = identity();
        other.checkpoint_hash = hash(b"later checkpoint");
        assert_ne!(identity().measurement(), other.measurement());
    }

    #[test]
    fn every_field_is_measured() {
        let base = identity().measurement();
        let mut i = identity();
        i.confirm_depth = 7;
        assert_ne!(i.measurement(), base);
        let mut i = identity();
        i.fifo_capacity = 10;
        assert_ne!(i.measurement(), base);
        let mut i = identity();
        i.network_config_hash = hash(b"other");
        assert_ne!(i.measurement(), base);
    }

    #[test]
    fn honest_report_verifies() {
        let r = generate_report(&root(), &identity(), enclave_key(), [9; 32]);
        assert!(verify_report(&r, &identity().measurement(), &root().public_key(), &[9; 32]));
        // Independent check straight through the signature primitive.
        let mut body = Vec::new();
        body.extend_from_slice(&r.measurement.0 .0);
        body.extend_from_slice(&r.enclave_pubkey.0);
        body.extend_from_slice(&r.nonce);
        assert_eq!(
            crypto::verify(&root().public_key(), &body, &r.root_signature),
            Ok(true)
        );
    }

    #[test]
    fn tampered_program_fails() {
        let mut tampered = identity();
        tampered.program_version.push_str("+patched");
        let r = generate_report(&root(), &tampered, enclave_key(), [9; 32]);
        assert!(!verify_report(&r, &identity().measurement(), &root().public_key(), &[9; 32]));
    }

    #[test]
    fn stale_nonce_fails() {
        let first = generate_report(&root(), &identity(), enclave_key(), [1; 32]);
        assert!(verify_report(&first, &identity().measurement(), &root().public_key(), &[1; 32]));
        assert!(!verify_report(&first, &identity().measurement(), &root().public_key(), &[2; 32]));
    }

    #[test]
    fn foreign_root_fails() {
        let rogue = SoftwareRoot::new(KeyPair::from_seed([5; 32]));
        let r = generate_report(&rogue, &identity(), enclave_key(), [1; 32]);
        assert!(!verify_report(&r, &identity().measurement(), &root().public_key(), &[1; 32]));
    }

    #[test]
    fn report_wire_is_160_bytes() {
        let r = generate_report(&root(), &identity(), enclave_key(), [3; 32]);
        let enc = r.encode();
        assert_eq!(enc.len(), 160);
        assert_eq!(AttestationReport::decode(&enc).unwrap(), r);
    }
}
