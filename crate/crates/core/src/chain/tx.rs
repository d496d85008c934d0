use crate::crypto::{self, hash, Address, CryptoError, Hash256, KeyPair, PublicKey, Signature};
use crate::types::Amount;
use crate::wire::{Reader, WireError, Writer};

pub const PAYMENT_TAG: u8 = 0x01;
pub const REVIEW_TAG: u8 = 0x02;

/// Encoded size of a payment: tag, from, to, amount, nonce, signature.
pub const PAYMENT_LEN: usize = 1 + 20 + 20 + 8 + 8 + 64;
/// Encoded size of a review: tag, reviewer, subject, rating, comment hash, signature.
pub const REVIEW_LEN: usize = 1 + 20 + 20 + 1 + 32 + 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaymentTransaction {
    pub from: Address,
    pub to: Address,
    pub amount: Amount,
    pub nonce: u64,
    pub signature: Signature,
}

impl PaymentTransaction {
    pub fn new_signed(signer: &KeyPair, to: Address, amount: Amount, nonce: u64) -> Self {
        let mut tx = PaymentTransaction {
            from: signer.address(),
            to,
            amount,
            nonce,
            signature: Signature::ZERO,
        };
        tx.signature = signer.sign(&tx.signing_bytes());
        tx
    }

    /// Everything except the signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(PAYMENT_LEN - 64);
        w.u8(PAYMENT_TAG)
            .raw(&self.from.0)
            .raw(&self.to.0)
            .u64(self.amount)
            .u64(self.nonce);
        w.finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signing_bytes();
        out.extend_from_slice(&self.signature.0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let tx = Self::read(&mut r)?;
        r.finish()?;
        Ok(tx)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let tag = r.u8()?;
        if tag != PAYMENT_TAG {
            return Err(WireError::UnknownTag {
                what: "payment",
                tag,
            });
        }
        Self::read_body(r)
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(PaymentTransaction {
            from: Address(r.array()?),
            to: Address(r.array()?),
            amount: r.u64()?,
            nonce: r.u64()?,
            signature: Signature(r.array()?),
        })
    }

    pub fn tx_hash(&self) -> Hash256 {
        hash(&self.encode())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewTransaction {
    pub reviewer: Address,
    pub subject: Address,
    pub rating: u8,
    pub comment_hash: Hash256,
    pub signature: Signature,
}

impl ReviewTransaction {
    pub fn new_signed(signer: &KeyPair, subject: Address, rating: u8, comment: &[u8]) -> Self {
        let mut tx = ReviewTransaction {
            reviewer: signer.address(),
            subject,
            rating,
            comment_hash: hash(comment),
            signature: Signature::ZERO,
        };
        tx.signature = signer.sign(&tx.signing_bytes());
        tx
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(REVIEW_LEN - 64);
        w.u8(REVIEW_TAG)
            .raw(&self.reviewer.0)
            .raw(&self.subject.0)
            .u8(self.rating)
            .raw(&self.comment_hash.0);
        w.finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signing_bytes();
        out.extend_from_slice(&self.signature.0);
        out
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(ReviewTransaction {
            reviewer: Address(r.array()?),
            subject: Address(r.array()?),
            rating: r.u8()?,
            comment_hash: Hash256(r.array()?),
            signature: Signature(r.array()?),
        })
    }
}

/// Any transaction the ledger carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transaction {
    Payment(PaymentTransaction),
    Review(ReviewTransaction),
}

impl Transaction {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Transaction::Payment(p) => p.encode(),
            Transaction::Review(r) => r.encode(),
        }
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        match r.u8()? {
            PAYMENT_TAG => Ok(Transaction::Payment(PaymentTransaction::read_body(r)?)),
            REVIEW_TAG => Ok(Transaction::Review(ReviewTransaction::read_body(r)?)),
            tag => Err(WireError::UnknownTag {
                what: "transaction",
                tag,
            }),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let tx = Self::read(&mut r)?;
        r.finish()?;
        Ok(tx)
    }

    /// Merkle leaf hash: SHA-256 of the canonical encoding.
    pub fn tx_hash(&self) -> Hash256 {
        hash(&self.encode())
    }

    pub fn author(&self) -> Address {
        match self {
            Transaction::Payment(p) => p.from,
            Transaction::Review(r) => r.reviewer,
        }
    }

    fn signing_bytes(&self) -> Vec<u8> {
        match self {
            Transaction::Payment(p) => p.signing_bytes(),
            Transaction::Review(r) => r.signing_bytes(),
        }
    }

    fn signature(&self) -> &Signature {
        match self {
            Transaction::Payment(p) => &p.signature,
            Transaction::Review(r) => &r.signature,
        }
    }
}

impl From<PaymentTransaction> for Transaction {
    fn from(p: PaymentTransaction) -> Self {
        Transaction::Payment(p)
    }
}

impl From<ReviewTransaction> for Transaction {
    fn from(r: ReviewTransaction) -> Self {
        Transaction::Review(r)
    }
}

/// A transaction plus the public key that authorizes it.
///
/// Addresses are hashes, so the key cannot be recovered from the
/// transaction itself. It travels beside the canonical encoding as a
/// witness and is not covered by the Merkle root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedTransaction {
    pub tx: Transaction,
    pub signer: PublicKey,
}

impl SignedTransaction {
    pub fn payment(signer: &KeyPair, to: Address, amount: Amount, nonce: u64) -> Self {
        SignedTransaction {
            tx: PaymentTransaction::new_signed(signer, to, amount, nonce).into(),
            signer: signer.public_key(),
        }
    }

    pub fn review(signer: &KeyPair, subject: Address, rating: u8, comment: &[u8]) -> Self {
        SignedTransaction {
            tx: ReviewTransaction::new_signed(signer, subject, rating, comment).into(),
            signer: signer.public_key(),
        }
    }

    /// Witness key hashes to the author address and the signature verifies.
    pub fn check_authorization(&self) -> Result<bool, CryptoError> {
        if Address::from_public_key(&self.signer) != self.tx.author() {
            return Ok(false);
        }
        crypto::verify(&self.signer, &self.tx.signing_bytes(), self.tx.signature())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.tx.encode();
        out.extend_from_slice(&self.signer.0);
        out
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let tx = Transaction::read(r)?;
        let signer = PublicKey(r.array()?);
        Ok(SignedTransaction { tx, signer })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let tx = Self::read(&mut r)?;
        r.finish()?;
        Ok(tx)
    }
}
