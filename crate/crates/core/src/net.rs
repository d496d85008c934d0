//! Protocol messages and their frame format:
//! `length(4 BE) || type(1) || payload`, where length counts type and
//! payload.

use crate::attestation::AttestationReport;
use crate::chain::{Block, SignedTransaction};
use crate::clients::{DataSpec, DemandBroadcast, SellerReply};
use crate::crypto::{Address, CipherChunk, DataKey, CHUNK_SIZE};
use crate::exchange::TradeParams;
use crate::spv::{EvidenceStatus, PaymentEvidence};
use crate::types::{Amount, Endpoint, TradeId};
use crate::wire::{Reader, WireError, Writer};

/// Largest frame accepted, type byte included.
pub const MAX_FRAME: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MessageType {
    Demand = 0x01,
    Reply = 0x02,
    Select = 0x03,
    Accept = 0x04,
    TradeInit = 0x05,
    Abort = 0x06,
    Tx = 0x07,
    Block = 0x08,
    AttestRequest = 0x10,
    AttestResponse = 0x11,
    OpenTrade = 0x12,
    TradeOpened = 0x13,
    OpenRejected = 0x14,
    ParamsRequest = 0x15,
    ParamsResponse = 0x16,
    DepositData = 0x17,
    DepositAck = 0x18,
    Sample = 0x19,
    PaymentEvidence = 0x1a,
    DataRelease = 0x1b,
    PaymentRejected = 0x1c,
}

impl MessageType {
    pub const ALL: [MessageType; 21] = [
        MessageType::Demand,
        MessageType::Reply,
        MessageType::Select,
        MessageType::Accept,
        MessageType::TradeInit,
        MessageType::Abort,
        MessageType::Tx,
        MessageType::Block,
        MessageType::AttestRequest,
        MessageType::AttestResponse,
        MessageType::OpenTrade,
        MessageType::TradeOpened,
        MessageType::OpenRejected,
        MessageType::ParamsRequest,
        MessageType::ParamsResponse,
        MessageType::DepositData,
        MessageType::DepositAck,
        MessageType::Sample,
        MessageType::PaymentEvidence,
        MessageType::DataRelease,
        MessageType::PaymentRejected,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::Demand => "DEMAND",
            MessageType::Reply => "REPLY",
            MessageType::Select => "SELECT",
            MessageType::Accept => "ACCEPT",
            MessageType::TradeInit => "TRADE_INIT",
            MessageType::Abort => "ABORT",
            MessageType::Tx => "TX",
            MessageType::Block => "BLOCK",
            MessageType::AttestRequest => "ATTEST_REQUEST",
            MessageType::AttestResponse => "ATTEST_RESPONSE",
            MessageType::OpenTrade => "OPEN_TRADE",
            MessageType::TradeOpened => "TRADE_OPENED",
            MessageType::OpenRejected => "OPEN_REJECTED",
            MessageType::ParamsRequest => "PARAMS_REQUEST",
            MessageType::ParamsResponse => "PARAMS_RESPONSE",
            MessageType::DepositData => "DEPOSIT_DATA",
            MessageType::DepositAck => "DEPOSIT_ACK",
            MessageType::Sample => "SAMPLE",
            MessageType::PaymentEvidence => "PAYMENT_EVIDENCE",
            MessageType::DataRelease => "DATA_RELEASE",
            MessageType::PaymentRejected => "PAYMENT_REJECTED",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(s))
    }
}

/// Why the enclave refused a request, as carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectCode {
    Spv(EvidenceStatus),
    WrongRecipient,
    WrongPayer,
    AlreadyUsed,
    FeeTooLow,
    MismatchedTerms,
    UnknownId,
    WrongState,
    Malformed,
}

impl RejectCode {
    fn encode(self, w: &mut Writer) {
        match self {
            RejectCode::Spv(s) => w.u8(0).u8(s.to_byte()),
            RejectCode::WrongRecipient => w.u8(1).u8(0),
            RejectCode::WrongPayer => w.u8(2).u8(0),
            RejectCode::AlreadyUsed => w.u8(3).u8(0),
            RejectCode::FeeTooLow => w.u8(4).u8(0),
            RejectCode::MismatchedTerms => w.u8(5).u8(0),
            RejectCode::UnknownId => w.u8(6).u8(0),
            RejectCode::WrongState => w.u8(7).u8(0),
            RejectCode::Malformed => w.u8(8).u8(0),
        };
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let code = r.u8()?;
        let detail = r.u8()?;
        Ok(match code {
            0 => RejectCode::Spv(EvidenceStatus::from_byte(detail).ok_or(WireError::UnknownTag {
                what: "evidence status",
                tag: detail,
            })?),
            1 => RejectCode::WrongRecipient,
            2 => RejectCode::WrongPayer,
            3 => RejectCode::AlreadyUsed,
            4 => RejectCode::FeeTooLow,
            5 => RejectCode::MismatchedTerms,
            6 => RejectCode::UnknownId,
            7 => RejectCode::WrongState,
            8 => RejectCode::Malformed,
            tag => {
                return Err(WireError::UnknownTag {
                    what: "reject code",
                    tag,
                })
            }
        })
    }

    /// Rejections that may clear up once the verifier sees more headers.
    pub fn is_transient(self) -> bool {
        matches!(
            self,
            RejectCode::Spv(EvidenceStatus::InsufficientConfirmations)
                | RejectCode::Spv(EvidenceStatus::UnknownBlock)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenTradeRequest {
    pub service_evidence: PaymentEvidence,
    pub price: Amount,
    pub buyer: Address,
    pub seller: Address,
    pub buyer_endpoint: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Demand(DemandBroadcast),
    Reply(SellerReply),
    /// Buyer picks a seller and proposes exchanges by listing id.
    Select {
        buyer: Address,
        buyer_endpoint: Endpoint,
        price: Amount,
        exchanges: Vec<String>,
    },
    Accept {
        accepted: bool,
        exchanges: Vec<String>,
    },
    /// Trade ids (one per exchange) and the buyer's data key.
    TradeInit {
        trades: Vec<(String, TradeId)>,
        key: DataKey,
    },
    Abort {
        step: u8,
        reason: String,
    },
    Tx(SignedTransaction),
    Block(Block),
    AttestRequest {
        challenge: [u8; 32],
    },
    AttestResponse(AttestationReport),
    OpenTrade(OpenTradeRequest),
    TradeOpened {
        id: TradeId,
    },
    OpenRejected(RejectCode),
    ParamsRequest {
        id: TradeId,
    },
    ParamsResponse {
        id: TradeId,
        params: Option<TradeParams>,
    },
    DepositData {
        id: TradeId,
        chunks: Vec<CipherChunk>,
    },
    DepositAck {
        id: TradeId,
        result: Option<RejectCode>,
    },
    Sample {
        id: TradeId,
        chunk: CipherChunk,
    },
    PaymentEvidence {
        id: TradeId,
        evidence: PaymentEvidence,
    },
    DataRelease {
        id: TradeId,
        chunks: Vec<CipherChunk>,
    },
    PaymentRejected {
        id: TradeId,
        code: RejectCode,
    },
}

fn write_chunk(w: &mut Writer, c: &CipherChunk) {
    w.u32(c.index)
        .u32(c.total)
        .raw(&c.nonce)
        .raw(&c.tag)
        .u32(c.body.len() as u32)
        .raw(&c.body);
}

fn read_chunk(r: &mut Reader<'_>) -> Result<CipherChunk, WireError> {
    let index = r.u32()?;
    let total = r.u32()?;
    let nonce = r.array()?;
    let tag = r.array()?;
    let len = r.u32()? as usize;
    if len > CHUNK_SIZE {
        return Err(WireError::invalid("chunk", "body longer than 64 KiB"));
    }
    Ok(CipherChunk {
        index,
        total,
        nonce,
        tag,
        body: r.take(len)?.to_vec(),
    })
}

fn write_chunks(w: &mut Writer, chunks: &[CipherChunk]) {
    w.u32(chunks.len() as u32);
    for c in chunks {
        write_chunk(w, c);
    }
}

fn read_chunks(r: &mut Reader<'_>) -> Result<Vec<CipherChunk>, WireError> {
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        out.push(read_chunk(r)?);
    }
    Ok(out)
}

fn write_ids(w: &mut Writer, ids: &[String]) {
    w.u8(u8::try_from(ids.len()).expect("at most 255 exchanges"));
    for id in ids {
        w.str16(id);
    }
}

fn read_ids(r: &mut Reader<'_>) -> Result<Vec<String>, WireError> {
    let n = r.u8()?;
    (0..n).map(|_| r.str16()).collect()
}

fn read_endpoint(r: &mut Reader<'_>) -> Result<Endpoint, WireError> {
    Endpoint::new(r.str16()?)
}

fn write_spec(w: &mut Writer, spec: &DataSpec) {
    w.u8(u8::try_from(spec.tags.len()).expect("at most 255 tags"));
    for t in &spec.tags {
        w.str16(t);
    }
    w.u64(spec.min_size).u64(spec.max_size);
}

fn read_spec(r: &mut Reader<'_>) -> Result<DataSpec, WireError> {
    let n = r.u8()?;
    let tags = (0..n).map(|_| r.str16()).collect::<Result<_, _>>()?;
    Ok(DataSpec {
        tags,
        min_size: r.u64()?,
        max_size: r.u64()?,
    })
}

impl Message {
    pub fn kind(&self) -> MessageType {
        match self {
            Message::Demand(_) => MessageType::Demand,
            Message::Reply(_) => MessageType::Reply,
            Message::Select { .. } => MessageType::Select,
            Message::Accept { .. } => MessageType::Accept,
            Message::TradeInit { .. } => MessageType::TradeInit,
            Message::Abort { .. } => MessageType::Abort,
            Message::Tx(_) => MessageType::Tx,
            Message::Block(_) => MessageType::Block,
            Message::AttestRequest { .. } => MessageType::AttestRequest,
            Message::AttestResponse(_) => MessageType::AttestResponse,
            Message::OpenTrade(_) => MessageType::OpenTrade,
            Message::TradeOpened { .. } => MessageType::TradeOpened,
            Message::OpenRejected(_) => MessageType::OpenRejected,
            Message::ParamsRequest { .. } => MessageType::ParamsRequest,
            Message::ParamsResponse { .. } => MessageType::ParamsResponse,
            Message::DepositData { .. } => MessageType::DepositData,
            Message::DepositAck { .. } => MessageType::DepositAck,
            Message::Sample { .. } => MessageType::Sample,
            Message::PaymentEvidence { .. } => MessageType::PaymentEvidence,
            Message::DataRelease { .. } => MessageType::DataRelease,
            Message::PaymentRejected { .. } => MessageType::PaymentRejected,
        }
    }

    fn write_payload(&self, w: &mut Writer) {
        match self {
            Message::Demand(d) => {
                write_spec(w, &d.spec);
                w.u64(d.price).str16(d.buyer_endpoint.as_str());
            }
            Message::Reply(r) => {
                w.raw(&r.seller.0).str16(r.seller_endpoint.as_str());
            }
            Message::Select {
                buyer,
                buyer_endpoint,
                price,
                exchanges,
            } => {
                w.raw(&buyer.0).str16(buyer_endpoint.as_str()).u64(*price);
                write_ids(w, exchanges);
            }
            Message::Accept {
                accepted,
                exchanges,
            } => {
                w.u8(u8::from(*accepted));
                write_ids(w, exchanges);
            }
            Message::TradeInit { trades, key } => {
                w.u8(u8::try_from(trades.len()).expect("at most 255 exchanges"));
                for (ex, id) in trades {
                    w.str16(ex).raw(&id.0);
                }
                w.raw(&key.0);
            }
            Message::Abort { step, reason } => {
                w.u8(*step).str16(reason);
            }
            Message::Tx(tx) => {
                w.raw(&tx.encode());
            }
            Message::Block(b) => {
                w.raw(&b.encode());
            }
            Message::AttestRequest { challenge } => {
                w.raw(challenge);
            }
            Message::AttestResponse(rep) => {
                w.raw(&rep.encode());
            }
            Message::OpenTrade(o) => {
                w.raw(&o.service_evidence.encode())
                    .u64(o.price)
                    .raw(&o.buyer.0)
                    .raw(&o.seller.0)
                    .str16(o.buyer_endpoint.as_str());
            }
            Message::TradeOpened { id } | Message::ParamsRequest { id } => {
                w.raw(&id.0);
            }
            Message::OpenRejected(code) => code.encode(w),
            Message::ParamsResponse { id, params } => {
                w.raw(&id.0);
                match params {
                    None => {
                        w.u8(0);
                    }
                    Some(p) => {
                        w.u8(1)
                            .raw(&p.id.0)
                            .u64(p.price)
                            .raw(&p.buyer.0)
                            .raw(&p.seller.0);
                    }
                }
            }
            Message::DepositData { id, chunks } | Message::DataRelease { id, chunks } => {
                w.raw(&id.0);
                write_chunks(w, chunks);
            }
            Message::DepositAck { id, result } => {
                w.raw(&id.0);
                match result {
                    None => {
                        w.u8(0);
                    }
                    Some(code) => {
                        w.u8(1);
                        code.encode(w);
                    }
                }
            }
            Message::Sample { id, chunk } => {
                w.raw(&id.0);
                write_chunk(w, chunk);
            }
            Message::PaymentEvidence { id, evidence } => {
                w.raw(&id.0).raw(&evidence.encode());
            }
            Message::PaymentRejected { id, code } => {
                w.raw(&id.0);
                code.encode(w);
            }
        }
    }

    fn read_payload(kind: MessageType, r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(match kind {
            MessageType::Demand => Message::Demand(DemandBroadcast {
                spec: read_spec(r)?,
                price: r.u64()?,
                buyer_endpoint: read_endpoint(r)?,
            }),
            MessageType::Reply => Message::Reply(SellerReply {
                seller: Address(r.array()?),
                seller_endpoint: read_endpoint(r)?,
            }),
            MessageType::Select => Message::Select {
                buyer: Address(r.array()?),
                buyer_endpoint: read_endpoint(r)?,
                price: r.u64()?,
                exchanges: read_ids(r)?,
            },
            MessageType::Accept => Message::Accept {
                accepted: match r.u8()? {
                    0 => false,
                    1 => true,
                    tag => return Err(WireError::UnknownTag { what: "accept flag", tag }),
                },
                exchanges: read_ids(r)?,
            },
            MessageType::TradeInit => {
                let n = r.u8()?;
                let trades = (0..n)
                    .map(|_| Ok((r.str16()?, TradeId(r.array()?))))
                    .collect::<Result<_, WireError>>()?;
                Message::TradeInit {
                    trades,
                    key: DataKey(r.array()?),
                }
            }
            MessageType::Abort => Message::Abort {
                step: r.u8()?,
                reason: r.str16()?,
            },
            MessageType::Tx => Message::Tx(SignedTransaction::read(r)?),
            MessageType::Block => Message::Block(Block::read(r)?),
            MessageType::AttestRequest => Message::AttestRequest {
                challenge: r.array()?,
            },
            MessageType::AttestResponse => Message::AttestResponse(AttestationReport::read(r)?),
            MessageType::OpenTrade => Message::OpenTrade(OpenTradeRequest {
                service_evidence: PaymentEvidence::read(r)?,
                price: r.u64()?,
                buyer: Address(r.array()?),
                seller: Address(r.array()?),
                buyer_endpoint: read_endpoint(r)?,
            }),
            MessageType::TradeOpened => Message::TradeOpened {
                id: TradeId(r.array()?),
            },
            MessageType::OpenRejected => Message::OpenRejected(RejectCode::read(r)?),
            MessageType::ParamsRequest => Message::ParamsRequest {
                id: TradeId(r.array()?),
            },
            MessageType::ParamsResponse => {
                let id = TradeId(r.array()?);
                let params = match r.u8()? {
                    0 => None,
                    1 => Some(TradeParams {
                        id: TradeId(r.array()?),
                        price: r.u64()?,
                        buyer: Address(r.array()?),
                        seller: Address(r.array()?),
                    }),
                    tag => return Err(WireError::UnknownTag { what: "params flag", tag }),
                };
                Message::ParamsResponse { id, params }
            }
            MessageType::DepositData => Message::DepositData {
                id: TradeId(r.array()?),
                chunks: read_chunks(r)?,
            },
            MessageType::DepositAck => {
                let id = TradeId(r.array()?);
                let result = match r.u8()? {
                    0 => None,
                    1 => Some(RejectCode::read(r)?),
                    tag => return Err(WireError::UnknownTag { what: "ack flag", tag }),
                };
                Message::DepositAck { id, result }
            }
            MessageType::Sample => Message::Sample {
                id: TradeId(r.array()?),
                chunk: read_chunk(r)?,
            },
            MessageType::PaymentEvidence => Message::PaymentEvidence {
                id: TradeId(r.array()?),
                evidence: PaymentEvidence::read(r)?,
            },
            MessageType::DataRelease => Message::DataRelease {
                id: TradeId(r.array()?),
                chunks: read_chunks(r)?,
            },
            MessageType::PaymentRejected => Message::PaymentRejected {
                id: TradeId(r.array()?),
                code: RejectCode::read(r)?,
            },
        })
    }

    /// Full frame including the length prefix.
    pub fn to_frame(&self) -> Vec<u8> {
        let mut body = Writer::new();
        body.u8(self.kind() as u8);
        self.write_payload(&mut body);
        let body = body.finish();
        let mut w = Writer::with_capacity(body.len() + 4);
        w.u32(body.len() as u32).raw(&body);
        w.finish()
    }

    /// Parses exactly one frame.
    pub fn from_frame(frame: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(frame);
        let len = r.u32()? as usize;
        if len == 0 || len > MAX_FRAME {
            return Err(WireError::invalid("frame", "length out of range"));
        }
        let body = r.take(len)?;
        r.finish()?;
        let mut r = Reader::new(body);
        let tag = r.u8()?;
        let kind = MessageType::from_byte(tag).ok_or(WireError::UnknownTag {
            what: "message type",
            tag,
        })?;
        let msg = Self::read_payload(kind, &mut r)?;
        r.finish()?;
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{mine_block, NetworkConfig, Target};
    use crate::crypto::{encrypt_chunked, hash, KeyPair, Signature};
    use crate::merkle::{PathStep, Side};
    use crate::chain::PaymentTransaction;

    fn ep(s: &str) -> Endpoint {
        Endpoint::new(s).unwrap()
    }

    fn evidence() -> PaymentEvidence {
        let k = KeyPair::from_seed([1; 32]);
        PaymentEvidence {
            tx: PaymentTransaction::new_signed(&k, KeyPair::from_seed([2; 32]).address(), 5, 1),
            path: vec![PathStep {
                sibling: hash(b"s"),
                side: Side::Left,
            }],
            leaf_index: 1,
            block_height: 3,
            block_hash: hash(b"b"),
        }
    }

    fn samples() -> Vec<Message> {
        let k = KeyPair::from_seed([1; 32]);
        let id = TradeId([3; 16]);
        let chunks = encrypt_chunked(&DataKey([2; 32]), &vec![9u8; CHUNK_SIZE + 3], &id).unwrap();
        let genesis = NetworkConfig::new(Target::MAX, vec![]).genesis_header();
        let block = mine_block(
            &genesis,
            vec![SignedTransaction::payment(&k, k.address(), 1, 0)],
            Target::MAX,
            1,
        )
        .unwrap();
        vec![
            Message::Demand(DemandBroadcast {
                spec: DataSpec {
                    tags: vec!["weather".into(), "csv".into()],
                    min_size: 1,
                    max_size: 10,
                },
                price: 100,
                buyer_endpoint: ep("buyer-0"),
            }),
            Message::Reply(SellerReply {
                seller: k.address(),
                seller_endpoint: ep("seller-0"),
            }),
            Message::Select {
                buyer: k.address(),
                buyer_endpoint: ep("buyer-0"),
                price: 7,
                exchanges: vec!["ex-0".into(), "ex-1".into()],
            },
            Message::Accept {
                accepted: true,
                exchanges: vec!["ex-0".into()],
            },
            Message::TradeInit {
                trades: vec![("ex-0".into(), id)],
                key: DataKey([4; 32]),
            },
            Message::Abort {
                step: 10,
                reason: "sample mismatch".into(),
            },
            Message::Tx(SignedTransaction::review(&k, k.address(), 3, b"ok")),
            Message::Block(block),
            Message::AttestRequest { challenge: [5; 32] },
            Message::AttestResponse(AttestationReport {
                measurement: crate::attestation::Measurement(hash(b"m")),
                enclave_pubkey: k.public_key(),
                nonce: [6; 32],
                root_signature: Signature::ZERO,
            }),
            Message::OpenTrade(OpenTradeRequest {
                service_evidence: evidence(),
                price: 100,
                buyer: k.address(),
                seller: k.address(),
                buyer_endpoint: ep("buyer-0"),
            }),
            Message::TradeOpened { id },
            Message::OpenRejected(RejectCode::Spv(EvidenceStatus::BadPath)),
            Message::ParamsRequest { id },
            Message::ParamsResponse { id, params: None },
            Message::ParamsResponse {
                id,
                params: Some(TradeParams {
                    id,
                    price: 1,
                    buyer: k.address(),
                    seller: k.address(),
                }),
            },
            Message::DepositData {
                id,
                chunks: chunks.clone(),
            },
            Message::DepositAck { id, result: None },
            Message::DepositAck {
                id,
                result: Some(RejectCode::WrongState),
            },
            Message::Sample {
                id,
                chunk: chunks[0].clone(),
            },
            Message::PaymentEvidence {
                id,
                evidence: evidence(),
            },
            Message::DataRelease { id, chunks },
            Message::PaymentRejected {
                id,
                code: RejectCode::MismatchedTerms,
            },
        ]
    }

    #[test]
    fn every_message_round_trips() {
        for m in samples() {
            let frame = m.to_frame();
            let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
            assert_eq!(len, frame.len() - 4);
            assert_eq!(frame[4], m.kind() as u8);
            assert_eq!(Message::from_frame(&frame).unwrap(), m, "{:?}", m.kind());
        }
    }

    #[test]
    fn truncated_or_padded_frames_rejected() {
        for m in samples() {
            let frame = m.to_frame();
            assert!(Message::from_frame(&frame[..frame.len() - 1]).is_err());
            let mut long = frame.clone();
            long.push(0);
            assert!(Message::from_frame(&long).is_err());
        }
    }

    #[test]
    fn unknown_type_rejected() {
        let frame = [0, 0, 0, 1, 0xee];
        assert!(matches!(
            Message::from_frame(&frame),
            Err(WireError::UnknownTag { tag: 0xee, .. })
        ));
    }

    #[test]
    fn type_names_round_trip() {
        for t in MessageType::ALL {
            assert_eq!(MessageType::from_name(t.name()), Some(t));
            assert_eq!(MessageType::from_byte(t as u8), Some(t));
        }
    }
}
