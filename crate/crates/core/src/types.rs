//! Small domain newtypes shared across modules.

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::wire::WireError;

/// Price or balance in the ledger's smallest unit.
pub type Amount = u64;

/// Fixed-width byte identifiers that serialize as lowercase hex.
macro_rules! hex_bytes {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, $crate::wire::WireError> {
                let raw = hex::decode(s)
                    .map_err(|e| $crate::wire::WireError::invalid(stringify!($name), e.to_string()))?;
                let arr: [u8; $len] = raw.try_into().map_err(|v: Vec<u8>| {
                    $crate::wire::WireError::invalid(
                        stringify!($name),
                        format!("expected {} bytes, got {}", $len, v.len()),
                    )
                })?;
                Ok(Self(arr))
            }
        }

        impl std::fmt::Debug for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl serde::Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> serde::Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

pub(crate) use hex_bytes;

hex_bytes!(
    /// Identifier the enclave assigns to a trade. 128 random bits.
    TradeId,
    16
);

impl TradeId {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        TradeId(b)
    }
}

/// Network contact point of a party, e.g. `10.0.0.7:7000`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Endpoint(String);

impl Endpoint {
    pub const MAX_LEN: usize = 255;

    pub fn new(s: impl Into<String>) -> Result<Self, WireError> {
        let s = s.into();
        if s.is_empty() || s.len() > Self::MAX_LEN {
            return Err(WireError::invalid("endpoint", "length must be 1..=255"));
        }
        if !s.bytes().all(|b| b.is_ascii_graphic()) {
            return Err(WireError::invalid("endpoint", "must be printable ASCII"));
        }
        Ok(Endpoint(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Endpoint {
    type Error = WireError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Endpoint::new(s)
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> String {
        e.0
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
