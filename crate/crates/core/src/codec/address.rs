use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// A 6-octet AMS network identifier, written as `a.b.c.d.e.f`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AmsNetId(pub [u8; 6]);

impl AmsNetId {
    pub const fn new(a: u8, b: u8, c: u8, d: u8, e: u8, f: u8) -> Self {
        AmsNetId([a, b, c, d, e, f])
    }

    /// `127.0.0.1.1.1`, the conventional NetId of a local router.
    pub const fn local() -> Self {
        AmsNetId([127, 0, 0, 1, 1, 1])
    }

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseNetIdError {
    #[error("AMS NetId needs 6 dot-separated octets, found {0}")]
    TokenCount(usize),
    #[error("AMS NetId octet {index} ({token:?}) is not a decimal number")]
    NotNumeric { index: usize, token: String },
    #[error("AMS NetId octet {index} ({token:?}) exceeds 255")]
    OutOfRange { index: usize, token: String },
}

/// Parse the dotted textual form of a NetId.
pub fn parse_net_id(text: &str) -> Result<AmsNetId, ParseNetIdError> {
    let tokens: Vec<&str> = text.split('.').collect();
    if tokens.len() != 6 {
        return Err(ParseNetIdError::TokenCount(tokens.len()));
    }
    let mut octets = [0u8; 6];
    for (index, token) in tokens.iter().enumerate() {
        if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseNetIdError::NotNumeric {
                index,
                token: token.to_string(),
            });
        }
        octets[index] = token.parse::<u8>().map_err(|_| ParseNetIdError::OutOfRange {
            index,
            token: token.to_string(),
        })?;
    }
    Ok(AmsNetId(octets))
}

impl FromStr for AmsNetId {
    type Err = ParseNetIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_net_id(s)
    }
}

impl fmt::Display for AmsNetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d, e, g] = self.0;
        write!(f, "{a}.{b}.{c}.{d}.{e}.{g}")
    }
}

/// NetId plus ADS port: the endpoint of an AMS message.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AmsAddress {
    pub net_id: AmsNetId,
    pub port: u16,
}

impl AmsAddress {
    pub const fn new(net_id: AmsNetId, port: u16) -> Self {
        AmsAddress { net_id, port }
    }
}

impl fmt::Display for AmsAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.net_id, self.port)
    }
}

impl FromStr for AmsAddress {
    type Err = ParseNetIdError;

    /// Parses `a.b.c.d.e.f:port`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (net, port) = s.rsplit_once(':').ok_or(ParseNetIdError::TokenCount(0))?;
        let port = port.parse::<u16>().map_err(|_| ParseNetIdError::NotNumeric {
            index: 6,
            token: port.to_string(),
        })?;
        Ok(AmsAddress::new(net.parse()?, port))
    }
}
