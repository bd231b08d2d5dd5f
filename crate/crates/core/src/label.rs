//! Categorical metadata shared by manifests, the index and evaluation.

use core::fmt;
use core::str::FromStr;

use crate::error::{DecodeError, Error};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Benign,
    Malignant,
    NonCancerous,
    Cancerous,
}

impl Label {
    /// Malignant and cancerous are the positive class for precision and F1.
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Malignant | Label::Cancerous)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malignant => "malignant",
            Label::NonCancerous => "non-cancerous",
            Label::Cancerous => "cancerous",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Malignant => 1,
            Label::NonCancerous => 2,
            Label::Cancerous => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self, DecodeError> {
        Ok(match code {
            0 => Label::Benign,
            1 => Label::Malignant,
            2 => Label::NonCancerous,
            3 => Label::Cancerous,
            other => {
                return Err(DecodeError::InvalidField {
                    field: "label",
                    reason: alloc::format!("code {other}"),
                })
            }
        })
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" | "b" | "0" => Ok(Label::Benign),
            "malignant" | "m" | "1" => Ok(Label::Malignant),
            "non-cancerous" | "noncancerous" | "non_cancerous" => Ok(Label::NonCancerous),
            "cancerous" => Ok(Label::Cancerous),
            other => Err(Error::Config(alloc::format!("unknown label {other:?}"))),
        }
    }
}

/// Optical magnification of a patch. Ordering is 40x < 100x < 200x < 400x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Magnification {
    X40,
    X100,
    X200,
    X400,
}

impl Magnification {
    pub const ALL: [Magnification; 4] = [
        Magnification::X40,
        Magnification::X100,
        Magnification::X200,
        Magnification::X400,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Magnification::X40 => "40x",
            Magnification::X100 => "100x",
            Magnification::X200 => "200x",
            Magnification::X400 => "400x",
        }
    }

    pub fn zoom(self) -> u32 {
        match self {
            Magnification::X40 => 40,
            Magnification::X100 => 100,
            Magnification::X200 => 200,
            Magnification::X400 => 400,
        }
    }

    /// Parses `40x`, `40×`, `40` (any case) or `none`.
    pub fn parse_opt(s: &str) -> Result<Option<Self>, Error> {
        let t = s.trim().to_ascii_lowercase();
        let t = t.trim_end_matches('x').trim_end_matches('×');
        Ok(Some(match t {
            "" | "none" | "-" => return Ok(None),
            "40" => Magnification::X40,
            "100" => Magnification::X100,
            "200" => Magnification::X200,
            "400" => Magnification::X400,
            _ => return Err(Error::Config(alloc::format!("unknown magnification {s:?}"))),
        }))
    }

    pub fn label_opt(m: Option<Self>) -> &'static str {
        m.map_or("none", Self::as_str)
    }

    pub(crate) fn code(m: Option<Self>) -> u8 {
        match m {
            None => 0,
            Some(Magnification::X40) => 1,
            Some(Magnification::X100) => 2,
            Some(Magnification::X200) => 3,
            Some(Magnification::X400) => 4,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Option<Self>, DecodeError> {
        Ok(match code {
            0 => None,
            1..=4 => Some(Self::ALL[code as usize - 1]),
            other => {
                return Err(DecodeError::InvalidField {
                    field: "magnification",
                    reason: alloc::format!("code {other}"),
                })
            }
        })
    }
}

impl fmt::Display for Magnification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Result<Self, DecodeError> {
        match code {
            0 => Ok(Split::Train),
            1 => Ok(Split::Validation),
            2 => Ok(Split::Test),
            other => Err(DecodeError::InvalidField {
                field: "split",
                reason: alloc::format!("code {other}"),
            }),
        }
    }

    /// Deterministic 70/15/15 assignment from an id, for manifests that
    /// leave the split column empty.
    pub fn from_id_hash(id: &str) -> Self {
        match crate::codec::fnv1a64(id.as_bytes()) % 100 {
            0..=69 => Split::Train,
            70..=84 => Split::Validation,
            _ => Split::Test,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "validation" | "val" | "valid" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(alloc::format!("unknown split {other:?}"))),
        }
    }
}
