//! Declarative stage tables for FeatherNet A and B.

use alloc::format;
use alloc::vec::Vec;

use crate::blocks::{BlockKind, SE_REDUCE};
use crate::error::{Error, Result};
use crate::ops::output_extent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Down-sampling with BlockC.
    A,
    /// Down-sampling with BlockB (average-pooling shortcut).
    B,
}

impl Variant {
    pub fn code(self) -> u8 {
        match self {
            Variant::A => 0,
            Variant::B => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Variant::A),
            1 => Some(Variant::B),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::A => "A",
            Variant::B => "B",
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Variant::A),
            "B" | "b" => Ok(Variant::B),
            _ => Err(Error::invalid(format!("unknown variant '{s}' (expected A or B)"))),
        }
    }
}

/// What follows the streaming module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// Linear map from the feature vector to two logits.
    Linear2,
    /// No head; the model outputs the raw feature vector.
    None,
    /// Global average pool over the streaming output, then linear to two
    /// logits.
    GapLinear2,
}

impl HeadKind {
    pub fn code(self) -> u8 {
        match self {
            HeadKind::Linear2 => 0,
            HeadKind::None => 1,
            HeadKind::GapLinear2 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(HeadKind::Linear2),
            1 => Some(HeadKind::None),
            2 => Some(HeadKind::GapLinear2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Linear2 => "linear2",
            HeadKind::None => "none",
            HeadKind::GapLinear2 => "gap",
        }
    }
}

impl core::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear2" => Ok(HeadKind::Linear2),
            "none" => Ok(HeadKind::None),
            "gap" | "gap+linear2" => Ok(HeadKind::GapLinear2),
            _ => Err(Error::invalid(format!("unknown head '{s}' (expected linear2, none or gap)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    /// Regular 3×3 stride-2 convolution.
    Stem,
    Block(BlockKind),
    Streaming,
}

/// One row of the stage table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageRow {
    /// Spatial extent (square) of the row input.
    pub input_size: usize,
    pub input_channels: usize,
    pub operator: Operator,
    pub expansion: Option<usize>,
    /// Output channels, or the feature-vector length for the streaming row.
    pub channels: usize,
    pub repeat: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub variant: Variant,
    pub head: HeadKind,
    pub input_size: usize,
    pub input_channels: usize,
    pub se_reduce: usize,
    pub rows: Vec<StageRow>,
}

pub const INPUT_SIZE: usize = 224;
pub const EMBEDDING_LEN: usize = 1024;

impl ArchSpec {
    /// The FeatherNet stage table. Variant A uses BlockC wherever B uses
    /// BlockB.
    pub fn feathernet(variant: Variant, head: HeadKind) -> Self {
        let down = match variant {
            Variant::A => BlockKind::C,
            Variant::B => BlockKind::B,
        };
        let row = |input_size, input_channels, operator, expansion, channels, repeat| StageRow {
            input_size,
            input_channels,
            operator,
            expansion,
            channels,
            repeat,
        };
        let rows = alloc::vec![
            row(224, 3, Operator::Stem, None, 32, 1),
            row(112, 32, Operator::Block(down), Some(1), 16, 1),
            row(56, 16, Operator::Block(down), Some(6), 32, 1),
            row(28, 32, Operator::Block(BlockKind::A), Some(6), 32, 1),
            row(28, 32, Operator::Block(down), Some(6), 48, 1),
            row(14, 48, Operator::Block(BlockKind::A), Some(6), 48, 5),
            row(14, 48, Operator::Block(down), Some(6), 64, 1),
            row(7, 64, Operator::Block(BlockKind::A), Some(6), 64, 2),
            row(7, 64, Operator::Streaming, None, EMBEDDING_LEN, 1),
        ];
        ArchSpec {
            variant,
            head,
            input_size: INPUT_SIZE,
            input_channels: 3,
            se_reduce: SE_REDUCE,
            rows,
        }
    }

    /// Checks that each row's declared input matches the previous row's
    /// output under the convolution shape rule.
    pub fn validate(&self) -> Result<()> {
        let mut size = self.input_size;
        let mut channels = self.input_channels;
        for (i, r) in self.rows.iter().enumerate() {
            if r.input_size != size || r.input_channels != channels {
                return Err(Error::invalid(format!(
                    "stage {i}: declared input {}x{}x{} but previous stage yields {size}x{size}x{channels}",
                    r.input_size, r.input_size, r.input_channels
                )));
            }
            if r.repeat == 0 {
                return Err(Error::invalid(format!("stage {i}: repeat must be positive")));
            }
            match r.operator {
                Operator::Stem => {
                    size = output_extent(size, 3, 2, 1)?;
                    channels = r.channels;
                }
                Operator::Block(kind) => {
                    if kind != BlockKind::A {
                        if r.repeat != 1 {
                            return Err(Error::invalid(format!("stage {i}: down-sampling rows cannot repeat")));
                        }
                        size = output_extent(size, 3, 2, 1)?;
                        if kind == BlockKind::B && output_extent(r.input_size, 2, 2, 0)? != size {
                            return Err(Error::invalid(format!("stage {i}: pooling branch shape disagrees with main branch")));
                        }
                    }
                    if r.channels % self.se_reduce != 0 && kind != BlockKind::A {
                        return Err(Error::invalid(format!("stage {i}: {} channels not divisible by SE reduce {}", r.channels, self.se_reduce)));
                    }
                    channels = r.channels;
                }
                Operator::Streaming => {
                    if i + 1 != self.rows.len() {
                        return Err(Error::invalid("streaming must be the last stage"));
                    }
                    let s = output_extent(size, 3, 2, 1)?;
                    if s * s * channels != r.channels {
                        return Err(Error::invalid(format!(
                            "streaming: {s}x{s}x{channels} does not flatten to {}",
                            r.channels
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tables_chain() {
        for v in [Variant::A, Variant::B] {
            let spec = ArchSpec::feathernet(v, HeadKind::Linear2);
            spec.validate().unwrap();
            let downs = spec.rows.iter().filter(|r| matches!(r.operator, Operator::Block(BlockKind::B | BlockKind::C))).count();
            assert_eq!(downs, 4);
        }
        let a = ArchSpec::feathernet(Variant::A, HeadKind::Linear2);
        assert!(!a.rows.iter().any(|r| r.operator == Operator::Block(BlockKind::B)));
    }

    #[test]
    fn broken_chain_detected() {
        let mut spec = ArchSpec::feathernet(Variant::B, HeadKind::Linear2);
        spec.rows[3].input_size = 14;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn codes_round_trip() {
        for v in [Variant::A, Variant::B] {
            assert_eq!(Variant::from_code(v.code()), Some(v));
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        for h in [HeadKind::Linear2, HeadKind::None, HeadKind::GapLinear2] {
            assert_eq!(HeadKind::from_code(h.code()), Some(h));
            assert_eq!(h.name().parse::<HeadKind>().unwrap(), h);
        }
    }
}
