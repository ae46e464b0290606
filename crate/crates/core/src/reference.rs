//! Closed-form references for checking the layer-based accounting.

use crate::arch::{ArchSpec, HeadKind, Operator};
use crate::blocks::BlockKind;

/// `(params, madds)` from closed-form counts over the stage table, touching no
/// layer object. Independent of [`crate::model::Model::cost_report`], which
/// sums the costs the built layers report for themselves.
pub fn cost_oracle(spec: &ArchSpec) -> (u64, u64) {
    let out = |s: usize, stride: usize| (s + 2 - 3) / stride + 1;
    let (mut params, mut madds) = (0u64, 0u64);
    let mut add = |p: usize, m: usize| {
        params += p as u64;
        madds += m as u64;
    };
    let mut size = spec.input_size;
    let mut ch = spec.input_channels;
    for row in &spec.rows {
        match row.operator {
            Operator::Stem => {
                let s = out(size, 2);
                add(27 * row.channels + 2 * row.channels, s * s * row.channels * 27);
                size = s;
                ch = row.channels;
            }
            Operator::Block(kind) => {
                let t = row.expansion.unwrap();
                for r in 0..row.repeat {
                    let cin = if r == 0 { ch } else { row.channels };
                    let cout = row.channels;
                    let hidden = t * cin;
                    let stride = if kind == BlockKind::A { 1 } else { 2 };
                    let s2 = out(size, stride);
                    if t != 1 {
                        add(cin * hidden + 2 * hidden, size * size * hidden * cin);
                    }
                    add(9 * hidden + 2 * hidden, s2 * s2 * hidden * 9);
                    add(hidden * cout + 2 * cout, s2 * s2 * cout * hidden);
                    if kind == BlockKind::B {
                        let p = size / 2;
                        add(cin * cout + 2 * cout, p * p * cout * cin);
                    }
                    size = s2;
                }
                ch = row.channels;
                if kind != BlockKind::A {
                    let b = ch / spec.se_reduce;
                    add(ch * b + b + b * ch + ch, 2 * ch * b);
                }
            }
            Operator::Streaming => {
                let s = out(size, 2);
                add(9 * ch, s * s * ch * 9);
                let fv = s * s * ch;
                match spec.head {
                    HeadKind::Linear2 => add(fv * 2 + 2, fv * 2),
                    HeadKind::GapLinear2 => add(ch * 2 + 2, ch * 2),
                    HeadKind::None => {}
                }
            }
        }
    }
    (params, madds)
}
