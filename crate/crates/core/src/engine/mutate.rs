//! Random fallback mutations for conditionals with no tainted operand.
//! Every mutation keeps the input length.

use rand::seq::SliceRandom;
use rand::Rng;

const INTERESTING_8: [u8; 9] = [0x00, 0x01, 0x10, 0x20, 0x40, 0x64, 0x7F, 0x80, 0xFF];
const INTERESTING_16: [u16; 8] = [0x0000, 0x0080, 0x00FF, 0x0100, 0x0200, 0x03E8, 0x7FFF, 0x8000];
const ARITH_MAX: u8 = 35;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    FlipBit,
    SetInteresting8,
    SetInteresting16,
    AddSub,
    RandomByte,
    SwapBytes,
    CopyBlock,
}

const OPS: [Op; 7] = [
    Op::FlipBit,
    Op::SetInteresting8,
    Op::SetInteresting16,
    Op::AddSub,
    Op::RandomByte,
    Op::SwapBytes,
    Op::CopyBlock,
];

fn apply<R: Rng + ?Sized>(op: Op, buf: &mut [u8], rng: &mut R) {
    let n = buf.len();
    let at = rng.gen_range(0..n);
    match op {
        Op::FlipBit => buf[at] ^= 1 << rng.gen_range(0..8),
        Op::SetInteresting8 => buf[at] = *INTERESTING_8.choose(rng).expect("nonempty"),
        Op::SetInteresting16 if n >= 2 => {
            let at = rng.gen_range(0..n - 1);
            let v = *INTERESTING_16.choose(rng).expect("nonempty");
            let b = if rng.gen() { v.to_le_bytes() } else { v.to_be_bytes() };
            buf[at..at + 2].copy_from_slice(&b);
        }
        Op::SetInteresting16 => buf[at] = rng.gen(),
        Op::AddSub => {
            let d = rng.gen_range(1..=ARITH_MAX);
            buf[at] = if rng.gen() { buf[at].wrapping_add(d) } else { buf[at].wrapping_sub(d) };
        }
        Op::RandomByte => buf[at] ^= rng.gen_range(1..=255u8),
        Op::SwapBytes => {
            let other = rng.gen_range(0..n);
            buf.swap(at, other);
        }
        Op::CopyBlock => {
            let len = rng.gen_range(1..=n.min(8));
            let src = rng.gen_range(0..=n - len);
            let dst = rng.gen_range(0..=n - len);
            buf.copy_within(src..src + len, dst);
        }
    }
}

/// A stack of 1 to 16 random mutations applied to a copy of `input`.
pub fn havoc<R: Rng + ?Sized>(input: &[u8], rng: &mut R) -> Vec<u8> {
    let mut out = input.to_vec();
    if out.is_empty() {
        return out;
    }
    let stack = 1 << rng.gen_range(0..5);
    for _ in 0..stack {
        let op = *OPS.choose(rng).expect("nonempty");
        apply(op, &mut out, rng);
    }
    out
}
