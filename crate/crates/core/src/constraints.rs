//! Conditional statements as constraints on a blackbox `f(x)`.
//!
//! Every two-way comparison is rewritten so that taking the branch means
//! `f < 0`, `f <= 0` or `f == 0`; minimizing `f` then drives the input toward
//! the branch.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::coverage::{BranchKey, CallContext};
use crate::shape_infer::ValueShape;
use crate::taint_store::{BitVector, TaintLabel};

/// Penalty added to a byte-sequence `f` for every byte one side has and the
/// other lacks.
pub const LENGTH_PENALTY: i128 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne];

    pub fn eval<T: Ord>(self, a: T, b: T) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }

    /// The operator that holds exactly when `self` does not.
    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintKind {
    LessThanZero,
    LessEqualZero,
    EqualZero,
}

/// Value of `f` for one input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FOutput(pub i128);

pub fn satisfied(kind: ConstraintKind, f: FOutput) -> bool {
    match kind {
        ConstraintKind::LessThanZero => f.0 < 0,
        ConstraintKind::LessEqualZero => f.0 <= 0,
        ConstraintKind::EqualZero => f.0 == 0,
    }
}

/// Integer comparison to constraint. Computed in 128 bits so `a - b` never
/// overflows.
pub fn transform(op: CmpOp, a: i64, b: i64) -> (FOutput, ConstraintKind) {
    let (a, b) = (i128::from(a), i128::from(b));
    let (f, kind) = match op {
        CmpOp::Lt => (a - b, ConstraintKind::LessThanZero),
        CmpOp::Le => (a - b, ConstraintKind::LessEqualZero),
        CmpOp::Gt => (b - a, ConstraintKind::LessThanZero),
        CmpOp::Ge => (b - a, ConstraintKind::LessEqualZero),
        CmpOp::Eq => ((a - b).abs(), ConstraintKind::EqualZero),
        CmpOp::Ne => (-(a - b).abs(), ConstraintKind::LessThanZero),
    };
    (FOutput(f), kind)
}

/// Distance between two byte strings: per-position absolute differences plus
/// [`LENGTH_PENALTY`] per unmatched byte. Zero iff equal.
pub fn byte_distance(x: &[u8], y: &[u8]) -> i128 {
    let aligned: i128 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| i128::from(a.abs_diff(b)))
        .sum();
    aligned + LENGTH_PENALTY * x.len().abs_diff(y.len()) as i128
}

/// Byte-sequence comparison (`strcmp`/`memcmp` style) to constraint. Only
/// equality and inequality are meaningful; ordering operators are treated as
/// inequality.
pub fn transform_bytes(op: CmpOp, x: &[u8], y: &[u8]) -> (FOutput, ConstraintKind) {
    let d = byte_distance(x, y);
    match op {
        CmpOp::Eq => (FOutput(d), ConstraintKind::EqualZero),
        _ => (FOutput(-d), ConstraintKind::LessThanZero),
    }
}

/// Compound predicate over simple comparisons `A`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pred<A> {
    Atom(A),
    Not(Box<Pred<A>>),
    And(Box<Pred<A>>, Box<Pred<A>>),
    Or(Box<Pred<A>>, Box<Pred<A>>),
}

impl<A> Pred<A> {
    pub fn atom(a: A) -> Self {
        Pred::Atom(a)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(p: Pred<A>) -> Self {
        Pred::Not(Box::new(p))
    }

    pub fn and(a: Pred<A>, b: Pred<A>) -> Self {
        Pred::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Pred<A>, b: Pred<A>) -> Self {
        Pred::Or(Box::new(a), Box::new(b))
    }

    /// Direct boolean evaluation with short-circuiting.
    pub fn eval(&self, atom: &mut impl FnMut(&A) -> bool) -> bool {
        match self {
            Pred::Atom(a) => atom(a),
            Pred::Not(p) => !p.eval(atom),
            Pred::And(a, b) => a.eval(atom) && b.eval(atom),
            Pred::Or(a, b) => a.eval(atom) || b.eval(atom),
        }
    }
}

/// Nested two-way tests: the lowered form of a [`Pred`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decision<A> {
    Leaf(bool),
    Test {
        atom: A,
        then: Box<Decision<A>>,
        otherwise: Box<Decision<A>>,
    },
}

impl<A> Decision<A> {
    pub fn eval(&self, atom: &mut impl FnMut(&A) -> bool) -> bool {
        let mut node = self;
        loop {
            match node {
                Decision::Leaf(b) => return *b,
                Decision::Test {
                    atom: a,
                    then,
                    otherwise,
                } => node = if atom(a) { then } else { otherwise },
            }
        }
    }

    /// Every test in the tree, pre-order. Shared continuations appear once
    /// per copy.
    pub fn atoms(&self) -> Vec<&A> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(d) = stack.pop() {
            if let Decision::Test {
                atom,
                then,
                otherwise,
            } = d
            {
                out.push(atom);
                stack.push(otherwise);
                stack.push(then);
            }
        }
        out
    }
}

/// Splits `&&`, `||` and `!` into nested simple tests, so that
/// `if (a && b) s else t` becomes `if (a) { if (b) s else t } else t`.
pub fn split_logical<A: Clone>(pred: &Pred<A>) -> Decision<A> {
    fn lower<A: Clone>(p: &Pred<A>, yes: Decision<A>, no: Decision<A>) -> Decision<A> {
        match p {
            Pred::Atom(a) => Decision::Test {
                atom: a.clone(),
                then: Box::new(yes),
                otherwise: Box::new(no),
            },
            Pred::Not(inner) => lower(inner, no, yes),
            Pred::And(a, b) => {
                let rhs = lower(b, yes, no.clone());
                lower(a, rhs, no)
            }
            Pred::Or(a, b) => {
                let rhs = lower(b, yes.clone(), no);
                lower(a, yes, rhs)
            }
        }
    }
    lower(pred, Decision::Leaf(true), Decision::Leaf(false))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    IntegerCompare,
    ByteSequenceCompare,
}

/// Operand values last observed at a conditional.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "class")]
pub enum Operands {
    Int { lhs: i64, rhs: i64 },
    Bytes { lhs: Vec<u8>, rhs: Vec<u8> },
}

impl Operands {
    pub fn class(&self) -> OpClass {
        match self {
            Operands::Int { .. } => OpClass::IntegerCompare,
            Operands::Bytes { .. } => OpClass::ByteSequenceCompare,
        }
    }

    pub fn transform(&self, op: CmpOp) -> (FOutput, ConstraintKind) {
        match self {
            Operands::Int { lhs, rhs } => transform(op, *lhs, *rhs),
            Operands::Bytes { lhs, rhs } => transform_bytes(op, lhs, rhs),
        }
    }
}

/// One observed conditional statement from a taint-tracking run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondStmtRecord {
    pub site: u32,
    pub context: CallContext,
    /// The edge this run took.
    pub branch: BranchKey,
    /// The edge it did not take.
    pub sibling: BranchKey,
    pub op: CmpOp,
    pub taken: bool,
    pub kind: ConstraintKind,
    pub f: FOutput,
    pub operands: Operands,
    pub lhs_label: TaintLabel,
    pub rhs_label: TaintLabel,
    pub offsets: BitVector,
    pub shapes: Vec<ValueShape>,
    pub is_explored_true: bool,
    pub is_explored_false: bool,
    pub length_hint: Option<usize>,
}

impl CondStmtRecord {
    pub fn op_class(&self) -> OpClass {
        self.operands.class()
    }

    /// The comparison that must hold to take the sibling edge.
    pub fn sibling_op(&self) -> CmpOp {
        if self.taken {
            self.op.negate()
        } else {
            self.op
        }
    }

    /// Constraint kind for reaching the sibling edge.
    pub fn sibling_kind(&self) -> ConstraintKind {
        self.operands.transform(self.sibling_op()).1
    }

    pub fn mark_explored(&mut self, direction: bool) {
        if direction {
            self.is_explored_true = true;
        } else {
            self.is_explored_false = true;
        }
    }

    pub fn is_fully_explored(&self) -> bool {
        self.is_explored_true && self.is_explored_false
    }
}
