//! Arithmetic operation counting.
//!
//! Counting rules:
//! - additions and subtractions count as one addition each;
//! - a multiply-add is one multiplication plus one addition (2 ops);
//! - divisions are counted separately;
//! - `sqrt`, `sin`, `cos`, `acos`, `exp`, `ln` and `pow` are transcendental
//!   evaluations, each weighted by a configurable cost (default 20);
//! - negation, absolute value, comparisons, copies and indexing are free.

use std::cell::Cell;
use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub const DEFAULT_TRANSCENDENTAL_COST: u64 = 20;

/// Raw operation tallies, before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub additions: u64,
    pub multiplications: u64,
    pub divisions: u64,
    pub transcendentals: u64,
}

impl Tally {
    pub const fn new(additions: u64, multiplications: u64, divisions: u64, transcendentals: u64) -> Self {
        Self {
            additions,
            multiplications,
            divisions,
            transcendentals,
        }
    }

    /// `k` multiply-adds.
    pub const fn fma(k: u64) -> Self {
        Self::new(k, k, 0, 0)
    }

    pub fn scaled(self, k: u64) -> Self {
        Self {
            additions: self.additions * k,
            multiplications: self.multiplications * k,
            divisions: self.divisions * k,
            transcendentals: self.transcendentals * k,
        }
    }

    pub fn weighted(self, transcendental_cost: u64) -> OpCount {
        OpCount::from_tally(self, transcendental_cost)
    }
}

impl Add for Tally {
    type Output = Tally;
    fn add(self, o: Tally) -> Tally {
        Tally {
            additions: self.additions + o.additions,
            multiplications: self.multiplications + o.multiplications,
            divisions: self.divisions + o.divisions,
            transcendentals: self.transcendentals + o.transcendentals,
        }
    }
}

impl AddAssign for Tally {
    fn add_assign(&mut self, o: Tally) {
        *self = *self + o;
    }
}

/// Weighted operation count of one algorithm run.
///
/// `total = additions + multiplications + divisions + transcendentals * transcendental_cost`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub additions: u64,
    pub multiplications: u64,
    pub divisions: u64,
    pub transcendentals: u64,
    pub transcendental_cost: u64,
    pub total: u64,
}

impl OpCount {
    pub fn from_tally(t: Tally, transcendental_cost: u64) -> Self {
        Self {
            additions: t.additions,
            multiplications: t.multiplications,
            divisions: t.divisions,
            transcendentals: t.transcendentals,
            transcendental_cost,
            total: t.additions + t.multiplications + t.divisions + t.transcendentals * transcendental_cost,
        }
    }

    pub fn tally(&self) -> Tally {
        Tally::new(self.additions, self.multiplications, self.divisions, self.transcendentals)
    }
}

thread_local! {
    static COUNTER: Cell<Tally> = const { Cell::new(Tally::new(0, 0, 0, 0)) };
}

fn bump(f: impl FnOnce(&mut Tally)) {
    COUNTER.with(|c| {
        let mut t = c.get();
        f(&mut t);
        c.set(t);
    });
}

/// Runs `f` and returns its result together with the operations performed
/// by every [`Counted`] value on this thread while it ran.
pub fn instrument<R>(f: impl FnOnce() -> R) -> (R, Tally) {
    let saved = COUNTER.with(|c| c.replace(Tally::default()));
    let out = f();
    let tally = COUNTER.with(|c| c.replace(saved));
    (out, tally)
}

/// An `f64` that records every arithmetic operation applied to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Counted(pub f64);

impl PartialOrd for Counted {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

macro_rules! counted_binop {
    ($tr:ident, $f:ident, $tr_assign:ident, $f_assign:ident, $op:tt, $field:ident) => {
        impl $tr for Counted {
            type Output = Counted;
            #[inline]
            fn $f(self, o: Counted) -> Counted {
                bump(|t| t.$field += 1);
                Counted(self.0 $op o.0)
            }
        }
        impl $tr_assign for Counted {
            #[inline]
            fn $f_assign(&mut self, o: Counted) {
                *self = *self $op o;
            }
        }
    };
}

counted_binop!(Add, add, AddAssign, add_assign, +, additions);
counted_binop!(Sub, sub, SubAssign, sub_assign, -, additions);
counted_binop!(Mul, mul, MulAssign, mul_assign, *, multiplications);

impl Div for Counted {
    type Output = Counted;
    #[inline]
    fn div(self, o: Counted) -> Counted {
        bump(|t| t.divisions += 1);
        Counted(self.0 / o.0)
    }
}

impl Neg for Counted {
    type Output = Counted;
    #[inline]
    fn neg(self) -> Counted {
        Counted(-self.0)
    }
}

impl Counted {
    #[inline]
    fn transcendental(v: f64) -> Counted {
        bump(|t| t.transcendentals += 1);
        Counted(v)
    }
}

impl Scalar for Counted {
    fn from_f64(v: f64) -> Self {
        Counted(v)
    }
    fn to_f64(self) -> f64 {
        self.0
    }
    fn sqrt(self) -> Self {
        Counted::transcendental(self.0.sqrt())
    }
    fn sin(self) -> Self {
        Counted::transcendental(self.0.sin())
    }
    fn cos(self) -> Self {
        Counted::transcendental(self.0.cos())
    }
    fn powf(self, exponent: Self) -> Self {
        Counted::transcendental(self.0.powf(exponent.0))
    }
    fn abs(self) -> Self {
        Counted(self.0.abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_each_operation_class() {
        let ((), t) = instrument(|| {
            let a = Counted(2.0);
            let b = Counted(3.0);
            let c = a * b + a - b / a;
            let _ = c.sqrt().sin() + (-c).abs();
            let _ = a.max(b);
        });
        assert_eq!(t, Tally::new(3, 1, 1, 2));
        assert_eq!(t.weighted(20).total, 3 + 1 + 1 + 40);
    }

    #[test]
    fn instrument_nests() {
        let (inner, outer) = instrument(|| {
            let _ = Counted(1.0) + Counted(1.0);
            let ((), inner) = instrument(|| {
                let _ = Counted(1.0) * Counted(1.0);
            });
            let _ = Counted(1.0) + Counted(1.0);
            inner
        });
        assert_eq!(inner, Tally::new(0, 1, 0, 0));
        assert_eq!(outer, Tally::new(2, 0, 0, 0));
    }
}
