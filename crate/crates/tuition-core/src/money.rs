//! Exact integer money.
//!
//! Amounts are whole Indonesian Rupiah (IDR has no minor unit in practice
//! here). All arithmetic is overflow-checked; exact-payment matching cannot
//! tolerate silent wraparound or rounding drift.

use core::fmt;
use core::iter::Sum;

/// An amount of whole IDR. Never negative once validated; the signed carrier
/// exists so reconciliation deltas and parse paths can represent debits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(i64);

/// Arithmetic overflowed the 64-bit IDR carrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoneyOverflow;

impl fmt::Display for MoneyOverflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "amount arithmetic overflowed")
    }
}

impl core::error::Error for MoneyOverflow {}

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn new(idr: i64) -> Money {
        Money(idr)
    }

    pub const fn idr(self) -> i64 {
        self.0
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub const fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn checked_add(self, other: Money) -> Result<Money, MoneyOverflow> {
        self.0.checked_add(other.0).map(Money).ok_or(MoneyOverflow)
    }

    pub fn checked_sub(self, other: Money) -> Result<Money, MoneyOverflow> {
        self.0.checked_sub(other.0).map(Money).ok_or(MoneyOverflow)
    }

    pub fn checked_mul(self, factor: u32) -> Result<Money, MoneyOverflow> {
        self.0
            .checked_mul(i64::from(factor))
            .map(Money)
            .ok_or(MoneyOverflow)
    }

    /// `self - other`, clamped at zero. Used by Bill-2: a bill can never go
    /// negative no matter how large the deductions are.
    pub fn saturating_deduct(self, other: Money) -> Money {
        Money(self.0.saturating_sub(other.0).max(0))
    }

    /// Fraction of the amount in basis points, rounded half-up to whole IDR.
    pub fn percent_of_bp(self, basis_points: u32) -> Result<Money, MoneyOverflow> {
        let wide = i128::from(self.0) * i128::from(basis_points);
        let rounded = (wide + 5_000) / 10_000;
        i64::try_from(rounded).map(Money).map_err(|_| MoneyOverflow)
    }

    /// Checked sum over an iterator; the per-element checked_add makes a long
    /// bill list fail loudly instead of wrapping.
    pub fn checked_sum<I: IntoIterator<Item = Money>>(items: I) -> Result<Money, MoneyOverflow> {
        let mut total = Money::ZERO;
        for item in items {
            total = total.checked_add(item)?;
        }
        Ok(total)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Sum for Money {
    /// Panicking sum for contexts already bounds-checked; prefer
    /// [`Money::checked_sum`] on untrusted inputs.
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, |acc, m| {
            acc.checked_add(m).expect("money sum overflow")
        })
    }
}
