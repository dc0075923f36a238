use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::Usage;

const NANOS_PER_DOLLAR: i64 = 1_000_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MoneyError {
    #[error("invalid dollar amount {0:?}")]
    Invalid(String),
    #[error("dollar amount {0:?} has more than 9 decimal places")]
    TooPrecise(String),
    #[error("price {0:?} per 1K tokens must be a whole number of micro-dollars")]
    PriceTooPrecise(String),
    #[error("negative price {0:?}")]
    Negative(String),
    #[error("no price for model {0:?}")]
    UnknownModel(String),
}

/// Exact dollar amount in nano-dollars.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dollars(i64);

impl Dollars {
    pub const ZERO: Dollars = Dollars(0);

    pub fn from_nanos(nanos: i64) -> Self {
        Dollars(nanos)
    }

    pub fn nanos(self) -> i64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_DOLLAR as f64
    }
}

impl FromStr for Dollars {
    type Err = MoneyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().trim_start_matches('$');
        let (neg, t) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (whole, frac) = t.split_once('.').unwrap_or((t, ""));
        let digits = |x: &str| x.chars().all(|c| c.is_ascii_digit());
        if (whole.is_empty() && frac.is_empty()) || !digits(whole) || !digits(frac) {
            return Err(MoneyError::Invalid(s.to_string()));
        }
        if frac.len() > 9 {
            return Err(MoneyError::TooPrecise(s.to_string()));
        }
        let whole: i64 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|_| MoneyError::Invalid(s.to_string()))?
        };
        let frac_nanos: i64 = format!("{frac:0<9}").parse().expect("nine digits");
        let nanos = whole
            .checked_mul(NANOS_PER_DOLLAR)
            .and_then(|w| w.checked_add(frac_nanos))
            .ok_or_else(|| MoneyError::Invalid(s.to_string()))?;
        Ok(Dollars(if neg { -nanos } else { nanos }))
    }
}

impl fmt::Display for Dollars {
    /// `$0.002`, `$0.57`, `$0.00`: trailing zeros trimmed to two places.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let whole = abs / NANOS_PER_DOLLAR as u64;
        let frac = format!("{:09}", abs % NANOS_PER_DOLLAR as u64);
        let mut frac = frac.trim_end_matches('0').to_string();
        while frac.len() < 2 {
            frac.push('0');
        }
        write!(f, "{sign}${whole}.{frac}")
    }
}

impl Serialize for Dollars {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.to_string().replacen('$', "", 1).as_str())
    }
}

impl<'de> Deserialize<'de> for Dollars {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Add for Dollars {
    type Output = Dollars;
    fn add(self, rhs: Dollars) -> Dollars {
        Dollars(self.0 + rhs.0)
    }
}

impl AddAssign for Dollars {
    fn add_assign(&mut self, rhs: Dollars) {
        self.0 += rhs.0;
    }
}

impl Sum for Dollars {
    fn sum<I: Iterator<Item = Dollars>>(iter: I) -> Dollars {
        iter.fold(Dollars::ZERO, Add::add)
    }
}

/// Input and output prices per 1K tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPrice", into = "RawPrice")]
pub struct ModelPrice {
    input_per_1k: Dollars,
    output_per_1k: Dollars,
}

#[derive(Serialize, Deserialize)]
struct RawPrice {
    input: Dollars,
    output: Dollars,
}

impl TryFrom<RawPrice> for ModelPrice {
    type Error = MoneyError;
    fn try_from(r: RawPrice) -> Result<Self, MoneyError> {
        ModelPrice::new(r.input, r.output)
    }
}

impl From<ModelPrice> for RawPrice {
    fn from(p: ModelPrice) -> Self {
        RawPrice {
            input: p.input_per_1k,
            output: p.output_per_1k,
        }
    }
}

impl ModelPrice {
    /// Prices must be non-negative whole micro-dollars so that every token
    /// count charges a whole number of nano-dollars.
    pub fn new(input_per_1k: Dollars, output_per_1k: Dollars) -> Result<Self, MoneyError> {
        for p in [input_per_1k, output_per_1k] {
            if p.0 < 0 {
                return Err(MoneyError::Negative(p.to_string()));
            }
            if p.0 % 1000 != 0 {
                return Err(MoneyError::PriceTooPrecise(p.to_string()));
            }
        }
        Ok(Self {
            input_per_1k,
            output_per_1k,
        })
    }

    pub fn parse(input: &str, output: &str) -> Result<Self, MoneyError> {
        Self::new(input.parse()?, output.parse()?)
    }

    pub fn input_per_1k(&self) -> Dollars {
        self.input_per_1k
    }

    pub fn output_per_1k(&self) -> Dollars {
        self.output_per_1k
    }
}

/// Model id -> per-1K-token prices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, ModelPrice>);

impl Default for PriceTable {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert("gpt-3.5-turbo".to_string(), ModelPrice::parse("0.001", "0.002").expect("valid"));
        m.insert("gpt-4".to_string(), ModelPrice::parse("0.03", "0.06").expect("valid"));
        PriceTable(m)
    }
}

impl PriceTable {
    pub fn get(&self, model: &str) -> Result<&ModelPrice, MoneyError> {
        self.0.get(model).ok_or_else(|| MoneyError::UnknownModel(model.to_string()))
    }

    /// Merges `other` over this table.
    pub fn extend(&mut self, other: &PriceTable) {
        self.0.extend(other.0.iter().map(|(k, v)| (k.clone(), *v)));
    }
}

/// Exact cost of one request.
pub fn charge(usage: &Usage, model: &str, table: &PriceTable) -> Result<Dollars, MoneyError> {
    let price = table.get(model)?;
    let nanos = |tokens: u64, per_1k: Dollars| tokens as i64 * (per_1k.0 / 1000);
    Ok(Dollars(
        nanos(usage.prompt_tokens, price.input_per_1k) + nanos(usage.completion_tokens, price.output_per_1k),
    ))
}
