//! Per-output-channel precision layouts.
//!
//! A plan marks each output row as 4-bit (`true`) or ternary (`false`).
//! The super-group layout repeats one 4-bit row followed by `period - 1`
//! ternary rows, with `period = round_half_even(1 / rho)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Nominal bits per ternary weight, as reported in bit-width tables.
pub const TERNARY_BITS: f64 = 1.58;
pub const INT4_BITS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    SuperGroup,
    Stacked,
    Random { seed: u64 },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::SuperGroup => "super_group",
            Scheme::Stacked => "stacked",
            Scheme::Random { .. } => "random",
        }
    }

    /// Parses `super`/`super_group`, `stacked`, `random`; random needs a seed.
    pub fn parse(name: &str, seed: Option<u64>) -> Result<Self> {
        match name {
            "super" | "super_group" | "supergroup" => Ok(Scheme::SuperGroup),
            "stacked" => Ok(Scheme::Stacked),
            "random" => seed
                .map(|seed| Scheme::Random { seed })
                .ok_or_else(|| Error::param("random scheme requires a seed")),
            other => Err(Error::param(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    rho: f64,
    scheme: Scheme,
    assignment: Vec<bool>,
}

/// Period of the super-group layout for `0 < rho <= 1`.
pub fn super_group_period(rho: f64) -> usize {
    debug_assert!(rho > 0.0);
    (1.0 / rho).round_ties_even().max(1.0) as usize
}

pub fn build_plan(d_out: usize, rho: f64, scheme: Scheme) -> Result<AllocationPlan> {
    if d_out == 0 {
        return Err(Error::param("d_out must be at least 1"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::param(format!("rho = {rho} outside [0, 1]")));
    }
    let assignment = if rho == 0.0 {
        vec![false; d_out]
    } else {
        match scheme {
            Scheme::SuperGroup => {
                let period = super_group_period(rho);
                (0..d_out).map(|i| i % period == 0).collect()
            }
            Scheme::Stacked => {
                let n = count_for(d_out, rho);
                (0..d_out).map(|i| i < n).collect()
            }
            Scheme::Random { seed } => {
                let n = count_for(d_out, rho);
                let mut a = vec![false; d_out];
                for i in SeededRng::new(seed).sample_indices(d_out, n) {
                    a[i] = true;
                }
                a
            }
        }
    };
    Ok(AllocationPlan {
        rho,
        scheme,
        assignment,
    })
}

fn count_for(d_out: usize, rho: f64) -> usize {
    ((rho * d_out as f64).round_ties_even() as usize).min(d_out)
}

impl AllocationPlan {
    /// A plan with every row at 4-bit.
    pub fn all_int4(rows: usize) -> Self {
        Self {
            rho: 1.0,
            scheme: Scheme::SuperGroup,
            assignment: vec![true; rows],
        }
    }

    pub fn all_ternary(rows: usize) -> Self {
        Self {
            rho: 0.0,
            scheme: Scheme::SuperGroup,
            assignment: vec![false; rows],
        }
    }

    /// Wraps an explicit assignment; `rho` is taken as the realized fraction.
    pub fn from_assignment(assignment: Vec<bool>, scheme: Scheme) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::param("assignment must cover at least one row"));
        }
        let rho = assignment.iter().filter(|&&a| a).count() as f64 / assignment.len() as f64;
        Ok(Self {
            rho,
            scheme,
            assignment,
        })
    }

    pub fn rows(&self) -> usize {
        self.assignment.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn assignment(&self) -> &[bool] {
        &self.assignment
    }

    pub fn is_int4(&self, row: usize) -> bool {
        self.assignment[row]
    }

    /// Number of 4-bit rows.
    pub fn high_precision_count(&self) -> usize {
        self.assignment.iter().filter(|&&a| a).count()
    }

    pub fn high_precision_rows(&self) -> Vec<usize> {
        (0..self.rows()).filter(|&i| self.assignment[i]).collect()
    }

    /// Fraction of rows actually at 4-bit (may exceed `rho` for a trailing
    /// partial super-group).
    pub fn realized_rho(&self) -> f64 {
        self.high_precision_count() as f64 / self.rows() as f64
    }

    /// `"1000..."` with one character per row.
    pub fn bit_string(&self) -> String {
        self.assignment
            .iter()
            .map(|&a| if a { '1' } else { '0' })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(PlanJson::from(self)).expect("plan serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let p: PlanJson =
            serde_json::from_value(v.clone()).map_err(|e| Error::format(format!("plan: {e}")))?;
        p.try_into()
    }
}

pub fn effective_bitwidth(plan: &AllocationPlan) -> f64 {
    let n = plan.high_precision_count() as f64;
    let total = plan.rows() as f64;
    (INT4_BITS * n + TERNARY_BITS * (total - n)) / total
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanJson {
    rows: usize,
    rho: f64,
    scheme: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    seed: Option<u64>,
    assignment: String,
}

impl From<&AllocationPlan> for PlanJson {
    fn from(p: &AllocationPlan) -> Self {
        let seed = match p.scheme {
            Scheme::Random { seed } => Some(seed),
            _ => None,
        };
        PlanJson {
            rows: p.rows(),
            rho: p.rho,
            scheme: p.scheme.name().to_string(),
            seed,
            assignment: p.bit_string(),
        }
    }
}

impl TryFrom<PlanJson> for AllocationPlan {
    type Error = Error;

    fn try_from(j: PlanJson) -> Result<Self> {
        let scheme = Scheme::parse(&j.scheme, j.seed)?;
        let assignment: Vec<bool> = j
            .assignment
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                c => Err(Error::format(format!("bad assignment character {c:?}"))),
            })
            .collect::<Result<_>>()?;
        if assignment.len() != j.rows {
            return Err(Error::format("assignment length differs from rows"));
        }
        Ok(AllocationPlan {
            rho: j.rho,
            scheme,
            assignment,
        })
    }
}
