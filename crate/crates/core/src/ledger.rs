//! Attention-interaction FLOP accounting.
//!
//! One interaction unit is `D` multiply-accumulates for one query–key pair,
//! so an attention with `Lq` queries over `Lk` keys of width `D` charges
//! `Lq * Lk * D` units. The charge covers score and value aggregation
//! together and includes masked pairs (window-area accounting).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopLedger {
    interaction_units: u64,
    full_flops: u64,
    /// Portion of `interaction_units` charged for window slots that were
    /// not physically computed (partial generation windows).
    padding_units: u64,
}

impl FlopLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// `(interaction_units, full_flops)` since the last reset.
    pub fn read(&self) -> (u64, u64) {
        (self.interaction_units, self.full_flops)
    }

    pub fn interaction_units(&self) -> u64 {
        self.interaction_units
    }

    pub fn full_flops(&self) -> u64 {
        self.full_flops
    }

    pub fn padding_units(&self) -> u64 {
        self.padding_units
    }

    pub fn charge_attention(&mut self, lq: usize, lk: usize, d: usize) {
        self.interaction_units += (lq * lk * d) as u64;
        // score matmul + value aggregation
        self.full_flops += 2 * (lq * lk * d) as u64;
    }

    /// Charge interaction units for window slots that exist in the cost
    /// convention but were not computed.
    pub fn charge_padding(&mut self, units: u64) {
        self.interaction_units += units;
        self.padding_units += units;
    }

    pub fn charge_flops(&mut self, macs: u64) {
        self.full_flops += macs;
    }

    /// Counts accumulated since `earlier` was taken from this ledger.
    pub fn since(&self, earlier: &FlopLedger) -> FlopLedger {
        FlopLedger {
            interaction_units: self.interaction_units - earlier.interaction_units,
            full_flops: self.full_flops - earlier.full_flops,
            padding_units: self.padding_units - earlier.padding_units,
        }
    }
}
