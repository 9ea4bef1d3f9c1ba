use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;

/// Structural axis a growth mask gates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    HiddenDim,
    FfnDim,
    NHeads,
    Layer,
}

/// One grown axis and its mask scalar.
///
/// For width axes the gated indices are `old_size..new_size`. For
/// [`AxisKind::Layer`] the gated blocks are listed in `layers`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub axis: AxisKind,
    pub old_size: usize,
    pub new_size: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<usize>,
    pub m: f64,
    pub anneal_tokens: u64,
    pub tokens_elapsed: u64,
}

impl MaskEntry {
    pub fn new(axis: AxisKind, old_size: usize, new_size: usize, anneal_tokens: u64) -> Self {
        MaskEntry { axis, old_size, new_size, layers: Vec::new(), m: 0.0, anneal_tokens: anneal_tokens.max(1), tokens_elapsed: 0 }
    }

    /// Linear schedule `m = min(1, elapsed / anneal)`.
    pub fn advance(&mut self, delta: u64) {
        self.tokens_elapsed = self.tokens_elapsed.saturating_add(delta);
        self.m = (self.tokens_elapsed as f64 / self.anneal_tokens as f64).min(1.0);
    }

    pub fn is_open(&self) -> bool {
        self.m >= 1.0
    }
}

/// All pending growth masks of a checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GrowthMaskState {
    pub entries: Vec<MaskEntry>,
}

/// Per-coordinate mask values derived from a [`GrowthMaskState`] for one
/// config. `None` means "all ones" and lets the forward pass skip the op.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskVectors {
    pub hidden: Option<Vec<f64>>,
    pub ffn: Option<Vec<f64>>,
    /// One value per attention output column (`n_heads * head_dim`).
    pub heads: Option<Vec<f64>>,
    pub layer_gates: Vec<f64>,
    /// Sum of the hidden mask; the width seen by the µP readout multiplier.
    pub effective_width: f64,
}

fn fill_range(v: &mut Option<Vec<f64>>, len: usize, range: std::ops::Range<usize>, m: f64) {
    if m >= 1.0 || range.is_empty() {
        return;
    }
    let vec = v.get_or_insert_with(|| vec![1.0; len]);
    for i in range {
        if i < len {
            vec[i] = m;
        }
    }
}

impl GrowthMaskState {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every mask has reached 1; the model behaves as an ungated network.
    pub fn all_open(&self) -> bool {
        self.entries.iter().all(MaskEntry::is_open)
    }

    pub fn advance(&mut self, delta: u64) {
        for e in &mut self.entries {
            e.advance(delta);
        }
    }

    /// Overrides every mask scalar (used by controls and tests).
    pub fn force(&mut self, m: f64) {
        for e in &mut self.entries {
            e.m = m.clamp(0.0, 1.0);
        }
    }

    /// Drops entries whose masks are fully open.
    pub fn prune_open(&mut self) {
        self.entries.retain(|e| !e.is_open());
    }

    pub fn vectors(&self, config: &ModelConfig) -> MaskVectors {
        let d = config.hidden_dim;
        let attn = config.n_heads * config.head_dim;
        let mut out = MaskVectors {
            hidden: None,
            ffn: None,
            heads: None,
            layer_gates: vec![1.0; config.n_layers],
            effective_width: d as f64,
        };
        for e in &self.entries {
            match e.axis {
                AxisKind::HiddenDim => fill_range(&mut out.hidden, d, e.old_size..e.new_size, e.m),
                AxisKind::FfnDim => fill_range(&mut out.ffn, config.ffn_dim, e.old_size..e.new_size, e.m),
                AxisKind::NHeads => fill_range(
                    &mut out.heads,
                    attn,
                    e.old_size * config.head_dim..e.new_size * config.head_dim,
                    e.m,
                ),
                AxisKind::Layer => {
                    for &l in &e.layers {
                        if l < out.layer_gates.len() {
                            out.layer_gates[l] = e.m;
                        }
                    }
                }
            }
        }
        if let Some(h) = &out.hidden {
            out.effective_width = h.iter().sum();
        }
        out
    }
}

/// Pure form of [`GrowthMaskState::advance`].
pub fn anneal_masks(state: &GrowthMaskState, tokens_consumed_delta: u64) -> GrowthMaskState {
    let mut next = state.clone();
    next.advance(tokens_consumed_delta);
    next
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn state(anneal: u64) -> GrowthMaskState {
        GrowthMaskState { entries: vec![MaskEntry::new(AxisKind::HiddenDim, 64, 128, anneal)] }
    }

    #[test]
    fn starts_closed_and_reaches_half_at_midpoint() {
        let s = state(1000);
        assert_eq!(s.entries[0].m, 0.0);
        let s = anneal_masks(&s, 500);
        assert_eq!(s.entries[0].m, 0.5);
    }

    #[test]
    fn clamps_at_one_and_stays() {
        let s = anneal_masks(&state(1000), 1000);
        assert_eq!(s.entries[0].m, 1.0);
        let s = anneal_masks(&s, 12345);
        assert_eq!(s.entries[0].m, 1.0);
        assert!(s.all_open());
    }

    #[test]
    fn vectors_gate_new_coordinates_only() {
        let c = ModelConfig::toy(128, 2, 16);
        let mut s = state(10);
        s.entries.push(MaskEntry { layers: vec![1], ..MaskEntry::new(AxisKind::Layer, 1, 2, 10) });
        s.force(0.25);
        let v = s.vectors(&c);
        let h = v.hidden.unwrap();
        assert!(h[..64].iter().all(|&x| x == 1.0));
        assert!(h[64..].iter().all(|&x| x == 0.25));
        assert_eq!(v.layer_gates, vec![1.0, 0.25]);
        assert_eq!(v.effective_width, 64.0 + 64.0 * 0.25);
        assert!(v.ffn.is_none());
    }

    proptest! {
        #[test]
        fn mask_is_chunking_invariant_and_monotone(
            anneal in 1u64..10_000,
            deltas in proptest::collection::vec(0u64..3_000, 1..20),
        ) {
            let mut s = state(anneal);
            let mut prev = 0.0;
            for &d in &deltas {
                s = anneal_masks(&s, d);
                prop_assert!(s.entries[0].m >= prev);
                prev = s.entries[0].m;
            }
            let total: u64 = deltas.iter().sum();
            let want = (total as f64 / anneal as f64).min(1.0);
            prop_assert_eq!(s.entries[0].m, want);
        }
    }
}
