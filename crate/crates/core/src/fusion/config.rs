use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    /// `LN(x + sublayer(x))`
    PostLn,
    /// `x + sublayer(LN(x))`
    PreLn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    /// Each modality is one token of width `d_h`.
    Single,
    /// The hidden vector is split into this many tokens of width `d_h / S`.
    Chunked(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub d_v: usize,
    pub d_t: usize,
    pub d_h: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Width of the prediction head's hidden layer.
    pub head_hidden: usize,
    pub dropout: f64,
    pub out_dim: usize,
    pub norm_placement: NormPlacement,
    pub token_mode: TokenMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d_v: 768,
            d_t: 768,
            d_h: 512,
            layers: 4,
            heads: 8,
            ffn_dim: 2048,
            head_hidden: 1024,
            dropout: 0.1,
            out_dim: 1,
            norm_placement: NormPlacement::PostLn,
            token_mode: TokenMode::Single,
        }
    }
}

impl FusionConfig {
    /// Small network used for desk-scale experiments: `d_h = 32`, two layers.
    pub fn tiny(d_v: usize, d_t: usize, out_dim: usize) -> Self {
        Self {
            d_v,
            d_t,
            d_h: 32,
            layers: 2,
            heads: 4,
            ffn_dim: 128,
            head_hidden: 128,
            out_dim,
            ..Self::default()
        }
    }

    pub fn tokens(&self) -> usize {
        match self.token_mode {
            TokenMode::Single => 1,
            TokenMode::Chunked(s) => s,
        }
    }

    /// Width of one attention token.
    pub fn token_width(&self) -> usize {
        self.d_h / self.tokens().max(1)
    }

    pub fn head_dim(&self) -> usize {
        self.token_width() / self.heads.max(1)
    }

    pub fn validate(&self, flags: &AblationFlags) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_v == 0 || self.d_t == 0 {
            return bad("embedding dims must be positive".into());
        }
        if self.d_h < 2 {
            return bad(format!("d_h = {} must be at least 2", self.d_h));
        }
        let s = self.tokens();
        if s == 0 || self.d_h % s != 0 {
            return bad(format!("d_h = {} not divisible into {s} tokens", self.d_h));
        }
        let layers = flags.effective_layers(self);
        if layers > 0 {
            let w = self.token_width();
            if w < 2 {
                return bad(format!("token width {w} must be at least 2"));
            }
            if self.heads == 0 || w % self.heads != 0 {
                return bad(format!("token width {w} not divisible by {} heads", self.heads));
            }
            if self.ffn_dim == 0 {
                return bad("ffn_dim must be positive".into());
            }
        }
        if self.head_hidden == 0 || self.out_dim == 0 {
            return bad("head_hidden and out_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidProbability(self.dropout));
        }
        flags.validate()
    }
}

/// Component switches matching the ablation study rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    /// `false` removes every cross-attention layer (equivalent to `L = 0`).
    pub use_cross_attention: bool,
    /// `false` keeps only the text-queries-vision direction; the vision
    /// stream runs its norm/FFN branch without attention.
    pub bidirectional: bool,
    /// `false` removes attention from both streams while keeping their FFN
    /// branches, so the modalities never exchange information before fusion.
    pub cross_modal_exchange: bool,
    pub fusion_use_product: bool,
    pub fusion_use_difference: bool,
    /// Fusion vector is `[h_v; h_t]` only.
    pub fusion_direct_concat_only: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_cross_attention: true,
            bidirectional: true,
            cross_modal_exchange: true,
            fusion_use_product: true,
            fusion_use_difference: true,
            fusion_direct_concat_only: false,
        }
    }
}

/// Segments of the fusion vector, in concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionSegment {
    Vision,
    Text,
    Product,
    AbsDifference,
}

impl AblationFlags {
    pub fn validate(&self) -> Result<()> {
        if self.fusion_direct_concat_only && (self.fusion_use_product || self.fusion_use_difference)
        {
            return Err(Error::InvalidConfig(
                "fusion_direct_concat_only requires product and difference disabled".into(),
            ));
        }
        Ok(())
    }

    /// Flags for the "Direct concat only" fusion.
    pub fn direct_concat() -> Self {
        Self {
            fusion_use_product: false,
            fusion_use_difference: false,
            fusion_direct_concat_only: true,
            ..Self::default()
        }
    }

    pub fn effective_layers(&self, config: &FusionConfig) -> usize {
        if self.use_cross_attention {
            config.layers
        } else {
            0
        }
    }

    pub fn vision_attends(&self) -> bool {
        self.cross_modal_exchange && self.bidirectional
    }

    pub fn text_attends(&self) -> bool {
        self.cross_modal_exchange
    }

    pub fn segments(&self) -> Vec<FusionSegment> {
        let mut s = vec![FusionSegment::Vision, FusionSegment::Text];
        if !self.fusion_direct_concat_only {
            if self.fusion_use_product {
                s.push(FusionSegment::Product);
            }
            if self.fusion_use_difference {
                s.push(FusionSegment::AbsDifference);
            }
        }
        s
    }

    pub fn fusion_width(&self, d_h: usize) -> usize {
        d_h * self.segments().len()
    }
}
