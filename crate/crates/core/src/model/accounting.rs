//! Analytic parameter and FLOP ledger, computed from the configuration alone.
//!
//! Rows appear in parameter declaration order, so the ledger doubles as the
//! checkpoint layout.

use serde::Serialize;

use super::{EncoderConfig, ModelConfig, TransformerConfig};
use crate::nn::{Extent, LayerSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerRow {
    pub name: String,
    pub kind: &'static str,
    pub params: u64,
    pub flops: u64,
}

fn row(name: impl Into<String>, spec: LayerSpec, extent: Extent) -> LedgerRow {
    LedgerRow {
        name: name.into(),
        kind: spec.kind(),
        params: spec.param_count(),
        flops: spec.flops(extent),
    }
}

fn mlp_rows(out: &mut Vec<LedgerRow>, prefix: &str, inputs: usize, hidden: usize, outputs: usize, depth: usize, rows: usize) {
    for i in 0..depth {
        let fin = if i == 0 { inputs } else { hidden };
        let fout = if i + 1 == depth { outputs } else { hidden };
        out.push(row(
            format!("{prefix}.mlp.{i}"),
            LayerSpec::Linear { inputs: fin, outputs: fout },
            Extent::rows(rows),
        ));
        if i + 1 < depth {
            out.push(row(format!("{prefix}.mlp.{i}.relu"), LayerSpec::Relu, Extent::rows(rows)));
        }
    }
}

fn sequence_rows(out: &mut Vec<LedgerRow>, prefix: &str, inputs: usize, outputs: usize, cfg: &EncoderConfig, seqs: usize, frames: usize) {
    mlp_rows(out, prefix, inputs, cfg.mlp_hidden, outputs, cfg.mlp_layers, seqs * frames);
    let ext = Extent {
        sequences: seqs,
        length: frames,
    };
    out.push(row(
        format!("{prefix}.conv"),
        LayerSpec::Conv1d {
            kernel: cfg.conv_kernel,
            inputs: outputs,
            outputs,
        },
        ext,
    ));
    out.push(row(format!("{prefix}.pool"), LayerSpec::MaxpoolTime, ext));
}

fn backbone_rows(out: &mut Vec<LedgerRow>, dim: usize, cfg: &TransformerConfig, head_out: usize, tokens: usize) {
    let rows = Extent::rows(tokens);
    let seq = Extent {
        sequences: 1,
        length: tokens,
    };
    for l in 0..cfg.layers {
        let p = format!("transformer.{l}");
        out.push(row(format!("{p}.norm1"), LayerSpec::LayerNorm { dim }, rows));
        out.push(row(format!("{p}.attn"), LayerSpec::Mhsa { dim, heads: cfg.heads }, seq));
        out.push(row(format!("{p}.norm2"), LayerSpec::LayerNorm { dim }, rows));
        let hidden = dim * cfg.ff_mult;
        out.push(row(format!("{p}.ff1"), LayerSpec::Linear { inputs: dim, outputs: hidden }, rows));
        out.push(row(format!("{p}.ff.relu"), LayerSpec::Relu, rows));
        out.push(row(format!("{p}.ff2"), LayerSpec::Linear { inputs: hidden, outputs: dim }, rows));
    }
    out.push(row("transformer.norm", LayerSpec::LayerNorm { dim }, rows));
    out.push(row("pool", LayerSpec::MeanPool, rows));
    out.push(row(
        "head",
        LayerSpec::Linear {
            inputs: dim,
            outputs: head_out,
        },
        Extent::rows(1),
    ));
}

/// Per-layer ledger for one inference on `tracks × frames` input. For PixT
/// the token count is the patch count and `tracks` is ignored.
pub fn ledger(config: &ModelConfig, tracks: usize, frames: usize) -> Vec<LedgerRow> {
    let mut out = Vec::new();
    match config {
        ModelConfig::Movt(c) => {
            let d = c.embed_dim;
            sequence_rows(&mut out, "motion", 3, d, &c.motion, tracks, frames);
            mlp_rows(
                &mut out,
                "position",
                2,
                c.position_mlp_hidden,
                d,
                c.position_mlp_layers,
                tracks,
            );
            backbone_rows(&mut out, c.model_dim(), &c.transformer, c.head.outputs(), tracks);
        }
        ModelConfig::Pixt(c) => {
            let (d, dim, p) = (c.embed_dim, c.model_dim(), c.patches());
            sequence_rows(&mut out, "pixel", c.patch_features(), d, &c.pixel, p, frames);
            out.push(row("proj", LayerSpec::Linear { inputs: d, outputs: dim }, Extent::rows(p)));
            out.push(LedgerRow {
                name: "pos_embed".into(),
                kind: "embedding_table",
                params: (p * dim) as u64,
                flops: (p * dim) as u64,
            });
            backbone_rows(&mut out, dim, &c.transformer, c.head.outputs(), p);
        }
    }
    out
}

pub fn count_params(config: &ModelConfig) -> u64 {
    ledger(config, 1, 2).iter().map(|r| r.params).sum()
}

/// GFLOPs of one inference.
pub fn count_flops(config: &ModelConfig, tracks: usize, frames: usize) -> f64 {
    ledger(config, tracks, frames).iter().map(|r| r.flops).sum::<u64>() as f64 / 1e9
}
