//! Encoder architecture strings: parsing, canonical rendering, validation,
//! and the algorithmic-delay calculus.
//!
//! Grammar (whitespace or `,` separate items):
//!
//! ```text
//! spec := item (sep item)*
//! item := [count "x"] unit
//! unit := "CB" ["_R" int] ["_L" (int | "inf")]
//!       | "SL" ["_R" int]
//! ```
//!
//! A bare `CB` is a streaming conformer block with left context 65 and no
//! look-ahead. A bare `SL` (or `SL_R0`) is the causal stacker over the
//! previous and current frame; `SL_Rk` stacks the current frame with `k`
//! future frames. Every stacker halves the frame rate.

use std::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_LEFT_CONTEXT: usize = 65;

/// The seven published streaming encoder layouts, keyed by CLI name.
pub const NAMED_CONFIGS: [(&str, &str, &str); 7] = [
    ("causal", "Causal", "2xCB SL 2xCB SL 13xCB"),
    ("lsa1", "LSA1", "2xCB SL 2xCB SL 3xCB CB_R5 9xCB"),
    (
        "lsa2",
        "LSA2",
        "2xCB SL 2xCB SL 2xCB CB_R4 CB CB_R4 CB CB_R4 2xCB CB_R4 CB CB_R4 CB",
    ),
    ("ls1", "LS1", "2xCB SL_R3 3xCB SL_R4 12xCB"),
    ("ls2", "LS2", "2xCB SL_R3 3xCB SL_R5 3xCB SL_R6 9xCB"),
    ("lsa_ls1", "LSA_LS1", "2xCB SL_R7 3xCB SL_R9 10xCB CB_R4 CB"),
    (
        "lsa_ls2",
        "LSA_LS2",
        "2xCB SL_R7 3xCB SL_R6 3xCB SL_R4 5xCB CB_R4 CB CB_R4 CB",
    ),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Conformer block; `left: None` is unbounded history.
    Conformer { left: Option<usize>, right: usize },
    /// Stacker with 2x subsampling; `right == 0` is the causal (previous,
    /// current) variant, otherwise current plus `right` future frames.
    Stacker { right: usize },
}

impl LayerSpec {
    pub const CB: LayerSpec = LayerSpec::Conformer {
        left: Some(DEFAULT_LEFT_CONTEXT),
        right: 0,
    };
    pub const SL: LayerSpec = LayerSpec::Stacker { right: 0 };

    pub fn is_conformer(&self) -> bool {
        matches!(self, LayerSpec::Conformer { .. })
    }

    /// Number of input frames the stacker concatenates.
    pub fn stack_width(&self) -> Option<usize> {
        match *self {
            LayerSpec::Stacker { right: 0 } => Some(2),
            LayerSpec::Stacker { right } => Some(right + 1),
            LayerSpec::Conformer { .. } => None,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conformer { left, right } => {
                f.write_str("CB")?;
                if right > 0 {
                    write!(f, "_R{right}")?;
                }
                match left {
                    Some(DEFAULT_LEFT_CONTEXT) => Ok(()),
                    Some(l) => write!(f, "_L{l}"),
                    None => f.write_str("_Linf"),
                }
            }
            LayerSpec::Stacker { right: 0 } => f.write_str("SL"),
            LayerSpec::Stacker { right } => write!(f, "SL_R{right}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub name: Option<String>,
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    pub fn cb_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_conformer()).count()
    }

    pub fn sl_count(&self) -> usize {
        self.layers.len() - self.cb_count()
    }

    pub fn subsample_factor(&self) -> usize {
        1usize << self.sl_count()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_arch(self))
    }
}

/// Parses a DSL string into an unnamed [`ArchSpec`].
pub fn parse_arch(text: &str) -> Result<ArchSpec> {
    let mut layers = Vec::new();
    let bytes = text.as_bytes();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes[pos].is_ascii_whitespace() || bytes[pos] == b',' {
            pos += 1;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b',' {
            pos += 1;
        }
        let (count, unit) = parse_item(&text[start..pos], start)?;
        layers.extend(std::iter::repeat(unit).take(count));
    }
    if layers.is_empty() {
        return Err(Error::Parse {
            offset: 0,
            message: "empty architecture".into(),
        });
    }
    if !layers.iter().any(LayerSpec::is_conformer) {
        return Err(Error::Parse {
            offset: 0,
            message: "architecture needs at least one conformer block".into(),
        });
    }
    Ok(ArchSpec { name: None, layers })
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn parse_item(token: &str, offset: usize) -> Result<(usize, LayerSpec)> {
    let digits = token.bytes().take_while(u8::is_ascii_digit).count();
    let (count, rest, rest_off) = if digits > 0 && token[digits..].starts_with('x') {
        let count: usize = token[..digits]
            .parse()
            .map_err(|_| parse_err(offset, format!("bad repeat count in `{token}`")))?;
        if count == 0 {
            return Err(parse_err(offset, "repeat count must be at least 1"));
        }
        (count, &token[digits + 1..], offset + digits + 1)
    } else {
        (1, token, offset)
    };

    let (mut layer, mut suffixes, mut cur) = if let Some(s) = rest.strip_prefix("CB") {
        (LayerSpec::CB, s, rest_off + 2)
    } else if let Some(s) = rest.strip_prefix("SL") {
        (LayerSpec::SL, s, rest_off + 2)
    } else {
        return Err(parse_err(rest_off, format!("unknown token `{rest}`")));
    };

    let (mut seen_r, mut seen_l) = (false, false);
    while !suffixes.is_empty() {
        let Some(body) = suffixes.strip_prefix('_') else {
            return Err(parse_err(cur, format!("unexpected `{suffixes}`")));
        };
        let piece_len = body.find('_').unwrap_or(body.len());
        let piece = &body[..piece_len];
        let mut chars = piece.chars();
        let key = chars.next();
        let value = chars.as_str();
        let value_off = cur + 2;
        match (key, &mut layer) {
            (Some('R'), LayerSpec::Conformer { right, .. } | LayerSpec::Stacker { right }) if !seen_r => {
                *right = parse_context(value, value_off)?;
                seen_r = true;
            }
            (Some('L'), LayerSpec::Conformer { left, .. }) if !seen_l => {
                *left = if value == "inf" {
                    None
                } else {
                    Some(parse_context(value, value_off)?)
                };
                seen_l = true;
            }
            _ => return Err(parse_err(cur, format!("unexpected suffix `_{piece}`"))),
        }
        cur += 1 + piece_len;
        suffixes = &body[piece_len..];
    }
    Ok((count, layer))
}

fn parse_context(value: &str, offset: usize) -> Result<usize> {
    if value.starts_with('-') {
        return Err(parse_err(offset, format!("negative context `{value}`")));
    }
    if value.is_empty() || !value.bytes().all(|b| b.is_ascii_digit()) {
        return Err(parse_err(offset, format!("expected a context count, found `{value}`")));
    }
    value
        .parse()
        .map_err(|_| parse_err(offset, format!("context `{value}` out of range")))
}

/// Canonical text: runs of identical layers collapse to `Nx<unit>`.
pub fn render_arch(spec: &ArchSpec) -> String {
    let mut items = Vec::new();
    let mut i = 0;
    while i < spec.layers.len() {
        let layer = spec.layers[i];
        let run = spec.layers[i..].iter().take_while(|l| **l == layer).count();
        items.push(if run > 1 {
            format!("{run}x{layer}")
        } else {
            layer.to_string()
        });
        i += run;
    }
    items.join(" ")
}

/// Looks up one of [`NAMED_CONFIGS`] by CLI name (case-insensitive) or label.
pub fn named_config(name: &str) -> Option<ArchSpec> {
    NAMED_CONFIGS
        .iter()
        .find(|(key, label, _)| key.eq_ignore_ascii_case(name) || *label == name)
        .map(|(_, label, dsl)| {
            parse_arch(dsl)
                .expect("registry strings are valid DSL")
                .with_name(*label)
        })
}

/// Resolves a named config, falling back to DSL parsing.
pub fn resolve_arch(name_or_dsl: &str) -> Result<ArchSpec> {
    match named_config(name_or_dsl.trim()) {
        Some(spec) => Ok(spec),
        None => parse_arch(name_or_dsl),
    }
}

pub fn all_named_configs() -> Vec<ArchSpec> {
    NAMED_CONFIGS
        .iter()
        .map(|(key, _, _)| named_config(key).expect("registry entry"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayReport {
    pub lookahead_frames: usize,
    pub delay_ms: f64,
    pub subsample_factor: usize,
    pub cb_count: usize,
    /// `(layer index, look-ahead contributed in input frames)`.
    pub per_layer: Vec<(usize, usize)>,
}

/// Algorithmic look-ahead of an encoder layout.
///
/// Walking the layers with cumulative subsampling `s` (1, doubling after
/// every stacker), a block with right context `r` adds `r * s` input frames
/// and a look-ahead stacker `SL_Rk` adds `k * s`.
pub fn analyze_delay(spec: &ArchSpec, hop_ms: f64) -> Result<DelayReport> {
    if !(hop_ms > 0.0) || !hop_ms.is_finite() {
        return Err(Error::Domain(format!("hop_ms must be positive, got {hop_ms}")));
    }
    let mut stride = 1usize;
    let mut per_layer = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conformer { right, .. } => per_layer.push((i, right * stride)),
            LayerSpec::Stacker { right } => {
                per_layer.push((i, right * stride));
                stride *= 2;
            }
        }
    }
    let lookahead_frames = per_layer.iter().map(|(_, c)| c).sum();
    Ok(DelayReport {
        lookahead_frames,
        delay_ms: lookahead_frames as f64 * hop_ms,
        subsample_factor: stride,
        cb_count: spec.cb_count(),
        per_layer,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub severity: Severity,
    pub layer: Option<usize>,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match self.layer {
            Some(i) => write!(f, "{sev}: layer {i}: {}", self.message),
            None => write!(f, "{sev}: {}", self.message),
        }
    }
}

pub const EXPECTED_CB_COUNT: usize = 17;
pub const MAX_SUBSAMPLE: usize = 8;

/// Structural checks for a streaming encoder layout.
pub fn validate(spec: &ArchSpec) -> Vec<Finding> {
    let mut findings = Vec::new();
    let cb = spec.cb_count();
    if cb != EXPECTED_CB_COUNT {
        findings.push(Finding {
            severity: Severity::Warning,
            layer: None,
            message: format!("cb_count={cb}, expected {EXPECTED_CB_COUNT}"),
        });
    }
    for (i, layer) in spec.layers.iter().enumerate() {
        if let LayerSpec::Conformer { left: None, .. } = layer {
            findings.push(Finding {
                severity: Severity::Error,
                layer: Some(i),
                message: "unbounded left context cannot stream with bounded memory".into(),
            });
        }
    }
    let sub = spec.subsample_factor();
    if sub > MAX_SUBSAMPLE {
        findings.push(Finding {
            severity: Severity::Warning,
            layer: None,
            message: format!("subsample factor {sub} exceeds {MAX_SUBSAMPLE}"),
        });
    }
    findings
}
