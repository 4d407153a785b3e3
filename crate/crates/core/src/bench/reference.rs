//! Published figures for the full-size model, measured on a Pixel 4 with
//! trained weights. They are carried as annotations for reports; nothing
//! here is reproduced or asserted against local measurements.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Word error rate of an ASR system on the converted speech, percent.
    WerPercent,
    SizeMb,
    LatencyMs,
    LatencySec,
    Rtf,
    DelayMs,
    PerceivedDelayMs,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::WerPercent => "wer_percent",
            Metric::SizeMb => "size_mb",
            Metric::LatencyMs => "latency_ms",
            Metric::LatencySec => "latency_sec",
            Metric::Rtf => "rtf",
            Metric::DelayMs => "delay_ms",
            Metric::PerceivedDelayMs => "perceived_delay_ms",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceEntry {
    /// Model or component the figure describes.
    pub subject: &'static str,
    pub metric: Metric,
    pub value: f64,
    /// Table or figure the number was read from.
    pub source: &'static str,
}

const NON_STREAMING: &str = "table: 10 s benchmark of the non-streaming model";
const DECODER_VOCODER: &str = "table: 25 ms benchmark of streaming decoder with vocoders";
const DECODER_WER: &str = "table: model accuracy with streaming decoder vs Base";
const ENCODER_BENCH: &str = "table: 80 ms benchmark of streaming encoder";
const QUANT_WER: &str = "table: WERs with quantized LSA_LS2 encoder, decoder and vocoders";
const WER_DELAY: &str = "figure: WER vs delay trade-off of streaming encoders";

const fn entry(subject: &'static str, metric: Metric, value: f64, source: &'static str) -> ReferenceEntry {
    ReferenceEntry {
        subject,
        metric,
        value,
        source,
    }
}

pub static REFERENCE: &[ReferenceEntry] = &[
    entry("Base", Metric::WerPercent, 14.7, WER_DELAY),
    entry("Base", Metric::DelayMs, 10_000.0, WER_DELAY),
    entry("Causal", Metric::WerPercent, 19.1, WER_DELAY),
    entry("Causal", Metric::DelayMs, 0.0, WER_DELAY),
    entry("LSA1", Metric::WerPercent, 17.6, WER_DELAY),
    entry("LSA2", Metric::WerPercent, 16.4, WER_DELAY),
    entry("LSA_LS2", Metric::WerPercent, 15.3, WER_DELAY),
    entry("LSA_LS2", Metric::DelayMs, 800.0, WER_DELAY),
    entry("nEnc sDec nGL", Metric::WerPercent, 14.7, DECODER_WER),
    entry("nEnc sDec GL", Metric::WerPercent, 14.8, DECODER_WER),
    entry("nEnc sDec MG", Metric::WerPercent, 16.0, DECODER_WER),
    entry("LSA_LS2 int8, sDec int8, GL", Metric::WerPercent, 15.4, QUANT_WER),
    entry("LSA_LS2 int8, sDec int8, MG", Metric::WerPercent, 15.9, QUANT_WER),
    entry("LSA_LS2 int4, sDec int8, GL", Metric::WerPercent, 15.6, QUANT_WER),
    entry("LSA_LS2 int4, sDec int8, MG", Metric::WerPercent, 15.8, QUANT_WER),
    entry("LSA_LS2 encoder float32", Metric::LatencyMs, 40.0, ENCODER_BENCH),
    entry("LSA_LS2 encoder int8", Metric::LatencyMs, 32.0, ENCODER_BENCH),
    entry("LSA_LS2 encoder float32", Metric::Rtf, 2.0, ENCODER_BENCH),
    entry("LSA_LS2 encoder int8", Metric::Rtf, 2.5, ENCODER_BENCH),
    entry("LSA_LS2 encoder float32", Metric::SizeMb, 436.0, ENCODER_BENCH),
    entry("LSA_LS2 encoder int8", Metric::SizeMb, 111.0, ENCODER_BENCH),
    entry("LSA_LS2 encoder int4", Metric::SizeMb, 70.0, ENCODER_BENCH),
    entry("LSA_LS2 encoder float32", Metric::PerceivedDelayMs, 400.0, ENCODER_BENCH),
    entry("LSA_LS2 encoder int8", Metric::PerceivedDelayMs, 320.0, ENCODER_BENCH),
    entry("sDec float32 + GL", Metric::LatencyMs, 16.0, DECODER_VOCODER),
    entry("sDec float32 + MG", Metric::LatencyMs, 13.4, DECODER_VOCODER),
    entry("sDec int8 + GL", Metric::LatencyMs, 13.6, DECODER_VOCODER),
    entry("sDec int8 + MG", Metric::LatencyMs, 11.0, DECODER_VOCODER),
    entry("GL", Metric::LatencyMs, 7.4, DECODER_VOCODER),
    entry("MG", Metric::LatencyMs, 4.8, DECODER_VOCODER),
    entry("sDec float32 + GL", Metric::Rtf, 1.6, DECODER_VOCODER),
    entry("sDec float32 + MG", Metric::Rtf, 1.9, DECODER_VOCODER),
    entry("sDec int8 + GL", Metric::Rtf, 1.8, DECODER_VOCODER),
    entry("sDec int8 + MG", Metric::Rtf, 2.3, DECODER_VOCODER),
    entry("GL", Metric::Rtf, 3.4, DECODER_VOCODER),
    entry("MG", Metric::Rtf, 5.2, DECODER_VOCODER),
    entry("sDec float32 + GL", Metric::SizeMb, 122.0, DECODER_VOCODER),
    entry("sDec float32 + MG", Metric::SizeMb, 147.0, DECODER_VOCODER),
    entry("sDec int8 + GL", Metric::SizeMb, 30.0, DECODER_VOCODER),
    entry("sDec int8 + MG", Metric::SizeMb, 55.0, DECODER_VOCODER),
    entry("GL", Metric::SizeMb, 0.1, DECODER_VOCODER),
    entry("MG", Metric::SizeMb, 25.0, DECODER_VOCODER),
    entry("nEnc float32", Metric::LatencySec, 2.8, NON_STREAMING),
    entry("nEnc int8", Metric::LatencySec, 2.6, NON_STREAMING),
    entry("nDec float32", Metric::LatencySec, 2.7, NON_STREAMING),
    entry("nDec int8", Metric::LatencySec, 2.4, NON_STREAMING),
    entry("GL", Metric::LatencySec, 2.4, NON_STREAMING),
    entry("nGL", Metric::LatencySec, 7.0, NON_STREAMING),
];

/// First entry for `subject` and `metric`.
pub fn lookup(subject: &str, metric: Metric) -> Option<&'static ReferenceEntry> {
    REFERENCE.iter().find(|e| e.subject == subject && e.metric == metric)
}

/// Encoder-configuration WER from the WER/delay figure.
pub fn reference_wer(label: &str) -> Option<f64> {
    REFERENCE
        .iter()
        .find(|e| e.subject == label && e.metric == Metric::WerPercent && e.source == WER_DELAY)
        .map(|e| e.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_annotations() {
        assert_eq!(reference_wer("LSA_LS2"), Some(15.3));
        assert_eq!(reference_wer("Causal"), Some(19.1));
        assert_eq!(reference_wer("LS1"), None);
        assert_eq!(lookup("Base", Metric::DelayMs).unwrap().value, 10_000.0);
    }

    #[test]
    fn every_entry_is_cited_and_unique() {
        for (i, a) in REFERENCE.iter().enumerate() {
            assert!(a.source.starts_with("table: ") || a.source.starts_with("figure: "));
            for b in &REFERENCE[..i] {
                assert!(
                    !(a.subject == b.subject && a.metric == b.metric && a.source == b.source),
                    "duplicate {a:?}"
                );
            }
        }
    }

    #[test]
    fn perceived_delay_rows_are_delay_over_rtf() {
        for v in ["float32", "int8"] {
            let s = format!("LSA_LS2 encoder {v}");
            let rtf = lookup(&s, Metric::Rtf).unwrap().value;
            let perceived = lookup(&s, Metric::PerceivedDelayMs).unwrap().value;
            assert_eq!(lookup("LSA_LS2", Metric::DelayMs).unwrap().value / rtf, perceived);
        }
    }
}
