//! Feed a generated pattern forward and sum each channel of a pooled map.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::{forward_output, NetworkSpec};
use crate::tensor::Tensor;

/// Peak value a display-normalized pattern is stretched to before re-feeding.
pub const IMAGE_RANGE: f32 = 255.0;

/// How the pattern was presented to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PatternInput {
    /// The back-projected tensor as computed.
    #[default]
    Raw,
    /// Min-max normalized to `[0, 1]`, then scaled to `[0, IMAGE_RANGE]`.
    Normalized,
}

impl PatternInput {
    pub fn as_str(&self) -> &'static str {
        match self {
            PatternInput::Raw => "raw",
            PatternInput::Normalized => "normalized",
        }
    }

    pub fn prepare(&self, pattern: &Tensor) -> Tensor {
        match self {
            PatternInput::Raw => pattern.clone(),
            PatternInput::Normalized => pattern.minmax_normalize().scale(IMAGE_RANGE),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationReport {
    pub pool_layer: String,
    pub sums: Vec<f64>,
    pub seeded_channel: usize,
    pub rank_of_seeded: usize,
    pub input: PatternInput,
}

/// 1-based rank of every channel: descending sums, ties to the lower index.
pub fn ranks(sums: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sums.len()).collect();
    order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; sums.len()];
    for (r, ch) in order.into_iter().enumerate() {
        ranks[ch] = r + 1;
    }
    ranks
}

impl ActivationReport {
    pub fn from_sums(
        pool_layer: impl Into<String>,
        sums: Vec<f64>,
        seeded_channel: usize,
        input: PatternInput,
    ) -> Result<Self> {
        if seeded_channel >= sums.len() {
            return Err(Error::invalid(format!(
                "seeded channel {seeded_channel} out of range for {} channels",
                sums.len()
            )));
        }
        let rank_of_seeded = ranks(&sums)[seeded_channel];
        Ok(ActivationReport {
            pool_layer: pool_layer.into(),
            sums,
            seeded_channel,
            rank_of_seeded,
            input,
        })
    }

    pub fn seeded_sum(&self) -> f64 {
        self.sums[self.seeded_channel]
    }

    pub fn summary(&self) -> String {
        format!(
            "seeded channel {}: sum={}, rank={} of {} ({} input, {})",
            self.seeded_channel,
            self.seeded_sum(),
            self.rank_of_seeded,
            self.sums.len(),
            self.input.as_str(),
            self.pool_layer,
        )
    }
}

/// Runs the full forward pass (biases included) to `pool_layer` and sums each channel.
pub fn validate(
    net: &NetworkSpec,
    pattern: &Tensor,
    pool_layer: &str,
    seeded_channel: usize,
    input: PatternInput,
) -> Result<ActivationReport> {
    let pooled = forward_output(net, &input.prepare(pattern), pool_layer)?;
    let sums = (0..pooled.channels())
        .map(|c| pooled.channel(c).iter().map(|&v| v as f64).sum())
        .collect();
    ActivationReport::from_sums(pool_layer, sums, seeded_channel, input)
}

pub const CSV_HEADER: &str = "channel,sum,rank";

/// `channel,sum,rank`, one row per channel in channel order.
///
/// Sums use Rust's shortest round-trip formatting, so parsing them back
/// yields the same `f64`.
pub fn report_csv(report: &ActivationReport) -> Vec<u8> {
    let mut out = String::with_capacity(16 * (report.sums.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (ch, (sum, rank)) in report.sums.iter().zip(ranks(&report.sums)).enumerate() {
        let _ = writeln!(out, "{ch},{sum:?},{rank}");
    }
    out.into_bytes()
}

/// Reads the sums back out of [`report_csv`] output.
pub fn parse_report_csv(bytes: &[u8]) -> Result<Vec<f64>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::invalid("missing `channel,sum,rank` header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            let [ch, sum, _rank] = fields[..] else {
                return Err(Error::invalid(format!("row {i}: expected 3 fields")));
            };
            if ch.parse::<usize>() != Ok(i) {
                return Err(Error::invalid(format!("row {i}: channel `{ch}` out of order")));
            }
            sum.parse::<f64>()
                .map_err(|e| Error::invalid(format!("row {i}: {e}")))
        })
        .collect()
}
