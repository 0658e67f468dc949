//! Process-output monitoring: classify the device's square-wave edge
//! stream as normal, delayed, stalled, or rebooting.
//!
//! An oscilloscope on the device's toggled output is replaced by a wire
//! format of timestamped level transitions, one record per line:
//! `<timestamp_ns>,<H|L>\n`. Classification works on tumbling windows
//! anchored at the first edge and is a pure function of the series, so the
//! same data always yields the same verdicts.

mod live;

pub use live::{ChannelEdgeFeed, EdgeFeed, EdgeListener, TcpEdgeFeed, WindowClassifier};

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Nanos;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("insufficient data: {got} edges, need {needed}")]
    InsufficientData { got: usize, needed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "L")]
    Low,
    #[serde(rename = "H")]
    High,
}

impl Level {
    pub fn flip(self) -> Self {
        match self {
            Level::Low => Level::High,
            Level::High => Level::Low,
        }
    }
}

/// One output transition; `level` is the line state after the edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub timestamp: Nanos,
    pub level: Level,
}

impl Edge {
    /// Wire representation, including the trailing newline.
    pub fn to_record(&self) -> String {
        format!(
            "{},{}\n",
            self.timestamp,
            match self.level {
                Level::High => "H",
                Level::Low => "L",
            }
        )
    }

    /// Parse one record line (without the newline). The grammar is strict:
    /// decimal timestamp, a comma, `H` or `L`.
    pub fn parse_record(line: &str) -> Option<Edge> {
        let (ts, level) = line.split_once(',')?;
        if ts.is_empty() || !ts.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let timestamp = ts.parse().ok()?;
        let level = match level {
            "H" => Level::High,
            "L" => Level::Low,
            _ => return None,
        };
        Some(Edge { timestamp, level })
    }
}

/// Validated, ordered edge series. Consecutive edges alternate level and
/// timestamps strictly increase; offending records are counted, not kept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeSeries {
    pub edges: Vec<Edge>,
    pub rejected: usize,
}

impl EdgeSeries {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append one edge if it alternates and advances time; returns whether
    /// it was accepted.
    pub fn push(&mut self, edge: Edge) -> bool {
        if let Some(last) = self.edges.last() {
            if edge.timestamp <= last.timestamp || edge.level == last.level {
                self.rejected += 1;
                return false;
            }
        }
        self.edges.push(edge);
        true
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn last_timestamp(&self) -> Option<Nanos> {
        self.edges.last().map(|e| e.timestamp)
    }
}

/// Parse the newline-delimited edge wire format; malformed records are
/// rejected per record and counted.
pub fn ingest_edges(reader: impl BufRead) -> EdgeSeries {
    let mut series = EdgeSeries::new();
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.is_empty() {
            continue;
        }
        match Edge::parse_record(&line) {
            Some(edge) => {
                series.push(edge);
            }
            None => series.rejected += 1,
        }
    }
    series
}

/// Nominal shape of the healthy output signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalBaseline {
    /// Rising-to-rising period.
    pub period: Nanos,
    /// Fraction of the period spent high, in (0, 1).
    pub duty: f64,
    /// Allowed per-edge deviation as a fraction of the period.
    pub jitter_tolerance: f64,
}

impl SignalBaseline {
    /// Nominal duration of the phase that an edge at `ending_level` just
    /// ended, i.e. the expected gap before an edge whose predecessor had
    /// level `!ending_level`... the caller passes the predecessor's level.
    fn nominal_gap_after(&self, level_before: Level) -> f64 {
        match level_before {
            Level::High => self.duty * self.period as f64,
            Level::Low => (1.0 - self.duty) * self.period as f64,
        }
    }
}

pub const DEFAULT_JITTER_TOLERANCE: f64 = 0.2;
const MIN_BASELINE_EDGES: usize = 8;

/// Estimate period and duty from a healthy stretch of signal.
///
/// Period is the median rising-to-rising interval, duty the median of
/// per-cycle high-time ratios; the median makes a startup transient or a
/// single outlier interval harmless.
pub fn estimate_baseline(
    series: &EdgeSeries,
    jitter_tolerance: f64,
) -> Result<SignalBaseline, MonitorError> {
    if series.len() < MIN_BASELINE_EDGES {
        return Err(MonitorError::InsufficientData {
            got: series.len(),
            needed: MIN_BASELINE_EDGES,
        });
    }
    let rising: Vec<Nanos> = series
        .edges
        .iter()
        .filter(|e| e.level == Level::High)
        .map(|e| e.timestamp)
        .collect();
    if rising.len() < 2 {
        return Err(MonitorError::InsufficientData {
            got: rising.len(),
            needed: 2,
        });
    }
    let mut periods: Vec<Nanos> = rising.windows(2).map(|w| w[1] - w[0]).collect();
    periods.sort_unstable();
    let period = periods[(periods.len() - 1) / 2];

    let mut ratios = Vec::new();
    for w in rising.windows(2) {
        let (rise, next_rise) = (w[0], w[1]);
        if let Some(fall) = series
            .edges
            .iter()
            .find(|e| e.level == Level::Low && e.timestamp > rise && e.timestamp < next_rise)
        {
            ratios.push((fall.timestamp - rise) as f64 / (next_rise - rise) as f64);
        }
    }
    ratios.sort_by(|a, b| a.total_cmp(b));
    let duty = if ratios.is_empty() {
        0.5
    } else {
        ratios[(ratios.len() - 1) / 2]
    };

    Ok(SignalBaseline {
        period,
        duty,
        jitter_tolerance,
    })
}

/// Thresholds for stall and reboot detection, in units of the baseline
/// period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyParams {
    pub stall_threshold_periods: f64,
    pub reboot_min_periods: f64,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        Self {
            stall_threshold_periods: 3.0,
            reboot_min_periods: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictClass {
    Normal,
    Delayed,
    Stalled,
    RebootSignature,
    InsufficientData,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictDetail {
    /// Largest per-edge deviation in the window, as a fraction of the
    /// period.
    MaxDeviation(f64),
    /// Length of the silence that triggered a stall or reboot verdict.
    Silence(Nanos),
    None,
}

/// Health classification of one tumbling window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub window_start: Nanos,
    pub window_end: Nanos,
    pub class: VerdictClass,
    pub detail: VerdictDetail,
}

#[derive(Debug, Clone, Copy)]
enum GapKind {
    Reboot,
    Stall,
}

struct GapEvent {
    start: Nanos,
    silence: Nanos,
    kind: GapKind,
}

/// Classify the series over tumbling windows of `window` nanoseconds
/// anchored at the first edge, considering the signal observed until
/// `end_time`.
///
/// Inside a window, in order of precedence:
/// - Stalled: a silence longer than `stall_threshold` periods began here
///   and the signal never cleanly resumed.
/// - RebootSignature: a silence of at least `reboot_min` periods began
///   here and alternation resumed at the baseline period afterwards.
/// - Delayed: some edge deviates from its expected arrival (previous edge
///   plus nominal phase duration) by more than the jitter tolerance.
/// - InsufficientData: fewer than two edges and none of the above.
/// - Normal otherwise.
pub fn classify(
    series: &EdgeSeries,
    baseline: &SignalBaseline,
    window: Nanos,
    end_time: Nanos,
    params: &ClassifyParams,
) -> Vec<Verdict> {
    let edges = &series.edges;
    let Some(first) = edges.first() else {
        return Vec::new();
    };
    let t0 = first.timestamp;
    let period = baseline.period as f64;
    let stall_ns = (params.stall_threshold_periods * period) as Nanos;
    let reboot_ns = (params.reboot_min_periods * period) as Nanos;

    // Resolve every inter-edge gap into an event or a deviation.
    let mut events: Vec<GapEvent> = Vec::new();
    let mut deviations: Vec<(Nanos, f64)> = Vec::new(); // (edge ts, fraction of period)
    for i in 1..edges.len() {
        let gap = edges[i].timestamp - edges[i - 1].timestamp;
        let nominal = baseline.nominal_gap_after(edges[i - 1].level);
        if gap >= reboot_ns && clean_resume(edges, i, baseline) {
            events.push(GapEvent {
                start: edges[i - 1].timestamp,
                silence: gap,
                kind: GapKind::Reboot,
            });
        } else if gap > stall_ns {
            events.push(GapEvent {
                start: edges[i - 1].timestamp,
                silence: gap,
                kind: GapKind::Stall,
            });
        } else {
            deviations.push((edges[i].timestamp, (gap as f64 - nominal).abs() / period));
        }
    }
    // Terminal silence: observed until end_time with no further edges.
    let last = edges.last().expect("non-empty");
    if end_time > last.timestamp && end_time - last.timestamp > stall_ns {
        events.push(GapEvent {
            start: last.timestamp,
            silence: end_time - last.timestamp,
            kind: GapKind::Stall,
        });
    }

    let mut verdicts = Vec::new();
    let mut k = 0u64;
    while t0 + k * window < end_time {
        let start = t0 + k * window;
        let end = start + window;
        let in_window = |t: Nanos| t >= start && t < end;

        let mut stall: Option<Nanos> = None;
        let mut reboot: Option<Nanos> = None;
        for ev in events.iter().filter(|e| in_window(e.start)) {
            match ev.kind {
                GapKind::Stall => stall = Some(stall.unwrap_or(0).max(ev.silence)),
                GapKind::Reboot => reboot = Some(reboot.unwrap_or(0).max(ev.silence)),
            }
        }

        let (class, detail) = if let Some(silence) = stall {
            (VerdictClass::Stalled, VerdictDetail::Silence(silence))
        } else if let Some(silence) = reboot {
            (VerdictClass::RebootSignature, VerdictDetail::Silence(silence))
        } else {
            // Edges whose gap was consumed by an event don't also count as
            // deviations; `deviations` only holds event-free gaps.
            let max_dev = deviations
                .iter()
                .filter(|(t, _)| in_window(*t))
                .map(|(_, d)| *d)
                .fold(0.0f64, f64::max);
            let edge_count = edges.iter().filter(|e| in_window(e.timestamp)).count();
            if max_dev > baseline.jitter_tolerance {
                (VerdictClass::Delayed, VerdictDetail::MaxDeviation(max_dev))
            } else if edge_count < 2 {
                (VerdictClass::InsufficientData, VerdictDetail::None)
            } else {
                (VerdictClass::Normal, VerdictDetail::MaxDeviation(max_dev))
            }
        };
        verdicts.push(Verdict {
            window_start: start,
            window_end: end,
            class,
            detail,
        });
        k += 1;
    }
    verdicts
}

/// A gap ending at edge `i` resumed cleanly when the next two intervals
/// (where observed) sit within the jitter tolerance of their nominal
/// duration. Fewer than two subsequent edges cannot confirm a clean
/// resumption.
fn clean_resume(edges: &[Edge], i: usize, baseline: &SignalBaseline) -> bool {
    if i + 2 >= edges.len() {
        return false;
    }
    let period = baseline.period as f64;
    for j in i + 1..=i + 2 {
        let gap = (edges[j].timestamp - edges[j - 1].timestamp) as f64;
        let nominal = baseline.nominal_gap_after(edges[j - 1].level);
        if (gap - nominal).abs() / period > baseline.jitter_tolerance {
            return false;
        }
    }
    true
}

/// A case send time, for attributing verdicts to fuzz cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseStamp {
    pub case_id: u64,
    pub send_time: Nanos,
}

/// One verdict attributed to the fuzz case most plausibly responsible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub verdict: Verdict,
    /// Latest case sent at or before the verdict's window start; `None`
    /// when the verdict precedes all cases.
    pub case_id: Option<u64>,
    /// Gap to the previous candidate case, when one exists: anything
    /// within this span could equally be the cause.
    pub ambiguity: Option<Nanos>,
}

/// Attribute every non-Normal verdict to the latest case whose send time
/// is at or before the verdict's window start. Both inputs must be
/// time-ordered.
pub fn correlate(verdicts: &[Verdict], cases: &[CaseStamp]) -> Vec<Attribution> {
    let mut out = Vec::new();
    for v in verdicts {
        if v.class == VerdictClass::Normal {
            continue;
        }
        let idx = cases.partition_point(|c| c.send_time <= v.window_start);
        let (case_id, ambiguity) = match idx {
            0 => (None, None),
            n => (
                Some(cases[n - 1].case_id),
                (n >= 2).then(|| cases[n - 1].send_time - cases[n - 2].send_time),
            ),
        };
        out.push(Attribution {
            verdict: *v,
            case_id,
            ambiguity,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SECOND;

    fn square_wave(start: Nanos, half: Nanos, count: usize, first: Level) -> EdgeSeries {
        let mut series = EdgeSeries::new();
        let mut level = first;
        for i in 0..count {
            assert!(series.push(Edge {
                timestamp: start + i as u64 * half,
                level,
            }));
            level = level.flip();
        }
        series
    }

    fn baseline_1s() -> SignalBaseline {
        SignalBaseline {
            period: SECOND,
            duty: 0.5,
            jitter_tolerance: 0.2,
        }
    }

    #[test]
    fn parses_the_wire_format() {
        let series = ingest_edges("0,H\n500000000,L\n1000000000,H\n".as_bytes());
        assert_eq!(series.len(), 3);
        assert_eq!(series.rejected, 0);
        assert_eq!(series.edges[2].timestamp, 1_000_000_000);
        assert_eq!(series.edges[2].level, Level::High);
    }

    #[test]
    fn rejects_malformed_records() {
        let series = ingest_edges("0,H\nbogus\n1,X\n2,H \n-3,L\n5,L\n".as_bytes());
        // "bogus", "1,X", "2,H " and "-3,L" are malformed; "5,L" is valid.
        assert_eq!(series.len(), 2);
        assert_eq!(series.rejected, 4);
    }

    #[test]
    fn rejects_non_alternating_and_non_monotonic_edges() {
        let mut series = EdgeSeries::new();
        assert!(series.push(Edge { timestamp: 10, level: Level::High }));
        assert!(!series.push(Edge { timestamp: 20, level: Level::High }));
        assert!(!series.push(Edge { timestamp: 5, level: Level::Low }));
        assert!(series.push(Edge { timestamp: 30, level: Level::Low }));
        assert_eq!(series.rejected, 2);
    }

    #[test]
    fn empty_stream_is_an_empty_series() {
        let series = ingest_edges("".as_bytes());
        assert!(series.is_empty());
    }

    #[test]
    fn baseline_from_500ms_alternation() {
        let series = square_wave(0, 500_000_000, 10, Level::High);
        let b = estimate_baseline(&series, 0.2).unwrap();
        assert_eq!(b.period, SECOND);
        assert_eq!(b.duty, 0.5);
    }

    #[test]
    fn baseline_needs_eight_edges() {
        let series = square_wave(0, 500_000_000, 6, Level::High);
        assert!(matches!(
            estimate_baseline(&series, 0.2),
            Err(MonitorError::InsufficientData { got: 6, needed: 8 })
        ));
    }

    #[test]
    fn median_shrugs_off_one_outlier_interval() {
        // 21 edges = 10 rising-to-rising intervals; one stretched by 10%.
        let mut series = EdgeSeries::new();
        let mut t = 0u64;
        let mut level = Level::High;
        for i in 0..21 {
            series.push(Edge { timestamp: t, level });
            let half = if i == 9 { 550_000_000 } else { 500_000_000 };
            t += half;
            level = level.flip();
        }
        let b = estimate_baseline(&series, 0.2).unwrap();
        assert_eq!(b.period, SECOND);
    }

    #[test]
    fn pure_square_wave_is_all_normal() {
        let series = square_wave(0, 500_000_000, 61, Level::High); // 30 s
        let verdicts = classify(&series, &baseline_1s(), 10 * SECOND, 30 * SECOND, &ClassifyParams::default());
        assert_eq!(verdicts.len(), 3);
        assert!(verdicts.iter().all(|v| v.class == VerdictClass::Normal));
    }

    #[test]
    fn one_late_transition_is_delayed_with_exact_deviation() {
        // Period 2 s, edges every 1 s; one transition 1.5 s late:
        // gap of 2.5 s against a nominal 1 s, deviation 1.5/2 = 0.75.
        let mut series = square_wave(0, SECOND, 5, Level::High); // edges at 0..4 s
        let mut level = Level::Low; // edge 4 was High
        let mut t = 4 * SECOND + 2_500_000_000;
        while t <= 20 * SECOND {
            series.push(Edge { timestamp: t, level });
            level = level.flip();
            t += SECOND;
        }
        let baseline = SignalBaseline {
            period: 2 * SECOND,
            duty: 0.5,
            jitter_tolerance: 0.2,
        };
        let verdicts = classify(&series, &baseline, 20 * SECOND, 20 * SECOND, &ClassifyParams::default());
        assert_eq!(verdicts.len(), 1);
        assert_eq!(verdicts[0].class, VerdictClass::Delayed);
        assert_eq!(verdicts[0].detail, VerdictDetail::MaxDeviation(0.75));
    }

    #[test]
    fn silence_without_resumption_is_stalled() {
        let series = square_wave(0, 500_000_000, 11, Level::High); // last edge at 5 s
        let verdicts = classify(
            &series,
            &baseline_1s(),
            10 * SECOND,
            10 * SECOND, // observed 5 s of silence past the last edge
            &ClassifyParams::default(),
        );
        assert_eq!(verdicts.len(), 1);
        assert_eq!(verdicts[0].class, VerdictClass::Stalled);
        assert_eq!(verdicts[0].detail, VerdictDetail::Silence(5 * SECOND));
    }

    #[test]
    fn silence_then_clean_resume_is_a_reboot_signature() {
        // Nominal to 5 s, silent 4 periods, clean square wave resumes.
        let mut series = square_wave(0, 500_000_000, 11, Level::High);
        let mut t = 5 * SECOND + 4 * SECOND;
        let mut level = Level::Low;
        while t <= 20 * SECOND {
            series.push(Edge { timestamp: t, level });
            level = level.flip();
            t += 500_000_000;
        }
        let verdicts = classify(&series, &baseline_1s(), 10 * SECOND, 20 * SECOND, &ClassifyParams::default());
        assert_eq!(verdicts[0].class, VerdictClass::RebootSignature);
        assert_eq!(verdicts[0].detail, VerdictDetail::Silence(4 * SECOND));
        assert_eq!(verdicts[1].class, VerdictClass::Normal);
    }

    #[test]
    fn stall_and_reboot_are_mutually_exclusive_per_window() {
        // Same prefix as the reboot test but the resumption is erratic, so
        // the long gap must classify as a stall, never both.
        let mut series = square_wave(0, 500_000_000, 11, Level::High);
        let mut t = 5 * SECOND + 4 * SECOND;
        let mut level = Level::Low;
        let mut k = 0;
        while t <= 20 * SECOND {
            series.push(Edge { timestamp: t, level });
            level = level.flip();
            t += if k % 2 == 0 { 250_000_000 } else { 900_000_000 };
            k += 1;
        }
        let verdicts = classify(&series, &baseline_1s(), 10 * SECOND, 20 * SECOND, &ClassifyParams::default());
        assert_eq!(verdicts[0].class, VerdictClass::Stalled);
    }

    #[test]
    fn translation_and_scale_leave_classes_unchanged() {
        let baseline = baseline_1s();
        let params = ClassifyParams::default();
        let mut series = square_wave(0, 500_000_000, 11, Level::High);
        series.push(Edge { timestamp: 5 * SECOND + 2_500_000_000, level: Level::Low });
        series.push(Edge { timestamp: 5 * SECOND + 3 * SECOND, level: Level::High });
        series.push(Edge { timestamp: 5 * SECOND + 3_500_000_000, level: Level::Low });
        let reference: Vec<VerdictClass> =
            classify(&series, &baseline, 10 * SECOND, 10 * SECOND, &params)
                .iter()
                .map(|v| v.class)
                .collect();

        // Translate by a constant.
        let shifted = EdgeSeries {
            edges: series
                .edges
                .iter()
                .map(|e| Edge { timestamp: e.timestamp + 123_456_789, level: e.level })
                .collect(),
            rejected: 0,
        };
        let got: Vec<VerdictClass> =
            classify(&shifted, &baseline, 10 * SECOND, 10 * SECOND + 123_456_789, &params)
                .iter()
                .map(|v| v.class)
                .collect();
        assert_eq!(got, reference);

        // Scale timestamps and the baseline period by 3.
        let scaled = EdgeSeries {
            edges: series
                .edges
                .iter()
                .map(|e| Edge { timestamp: e.timestamp * 3, level: e.level })
                .collect(),
            rejected: 0,
        };
        let scaled_baseline = SignalBaseline {
            period: 3 * SECOND,
            ..baseline
        };
        let got: Vec<VerdictClass> =
            classify(&scaled, &scaled_baseline, 30 * SECOND, 30 * SECOND, &params)
                .iter()
                .map(|v| v.class)
                .collect();
        assert_eq!(got, reference);
    }

    #[test]
    fn correlation_attributes_to_latest_preceding_case() {
        let verdicts = vec![Verdict {
            window_start: 10_200,
            window_end: 20_200,
            class: VerdictClass::Stalled,
            detail: VerdictDetail::Silence(9_000),
        }];
        let cases = vec![CaseStamp { case_id: 7, send_time: 10_000 }];
        let attr = correlate(&verdicts, &cases);
        assert_eq!(attr.len(), 1);
        assert_eq!(attr[0].case_id, Some(7));
        assert_eq!(attr[0].ambiguity, None);
    }

    #[test]
    fn anomaly_before_all_cases_is_unattributed() {
        let verdicts = vec![Verdict {
            window_start: 500,
            window_end: 1_500,
            class: VerdictClass::Delayed,
            detail: VerdictDetail::MaxDeviation(0.5),
        }];
        let cases = vec![CaseStamp { case_id: 0, send_time: 1_000 }];
        let attr = correlate(&verdicts, &cases);
        assert_eq!(attr[0].case_id, None);
    }

    #[test]
    fn two_close_cases_record_an_ambiguity_window() {
        let verdicts = vec![Verdict {
            window_start: 200_000_000,
            window_end: 1_200_000_000,
            class: VerdictClass::Stalled,
            detail: VerdictDetail::Silence(900_000_000),
        }];
        let cases = vec![
            CaseStamp { case_id: 1, send_time: 100_000_000 },
            CaseStamp { case_id: 2, send_time: 150_000_000 },
        ];
        let attr = correlate(&verdicts, &cases);
        assert_eq!(attr[0].case_id, Some(2));
        assert_eq!(attr[0].ambiguity, Some(50_000_000));
    }

    #[test]
    fn classification_is_deterministic() {
        let series = square_wave(0, 500_000_000, 41, Level::High);
        let a = classify(&series, &baseline_1s(), 10 * SECOND, 20 * SECOND, &ClassifyParams::default());
        let b = classify(&series, &baseline_1s(), 10 * SECOND, 20 * SECOND, &ClassifyParams::default());
        assert_eq!(a, b);
    }
}
