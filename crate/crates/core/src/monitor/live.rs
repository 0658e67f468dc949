//! Live edge ingestion and incremental window classification.
//!
//! Feeds deliver parsed edges from an in-process tap, a TCP connection to
//! the device's scope port, or a listening socket an adapter pushes to.
//! The [`WindowClassifier`] wraps the pure [`classify`](super::classify)
//! pass and only releases a window's verdict once enough signal exists
//! after it that no later edge can change it, so verdicts are emitted in
//! window order and never retracted.

use std::io::BufReader;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc;
use std::time::Duration;

use super::{classify, ClassifyParams, Edge, EdgeSeries, SignalBaseline, Verdict};
use crate::clock::Nanos;

/// A non-blocking source of newly observed edges.
pub trait EdgeFeed: Send {
    fn poll(&mut self) -> Vec<Edge>;
}

/// Edge feed fed by any `mpsc` sender, e.g. a mock device tap.
pub struct ChannelEdgeFeed {
    rx: mpsc::Receiver<Edge>,
}

impl ChannelEdgeFeed {
    pub fn new(rx: mpsc::Receiver<Edge>) -> Self {
        Self { rx }
    }
}

impl EdgeFeed for ChannelEdgeFeed {
    fn poll(&mut self) -> Vec<Edge> {
        let mut out = Vec::new();
        while let Ok(e) = self.rx.try_recv() {
            out.push(e);
        }
        out
    }
}

/// Edge feed reading the wire format from a TCP connection to the edge
/// source (the device's scope port). A background thread parses records
/// as they arrive; malformed lines are dropped here and alternation is
/// enforced downstream by the classifier's series.
pub struct TcpEdgeFeed {
    inner: ChannelEdgeFeed,
}

impl TcpEdgeFeed {
    pub fn connect(addr: SocketAddr, timeout: Duration) -> std::io::Result<Self> {
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        Ok(Self::from_stream(stream))
    }

    pub fn from_stream(stream: TcpStream) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            use std::io::BufRead;
            let reader = BufReader::new(stream);
            for line in reader.lines() {
                let Ok(line) = line else { break };
                if let Some(edge) = Edge::parse_record(&line) {
                    if tx.send(edge).is_err() {
                        break;
                    }
                }
            }
        });
        Self {
            inner: ChannelEdgeFeed::new(rx),
        }
    }
}

impl EdgeFeed for TcpEdgeFeed {
    fn poll(&mut self) -> Vec<Edge> {
        self.inner.poll()
    }
}

/// Listening-socket ingestion: an external adapter connects and pushes
/// edge records.
pub struct EdgeListener {
    listener: TcpListener,
}

impl EdgeListener {
    pub fn bind(addr: SocketAddr) -> std::io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accept one connection and ingest its whole stream.
    pub fn accept_and_ingest(&self) -> std::io::Result<EdgeSeries> {
        let (stream, _) = self.listener.accept()?;
        Ok(super::ingest_edges(BufReader::new(stream)))
    }

    /// Accept one connection and return it as a live feed.
    pub fn accept_feed(&self) -> std::io::Result<TcpEdgeFeed> {
        let (stream, _) = self.listener.accept()?;
        Ok(TcpEdgeFeed::from_stream(stream))
    }
}

/// Edges required past a window's end before its verdict is final: enough
/// to resolve any gap starting inside the window (the landing edge plus
/// the two intervals of the clean-resumption check).
const STABILITY_EDGES: usize = 3;

/// Incremental classifier emitting verdicts in window order.
pub struct WindowClassifier {
    baseline: SignalBaseline,
    window: Nanos,
    params: ClassifyParams,
    series: EdgeSeries,
    emitted: usize,
    finished: bool,
}

impl WindowClassifier {
    pub fn new(baseline: SignalBaseline, window: Nanos, params: ClassifyParams) -> Self {
        Self {
            baseline,
            window,
            params,
            series: EdgeSeries::new(),
            emitted: 0,
            finished: false,
        }
    }

    pub fn baseline(&self) -> &SignalBaseline {
        &self.baseline
    }

    pub fn window(&self) -> Nanos {
        self.window
    }

    pub fn series(&self) -> &EdgeSeries {
        &self.series
    }

    pub fn push_edges(&mut self, edges: impl IntoIterator<Item = Edge>) {
        for e in edges {
            self.series.push(e);
        }
    }

    /// Start of the tumbling-window grid (the first edge's timestamp).
    pub fn grid_origin(&self) -> Option<Nanos> {
        self.series.edges.first().map(|e| e.timestamp)
    }

    /// The next window boundary at or after `t`; boundaries are where a
    /// sender should place actions it wants attributed to the following
    /// window.
    pub fn next_boundary(&self, t: Nanos) -> Option<Nanos> {
        let t0 = self.grid_origin()?;
        if t <= t0 {
            return Some(t0);
        }
        let k = (t - t0).div_ceil(self.window);
        Some(t0 + k * self.window)
    }

    /// Emit verdicts for every window that is complete and can no longer
    /// change, given signal observed up to `observed_until`.
    pub fn drain_ready(&mut self, observed_until: Nanos) -> Vec<Verdict> {
        if self.finished {
            return Vec::new();
        }
        let Some(t0) = self.grid_origin() else {
            return Vec::new();
        };
        let all = classify(
            &self.series,
            &self.baseline,
            self.window,
            observed_until,
            &self.params,
        );
        let mut out = Vec::new();
        while self.emitted < all.len() {
            let end = t0 + (self.emitted as u64 + 1) * self.window;
            if end > observed_until {
                break;
            }
            let tail_edges = self
                .series
                .edges
                .iter()
                .rev()
                .take_while(|e| e.timestamp >= end)
                .count();
            if tail_edges < STABILITY_EDGES {
                break;
            }
            out.push(all[self.emitted]);
            self.emitted += 1;
        }
        out
    }

    /// Final classification: observation ended at `end_time`, emit all
    /// remaining windows.
    pub fn finish(&mut self, end_time: Nanos) -> Vec<Verdict> {
        if self.finished {
            return Vec::new();
        }
        self.finished = true;
        let all = classify(
            &self.series,
            &self.baseline,
            self.window,
            end_time,
            &self.params,
        );
        let out = all.get(self.emitted..).map(<[Verdict]>::to_vec).unwrap_or_default();
        self.emitted = all.len();
        out
    }
}
