//! Loopback/TCP sender and receiver for measuring per-frame delivery delay.
//!
//! Wire format, all integers big-endian:
//!
//! ```text
//! kind u8 | frame_id u32 | ts_us u64 | payload_len u32 | payload
//! ```
//!
//! `kind` is 1 for a frame (payload = container bytes), 2 for an ack and 3
//! for end of session. A frame carries the sender's timestamp taken just
//! before its first byte is written; the ack carries the receiver's timestamp
//! taken when the last byte arrived. Both come from `CLOCK_MONOTONIC`, so
//! on one host `delay = (recv − send) / 1e6` seconds. Across hosts the
//! sender falls back to half the round trip and flags it.
//!
//! The sender is stop-and-wait: frame `t+1` is chosen after the ack for `t`,
//! so the state fed to the policy holds the measured delay of frame `t`.

use std::io::{self, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, EncodedFrame};
use crate::dataset::FrameSet;
use crate::env::{apply_action, Action, NormBounds};
use crate::quality;
use crate::sac::TrainedPolicy;
use crate::traces::ThroughputTrace;

pub const WIRE_HEADER_LEN: usize = 17;
/// Token-bucket refill interval.
pub const PACING_QUANTUM: Duration = Duration::from_millis(10);
/// Upper bound on a single payload.
pub const MAX_PAYLOAD: u32 = 64 << 20;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("empty delay log")]
    EmptyLog,
    #[error("policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageKind {
    Frame = 1,
    Ack = 2,
    End = 3,
}

impl TryFrom<u8> for MessageKind {
    type Error = StreamError;

    fn try_from(v: u8) -> Result<Self, StreamError> {
        match v {
            1 => Ok(MessageKind::Frame),
            2 => Ok(MessageKind::Ack),
            3 => Ok(MessageKind::End),
            k => Err(StreamError::Protocol(format!("unknown message kind {k}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub kind: MessageKind,
    pub frame_id: u32,
    pub ts_us: u64,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn frame(frame_id: u32, ts_us: u64, payload: Vec<u8>) -> Self {
        WireMessage { kind: MessageKind::Frame, frame_id, ts_us, payload }
    }

    pub fn ack(frame_id: u32, ts_us: u64) -> Self {
        WireMessage { kind: MessageKind::Ack, frame_id, ts_us, payload: Vec::new() }
    }

    pub fn end(frame_id: u32, ts_us: u64) -> Self {
        WireMessage { kind: MessageKind::End, frame_id, ts_us, payload: Vec::new() }
    }

    pub fn header(&self) -> [u8; WIRE_HEADER_LEN] {
        let mut h = [0u8; WIRE_HEADER_LEN];
        h[0] = self.kind as u8;
        h[1..5].copy_from_slice(&self.frame_id.to_be_bytes());
        h[5..13].copy_from_slice(&self.ts_us.to_be_bytes());
        h[13..17].copy_from_slice(&(self.payload.len() as u32).to_be_bytes());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(WIRE_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses exactly one message; trailing bytes are an error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StreamError> {
        let mut cur = bytes;
        let msg = Self::read_from(&mut cur)?.ok_or_else(|| StreamError::Protocol("empty input".into()))?;
        if !cur.is_empty() {
            return Err(StreamError::Protocol(format!("{} trailing bytes", cur.len())));
        }
        Ok(msg)
    }

    /// Reads one message. `Ok(None)` on clean EOF before the first byte.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Self>, StreamError> {
        let mut h = [0u8; WIRE_HEADER_LEN];
        let mut got = 0;
        while got < WIRE_HEADER_LEN {
            match r.read(&mut h[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(StreamError::Protocol(format!("truncated header ({got} of {WIRE_HEADER_LEN} bytes)"))),
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let kind = MessageKind::try_from(h[0])?;
        let frame_id = u32::from_be_bytes(h[1..5].try_into().unwrap());
        let ts_us = u64::from_be_bytes(h[5..13].try_into().unwrap());
        let len = u32::from_be_bytes(h[13..17].try_into().unwrap());
        if len > MAX_PAYLOAD {
            return Err(StreamError::Protocol(format!("payload length {len} too large")));
        }
        if kind != MessageKind::Frame && len != 0 {
            return Err(StreamError::Protocol(format!("{kind:?} message with {len}-byte payload")));
        }
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => StreamError::Protocol(format!("truncated payload (expected {len} bytes)")),
            _ => StreamError::Io(e),
        })?;
        Ok(Some(WireMessage { kind, frame_id, ts_us, payload }))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.header())?;
        w.write_all(&self.payload)
    }
}

/// Microseconds on `CLOCK_MONOTONIC`, comparable between processes on one host.
pub fn monotonic_us() -> u64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid out-pointer for the duration of the call.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
    assert_eq!(rc, 0, "clock_gettime(CLOCK_MONOTONIC) failed");
    ts.tv_sec as u64 * 1_000_000 + ts.tv_nsec as u64 / 1_000
}

/// Writes `bytes` at `mbps`, releasing `mbps·quantum` bytes per quantum.
pub fn paced_write<W: Write>(w: &mut W, bytes: &[u8], mbps: f64, quantum: Duration) -> io::Result<()> {
    let per_quantum = ((mbps * 1e6 / 8.0) * quantum.as_secs_f64()).floor().max(1.0) as usize;
    let start = std::time::Instant::now();
    for (k, chunk) in bytes.chunks(per_quantum).enumerate() {
        let due = quantum * k as u32;
        let elapsed = start.elapsed();
        if due > elapsed {
            thread::sleep(due - elapsed);
        }
        w.write_all(chunk)?;
        w.flush()?;
    }
    Ok(())
}

/// One delivered frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRecord {
    pub frame_id: u32,
    pub bytes: u64,
    pub qf: u8,
    pub roi_w: u16,
    pub roi_h: u16,
    pub send_ts_us: u64,
    pub recv_ts_us: u64,
    pub delay_s: f64,
    /// Link rate the frame was paced at; sender side only.
    pub throughput_mbps: Option<f64>,
    /// SSIM of the transmitted encoding; sender side only.
    pub ssim: Option<f64>,
    /// Receiver-side decode failure, if any.
    pub decode_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayMethod {
    /// One-way delay from two readings of one host's monotonic clock.
    OneWaySameHost,
    /// Half the sender-measured round trip.
    HalfRtt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub records: Vec<DelayRecord>,
    pub paced: bool,
    pub method: DelayMethod,
    /// Set when the session ended abnormally; `records` holds what completed.
    pub error: Option<String>,
}

impl SessionLog {
    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<(), StreamError> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(
            w,
            "# delay = first byte sent to last byte received; method={}; paced={}",
            serde_json::to_value(self.method).unwrap().as_str().unwrap(),
            self.paced
        )?;
        if let Some(e) = &self.error {
            writeln!(w, "# error: {e}")?;
        }
        let mut cw = csv::Writer::from_writer(w);
        for r in &self.records {
            cw.serialize(r)?;
        }
        cw.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path, comment: Option<&str>) -> Result<(), StreamError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, comment)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

/// Reads a delay CSV written by [`SessionLog::write_csv`].
pub fn read_delay_csv<R: Read>(r: R) -> Result<Vec<DelayRecord>, StreamError> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    Ok(rd.deserialize().collect::<Result<Vec<DelayRecord>, _>>()?)
}

pub fn bind_receiver<A: ToSocketAddrs>(addr: A) -> io::Result<TcpListener> {
    TcpListener::bind(addr)
}

struct Arrival {
    msg: WireMessage,
    recv_ts_us: u64,
}

/// Accepts one session and serves it to completion. The I/O loop reads and
/// timestamps messages; a worker decodes them and writes the acks.
pub fn serve_receiver(listener: &TcpListener) -> Result<SessionLog, StreamError> {
    let (stream, _) = listener.accept()?;
    stream.set_nodelay(true)?;
    let mut ack_stream = stream.try_clone()?;
    let (tx, rx) = mpsc::channel::<Arrival>();
    let worker = thread::spawn(move || -> (Vec<DelayRecord>, Option<String>) {
        let mut records = Vec::new();
        for a in rx {
            let (qf, roi_w, roi_h, decode_error) = match EncodedFrame::from_bytes(&a.msg.payload)
                .and_then(|ef| codec::decode_frame(&ef).map(|_| ef))
            {
                Ok(ef) => (ef.qf, ef.roi.w as u16, ef.roi.h as u16, None),
                Err(e) => (0, 0, 0, Some(e.to_string())),
            };
            records.push(DelayRecord {
                frame_id: a.msg.frame_id,
                bytes: a.msg.payload.len() as u64,
                qf,
                roi_w,
                roi_h,
                send_ts_us: a.msg.ts_us,
                recv_ts_us: a.recv_ts_us,
                delay_s: a.recv_ts_us.saturating_sub(a.msg.ts_us) as f64 / 1e6,
                throughput_mbps: None,
                ssim: None,
                decode_error,
            });
            if let Err(e) = WireMessage::ack(a.msg.frame_id, a.recv_ts_us).write_to(&mut ack_stream) {
                return (records, Some(format!("ack write failed: {e}")));
            }
        }
        (records, None)
    });

    let mut reader = BufReader::new(stream);
    let mut last_id: Option<u32> = None;
    let mut error = None;
    loop {
        match WireMessage::read_from(&mut reader) {
            Ok(Some(msg)) => {
                let recv_ts_us = monotonic_us();
                match msg.kind {
                    MessageKind::Frame => {
                        if last_id.is_some_and(|l| msg.frame_id <= l) {
                            error = Some(format!("frame id {} not increasing", msg.frame_id));
                            break;
                        }
                        last_id = Some(msg.frame_id);
                        if tx.send(Arrival { msg, recv_ts_us }).is_err() {
                            break;
                        }
                    }
                    MessageKind::End => break,
                    MessageKind::Ack => {
                        error = Some("unexpected ack from sender".into());
                        break;
                    }
                }
            }
            Ok(None) => {
                error = Some("connection closed before end message".into());
                break;
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    drop(tx);
    let (records, werr) = worker.join().map_err(|_| StreamError::Protocol("decode worker panicked".into()))?;
    if error.is_some() {
        let _ = reader.get_ref().shutdown(std::net::Shutdown::Both);
    }
    Ok(SessionLog {
        records,
        paced: false,
        method: DelayMethod::OneWaySameHost,
        error: error.or(werr),
    })
}

/// What the sender uses to choose each frame's action.
#[derive(Debug, Clone)]
pub enum StreamPolicy {
    Trained { policy: Arc<TrainedPolicy>, bounds: NormBounds },
    Fixed(Action),
}

impl StreamPolicy {
    fn choose(&self, delay: f64, quality: f64, throughput: f64) -> Action {
        match self {
            StreamPolicy::Trained { policy, bounds } => {
                Action::from_squashed(&policy.act(&bounds.normalize(delay, quality, throughput)))
            }
            StreamPolicy::Fixed(a) => *a,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SenderOptions {
    pub pace: bool,
    /// Frames to send (cycling the set); `None` sends each frame once.
    pub n_frames: Option<usize>,
    /// First trace sample to use.
    pub trace_offset: usize,
}

impl Default for SenderOptions {
    fn default() -> Self {
        SenderOptions { pace: true, n_frames: None, trace_offset: 0 }
    }
}

/// Session failure with whatever completed before it.
#[derive(Debug, Error)]
#[error("{source} after {} frames", partial.records.len())]
pub struct SessionError {
    #[source]
    pub source: StreamError,
    pub partial: SessionLog,
}

struct EncodeJob {
    frame_index: usize,
    action: Action,
}

struct Encoded {
    bytes: Vec<u8>,
    qf: u8,
    roi_w: u16,
    roi_h: u16,
    ssim: Result<f64, StreamError>,
}

/// Streams frames to `addr`. The initial state matches the environment's
/// bootstrap: frame 0 at its original ROI and QF 100.
pub fn run_sender<A: ToSocketAddrs>(
    addr: A,
    frames: Arc<FrameSet>,
    trace: &ThroughputTrace,
    policy: &StreamPolicy,
    opts: &SenderOptions,
) -> Result<SessionLog, SessionError> {
    let paced = opts.pace;
    let fail = |source: StreamError, records: Vec<DelayRecord>, method| SessionError {
        source,
        partial: SessionLog { records, paced, method, error: None },
    };
    let stream = match TcpStream::connect(addr) {
        Ok(s) => s,
        Err(e) => return Err(fail(e.into(), Vec::new(), DelayMethod::OneWaySameHost)),
    };
    let same_host = match (stream.local_addr(), stream.peer_addr()) {
        (Ok(l), Ok(p)) => is_same_host(&l, &p),
        _ => false,
    };
    let method = if same_host { DelayMethod::OneWaySameHost } else { DelayMethod::HalfRtt };
    if let Err(e) = stream.set_nodelay(true) {
        return Err(fail(e.into(), Vec::new(), method));
    }

    let (job_tx, job_rx) = mpsc::channel::<EncodeJob>();
    let (res_tx, res_rx) = mpsc::channel::<Result<Encoded, StreamError>>();
    let worker_frames = frames.clone();
    let worker = thread::spawn(move || {
        for job in job_rx {
            let f = worker_frames.get(job.frame_index);
            let (roi, qf) = apply_action(f.roi, f.width(), f.height(), job.action);
            let out = codec::encode_frame(f, roi, qf).map_err(StreamError::from).map(|ef| {
                let ssim = codec::decode_frame(&ef)
                    .map_err(StreamError::from)
                    .and_then(|d| quality::ssim_frames(f, &d).map_err(|e| StreamError::Protocol(e.to_string())))
                    .map(|r| r.mean_ssim);
                Encoded { bytes: ef.to_bytes(), qf, roi_w: roi.w as u16, roi_h: roi.h as u16, ssim }
            });
            if res_tx.send(out).is_err() {
                break;
            }
        }
    });

    let mut records = Vec::new();
    let result = (|| -> Result<(), StreamError> {
        let mut writer = io::BufWriter::new(stream.try_clone()?);
        let mut reader = BufReader::new(stream.try_clone()?);
        let encode = |frame_index, action| -> Result<Encoded, StreamError> {
            job_tx.send(EncodeJob { frame_index, action }).map_err(|_| StreamError::Protocol("encoder stopped".into()))?;
            res_rx.recv().map_err(|_| StreamError::Protocol("encoder stopped".into()))?
        };
        let boot = encode(0, Action::new(0.0, 0.0, 1.0))?;
        let t0 = trace.at(opts.trace_offset);
        let mut delay = boot.bytes.len() as f64 * 8.0 / (t0 * 1e6);
        let mut quality = boot.ssim?;
        let n = opts.n_frames.unwrap_or(frames.len());
        for t in 0..n {
            let throughput = trace.at(opts.trace_offset + t);
            let action = policy.choose(delay, quality, throughput);
            let enc = encode(t % frames.len(), action)?;
            let ssim = enc.ssim?;
            let frame_id = t as u32;
            let send_ts_us = monotonic_us();
            let msg = WireMessage::frame(frame_id, send_ts_us, enc.bytes);
            if paced {
                paced_write(&mut writer, &msg.to_bytes(), throughput, PACING_QUANTUM)?;
            } else {
                msg.write_to(&mut writer)?;
                writer.flush()?;
            }
            let ack = WireMessage::read_from(&mut reader)?
                .ok_or_else(|| StreamError::Protocol("connection closed while waiting for ack".into()))?;
            let ack_ts = monotonic_us();
            if ack.kind != MessageKind::Ack || ack.frame_id != frame_id {
                return Err(StreamError::Protocol(format!(
                    "expected ack for frame {frame_id}, got {:?} {}",
                    ack.kind, ack.frame_id
                )));
            }
            let (recv_ts_us, delay_s) = match method {
                DelayMethod::OneWaySameHost => (ack.ts_us, ack.ts_us.saturating_sub(send_ts_us) as f64 / 1e6),
                DelayMethod::HalfRtt => (ack.ts_us, (ack_ts - send_ts_us) as f64 / 2e6),
            };
            records.push(DelayRecord {
                frame_id,
                bytes: msg.payload.len() as u64,
                qf: enc.qf,
                roi_w: enc.roi_w,
                roi_h: enc.roi_h,
                send_ts_us,
                recv_ts_us,
                delay_s,
                throughput_mbps: Some(throughput),
                ssim: Some(ssim),
                decode_error: None,
            });
            delay = delay_s;
            quality = ssim;
        }
        WireMessage::end(n as u32, monotonic_us()).write_to(&mut writer)?;
        writer.flush()?;
        Ok(())
    })();
    drop(job_tx);
    let _ = worker.join();
    match result {
        Ok(()) => Ok(SessionLog { records, paced, method, error: None }),
        Err(e) => Err(fail(e, records, method)),
    }
}

fn is_same_host(a: &SocketAddr, b: &SocketAddr) -> bool {
    a.ip() == b.ip() || (a.ip().is_loopback() && b.ip().is_loopback())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySummary {
    pub frames: usize,
    pub mean_delay_s: f64,
    pub median_delay_s: f64,
    pub p95_delay_s: f64,
    pub mean_ssim: Option<f64>,
    pub baseline_mean_delay_s: Option<f64>,
    /// Positive when the log is faster than the baseline.
    pub reduction_pct: Option<f64>,
}

impl DelaySummary {
    /// e.g. `13.0% reduction`.
    pub fn reduction_text(&self) -> Option<String> {
        self.reduction_pct.map(|p| {
            if p >= 0.0 {
                format!("{p:.1}% reduction")
            } else {
                format!("{:.1}% increase", -p)
            }
        })
    }
}

/// `(baseline − x) / baseline · 100`.
pub fn percent_reduction(baseline: f64, x: f64) -> f64 {
    (baseline - x) / baseline * 100.0
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn summarize(log: &[DelayRecord], baseline: Option<&[DelayRecord]>) -> Result<DelaySummary, StreamError> {
    if log.is_empty() || baseline.is_some_and(|b| b.is_empty()) {
        return Err(StreamError::EmptyLog);
    }
    let mut d: Vec<f64> = log.iter().map(|r| r.delay_s).collect();
    let m = mean(&d);
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    let ssims: Vec<f64> = log.iter().filter_map(|r| r.ssim).collect();
    let base = baseline.map(|b| mean(&b.iter().map(|r| r.delay_s).collect::<Vec<_>>()));
    Ok(DelaySummary {
        frames: n,
        mean_delay_s: m,
        median_delay_s: median,
        p95_delay_s: d[rank - 1],
        mean_ssim: (!ssims.is_empty()).then(|| mean(&ssims)),
        baseline_mean_delay_s: base,
        reduction_pct: base.map(|b| percent_reduction(b, m)),
    })
}
