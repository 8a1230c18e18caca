//! Byte-stream transports with serial-line timing: each byte occupies the
//! line for `10 / baud` seconds (8N1), and bytes arrive only once fully
//! clocked out.

use std::collections::VecDeque;
use std::io::{ErrorKind, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

pub const DEFAULT_BAUD: u32 = 9600;

/// Line time of one byte at `baud` with start and stop bits.
pub fn byte_time(baud: u32) -> Duration {
    Duration::from_secs_f64(10.0 / baud as f64)
}

pub trait Transport: Send {
    fn send(&mut self, bytes: &[u8]) -> Result<()>;

    /// Append whatever arrives within `timeout`; `Ok(0)` on a quiet line,
    /// `Err` once the peer is gone.
    fn recv_timeout(&mut self, buf: &mut Vec<u8>, timeout: Duration) -> Result<usize>;

    /// Per-byte line time, `None` when unthrottled.
    fn byte_time(&self) -> Option<Duration>;
}

type Chunk = (Instant, Vec<u8>);

/// Sender half of a throttled line; schedules arrival times.
#[derive(Debug)]
struct LineTx {
    tx: Sender<Chunk>,
    line_free: Instant,
    byte_time: Option<Duration>,
}

impl LineTx {
    fn send(&mut self, bytes: &[u8]) -> Result<()> {
        let now = Instant::now();
        let due = match self.byte_time {
            Some(bt) => {
                let start = self.line_free.max(now);
                start + bt * bytes.len() as u32
            }
            None => now,
        };
        self.line_free = due;
        self.tx
            .send((due, bytes.to_vec()))
            .map_err(|_| Error::Io("peer closed the line".into()))
    }
}

#[derive(Debug)]
struct LineRx {
    rx: Receiver<Chunk>,
    pending: VecDeque<Chunk>,
    closed: bool,
}

impl LineRx {
    fn recv_timeout(&mut self, buf: &mut Vec<u8>, timeout: Duration) -> Result<usize> {
        let deadline = Instant::now() + timeout;
        loop {
            while let Ok(c) = self.rx.try_recv() {
                self.pending.push_back(c);
            }
            let now = Instant::now();
            let mut got = 0;
            while self.pending.front().is_some_and(|(due, _)| *due <= now) {
                let (_, bytes) = self.pending.pop_front().expect("front checked");
                got += bytes.len();
                buf.extend_from_slice(&bytes);
            }
            if got > 0 {
                return Ok(got);
            }
            if now >= deadline {
                return Ok(0);
            }
            let wake = match self.pending.front() {
                Some((due, _)) => (*due).min(deadline),
                None => deadline,
            };
            if self.pending.is_empty() && !self.closed {
                match self.rx.recv_timeout(wake - now) {
                    Ok(c) => self.pending.push_back(c),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => self.closed = true,
                }
            } else if self.pending.is_empty() {
                return Err(Error::Io("peer closed the line".into()));
            } else {
                thread::sleep(wake.saturating_duration_since(now));
            }
        }
    }
}

/// One end of an in-process full-duplex line.
#[derive(Debug)]
pub struct PipeEnd {
    tx: LineTx,
    rx: LineRx,
}

/// Connected pair of line ends; `baud = None` disables throttling.
pub fn pipe_pair(baud: Option<u32>) -> (PipeEnd, PipeEnd) {
    let bt = baud.map(byte_time);
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    let now = Instant::now();
    let end = |tx, rx| PipeEnd {
        tx: LineTx {
            tx,
            line_free: now,
            byte_time: bt,
        },
        rx: LineRx {
            rx,
            pending: VecDeque::new(),
            closed: false,
        },
    };
    (end(tx_a, rx_a), end(tx_b, rx_b))
}

impl Transport for PipeEnd {
    fn send(&mut self, bytes: &[u8]) -> Result<()> {
        self.tx.send(bytes)
    }

    fn recv_timeout(&mut self, buf: &mut Vec<u8>, timeout: Duration) -> Result<usize> {
        self.rx.recv_timeout(buf, timeout)
    }

    fn byte_time(&self) -> Option<Duration> {
        self.tx.byte_time
    }
}

/// Socket binding. Outgoing bytes are released to the socket by a writer
/// thread once their line time has elapsed.
pub struct TcpTransport {
    tx: LineTx,
    stream: TcpStream,
    writer: Option<thread::JoinHandle<()>>,
}

impl TcpTransport {
    pub fn new(stream: TcpStream, baud: Option<u32>) -> Result<Self> {
        stream.set_nodelay(true)?;
        let mut out = stream.try_clone()?;
        let (tx, rx) = mpsc::channel::<Chunk>();
        let writer = thread::spawn(move || {
            while let Ok((due, bytes)) = rx.recv() {
                let now = Instant::now();
                if due > now {
                    thread::sleep(due - now);
                }
                if out.write_all(&bytes).is_err() {
                    break;
                }
            }
        });
        Ok(TcpTransport {
            tx: LineTx {
                tx,
                line_free: Instant::now(),
                byte_time: baud.map(byte_time),
            },
            stream,
            writer: Some(writer),
        })
    }

    pub fn connect(addr: &str, baud: Option<u32>) -> Result<Self> {
        TcpTransport::new(TcpStream::connect(addr)?, baud)
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        // closing the channel ends the writer after it flushes queued bytes
        let (dead, _) = mpsc::channel();
        self.tx.tx = dead;
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, bytes: &[u8]) -> Result<()> {
        self.tx.send(bytes)
    }

    fn recv_timeout(&mut self, buf: &mut Vec<u8>, timeout: Duration) -> Result<usize> {
        let timeout = timeout.max(Duration::from_micros(100));
        self.stream.set_read_timeout(Some(timeout))?;
        let mut tmp = [0u8; 256];
        match self.stream.read(&mut tmp) {
            Ok(0) => Err(Error::Io("peer closed the connection".into())),
            Ok(n) => {
                buf.extend_from_slice(&tmp[..n]);
                Ok(n)
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(0),
            Err(e) => Err(e.into()),
        }
    }

    fn byte_time(&self) -> Option<Duration> {
        self.tx.byte_time
    }
}
