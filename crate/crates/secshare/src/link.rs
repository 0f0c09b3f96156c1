//! Concrete links: an in-process channel pair and length-prefixed TCP.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;
use std::time::{Duration, Instant};

use secshare_core::transport::Link;
use secshare_core::{Error, Result};

/// Frames larger than this are refused on receipt.
pub const MAX_FRAME: usize = 1 << 30;

/// One end of a bounded in-process channel pair.
pub struct MemLink {
    tx: SyncSender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl MemLink {
    /// Two connected ends; each direction buffers up to `capacity` frames.
    pub fn pair(capacity: usize) -> (MemLink, MemLink) {
        let (tx0, rx1) = sync_channel(capacity);
        let (tx1, rx0) = sync_channel(capacity);
        (MemLink { tx: tx0, rx: rx0 }, MemLink { tx: tx1, rx: rx1 })
    }
}

impl Link for MemLink {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        self.tx.send(frame.to_vec()).map_err(|_| Error::Transport("peer hung up".into()))
    }

    fn flush(&mut self) -> Result<()> {
        Ok(())
    }

    fn recv(&mut self) -> Result<Vec<u8>> {
        self.rx.recv().map_err(|_| Error::Transport("peer hung up".into()))
    }
}

/// Frames as `[u32 LE length][payload]` over a buffered TCP stream.
pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Transport(e.to_string())
}

impl TcpLink {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true).map_err(io_err)?;
        let read_half = stream.try_clone().map_err(io_err)?;
        Ok(TcpLink {
            reader: BufReader::with_capacity(1 << 16, read_half),
            writer: BufWriter::with_capacity(1 << 16, stream),
        })
    }

    /// Accept exactly one peer.
    pub fn listen(addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(io_err)?;
        let (stream, _) = listener.accept().map_err(io_err)?;
        Self::new(stream)
    }

    /// Connect, retrying until `timeout` so both parties may start in any
    /// order.
    pub fn connect(addr: impl ToSocketAddrs + Clone, timeout: Duration) -> Result<Self> {
        let deadline = Instant::now() + timeout;
        loop {
            match TcpStream::connect(addr.clone()) {
                Ok(s) => return Self::new(s),
                Err(e) if Instant::now() >= deadline => return Err(io_err(e)),
                Err(_) => thread::sleep(Duration::from_millis(50)),
            }
        }
    }
}

impl Link for TcpLink {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        let len = u32::try_from(frame.len()).map_err(|_| Error::Transport("frame exceeds 4 GiB".into()))?;
        self.writer.write_all(&len.to_le_bytes()).map_err(io_err)?;
        self.writer.write_all(frame).map_err(io_err)
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(io_err)
    }

    fn recv(&mut self) -> Result<Vec<u8>> {
        let mut len = [0u8; 4];
        self.reader.read_exact(&mut len).map_err(io_err)?;
        let len = u32::from_le_bytes(len) as usize;
        if len > MAX_FRAME {
            return Err(Error::Transport(format!("peer announced a {len}-byte frame")));
        }
        let mut buf = vec![0u8; len];
        self.reader.read_exact(&mut buf).map_err(io_err)?;
        Ok(buf)
    }
}
