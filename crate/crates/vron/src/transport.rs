//! Message links between stages. A link is a one-way, ordered stream of
//! framed wire messages; dropping the sending end closes it.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread::{self, JoinHandle};

use vron_core::tamper::Interceptor;
use vron_core::wire::{parse_header, wire_decode, wire_encode, WireError, WireMessage, HEADER_LEN};

/// In-flight window of a link, in messages.
pub const WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transport {
    InProcess,
    Tcp,
}

impl Transport {
    pub fn name(self) -> &'static str {
        match self {
            Transport::InProcess => "local",
            Transport::Tcp => "tcp",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("peer closed the link")]
    Closed,
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("frame carries {0} trailing bytes")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait MessageSink: Send {
    fn send(&mut self, msg: &WireMessage) -> Result<(), TransportError>;
}

pub trait MessageSource: Send {
    /// Next message, or `None` once the sender has closed the link.
    fn recv(&mut self) -> Result<Option<WireMessage>, TransportError>;
}

pub type Sink = Box<dyn MessageSink>;
pub type Source = Box<dyn MessageSource>;

struct ChannelSink(SyncSender<Vec<u8>>);
struct ChannelSource(Receiver<Vec<u8>>);

impl MessageSink for ChannelSink {
    fn send(&mut self, msg: &WireMessage) -> Result<(), TransportError> {
        let bytes = wire_encode(msg)?;
        self.0.send(bytes).map_err(|_| TransportError::Closed)
    }
}

impl MessageSource for ChannelSource {
    fn recv(&mut self) -> Result<Option<WireMessage>, TransportError> {
        let Ok(bytes) = self.0.recv() else {
            return Ok(None);
        };
        let (msg, used) = wire_decode(&bytes)?;
        if used != bytes.len() {
            return Err(TransportError::TrailingBytes(bytes.len() - used));
        }
        Ok(Some(msg))
    }
}

pub struct TcpSink(TcpStream);
pub struct TcpSource(TcpStream);

impl TcpSink {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let s = TcpStream::connect(addr)?;
        s.set_nodelay(true)?;
        Ok(Self(s))
    }

    pub fn from_stream(s: TcpStream) -> Self {
        Self(s)
    }
}

impl TcpSource {
    pub fn from_stream(s: TcpStream) -> Self {
        Self(s)
    }

    /// Accepts one connection on `listener`.
    pub fn accept(listener: &TcpListener) -> io::Result<Self> {
        Ok(Self(listener.accept()?.0))
    }
}

impl MessageSink for TcpSink {
    fn send(&mut self, msg: &WireMessage) -> Result<(), TransportError> {
        let bytes = wire_encode(msg)?;
        self.0.write_all(&bytes)?;
        Ok(())
    }
}

impl Drop for TcpSink {
    fn drop(&mut self) {
        let _ = self.0.shutdown(std::net::Shutdown::Write);
    }
}

impl MessageSource for TcpSource {
    fn recv(&mut self) -> Result<Option<WireMessage>, TransportError> {
        let mut header = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match self.0.read(&mut header[got..])? {
                0 if got == 0 => return Ok(None),
                0 => {
                    return Err(WireError::Truncated {
                        needed: HEADER_LEN,
                        available: got,
                    }
                    .into())
                }
                n => got += n,
            }
        }
        let (msg_type, len) = parse_header(&header)?;
        let mut payload = vec![0u8; len];
        let mut got = 0;
        while got < len {
            match self.0.read(&mut payload[got..])? {
                0 => {
                    return Err(WireError::Truncated {
                        needed: HEADER_LEN + len,
                        available: HEADER_LEN + got,
                    }
                    .into())
                }
                n => got += n,
            }
        }
        Ok(Some(WireMessage::new(msg_type, payload)))
    }
}

/// Creates a connected link over `transport`. TCP links use a fresh
/// loopback connection.
pub fn link(transport: Transport) -> io::Result<(Sink, Source)> {
    match transport {
        Transport::InProcess => {
            let (tx, rx) = sync_channel(WINDOW);
            Ok((Box::new(ChannelSink(tx)), Box::new(ChannelSource(rx))))
        }
        Transport::Tcp => {
            let listener = TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0)))?;
            let sink = TcpSink::connect(listener.local_addr()?)?;
            let source = TcpSource::accept(&listener)?;
            Ok((Box::new(sink), Box::new(source)))
        }
    }
}

/// Forwards every message from `from` to `to` through `icpt`, then closes
/// `to`. Returns the number of messages forwarded.
pub fn relay(mut from: Source, mut to: Sink, mut icpt: Box<dyn Interceptor>) -> JoinHandle<usize> {
    thread::spawn(move || {
        let mut out = Vec::new();
        let mut sent = 0;
        // an unreadable stream ends the hop; receivers see it closed
        while let Ok(Some(m)) = from.recv() {
            icpt.on_message(m, &mut out);
            for m in out.drain(..) {
                if to.send(&m).is_err() {
                    return sent;
                }
                sent += 1;
            }
        }
        icpt.on_end(&mut out);
        for m in out.drain(..) {
            if to.send(&m).is_err() {
                break;
            }
            sent += 1;
        }
        sent
    })
}
