use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;

use crossbeam_channel::{unbounded, Receiver, Sender};
use log::{debug, warn};
use parking_lot::Mutex;

use super::{
    encode_message, Broker, Connector, Link, Message, ProtocolError, MAX_PAYLOAD, MAX_TOPIC,
    SUBSCRIBE_TOPIC, UNSUBSCRIBE_TOPIC,
};

pub const DEFAULT_PORT: u16 = 1887;
/// Environment variable overriding the broker address used by
/// [`TcpConnector::from_env`].
pub const BROKER_ENV: &str = "KNOBTUNE_BROKER";

fn read_len(r: &mut impl Read) -> io::Result<Option<usize>> {
    let mut buf = [0u8; 4];
    match r.read_exact(&mut buf) {
        Ok(()) => Ok(Some(u32::from_be_bytes(buf) as usize)),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(None),
        Err(e) => Err(e),
    }
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub(crate) fn read_frame(r: &mut impl Read) -> Result<Option<Message>, ProtocolError> {
    let Some(topic_len) = read_len(r)? else {
        return Ok(None);
    };
    if topic_len > MAX_TOPIC {
        return Err(ProtocolError::Topic(format!("<{topic_len} bytes>")));
    }
    let mut topic = vec![0; topic_len];
    r.read_exact(&mut topic)?;
    let payload_len = read_len(r)?.ok_or(ProtocolError::Truncated {
        needed: 4,
        available: 0,
    })?;
    if payload_len > MAX_PAYLOAD {
        return Err(ProtocolError::Oversize(payload_len));
    }
    let mut payload = vec![0; payload_len];
    r.read_exact(&mut payload)?;
    let topic = String::from_utf8(topic).map_err(|_| ProtocolError::Utf8("topic"))?;
    let payload = String::from_utf8(payload).map_err(|_| ProtocolError::Utf8("payload"))?;
    Ok(Some(Message { topic, payload }))
}

fn write_frame(w: &mut impl Write, msg: &Message) -> Result<(), ProtocolError> {
    w.write_all(&encode_message(msg)?)?;
    w.flush()?;
    Ok(())
}

/// A TCP front end for an in-process [`Broker`].
///
/// Clients send frames; a frame on `$sub` or `$unsub` carries a topic
/// pattern in its payload, every other frame is published.
pub struct TcpBroker {
    broker: Broker,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
}

impl TcpBroker {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self, ProtocolError> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let broker = Broker::new();
        let stop = Arc::new(AtomicBool::new(false));
        let (b, s) = (broker.clone(), stop.clone());
        thread::Builder::new()
            .name("broker-accept".into())
            .spawn(move || accept_loop(listener, b, s))?;
        Ok(Self { broker, addr, stop })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// The broker behind the socket, e.g. to attach in-process links.
    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn connector(&self) -> TcpConnector {
        TcpConnector::new(self.addr)
    }

    pub fn shutdown(&self) {
        if !self.stop.swap(true, Ordering::AcqRel) {
            let _ = TcpStream::connect(self.addr);
        }
    }
}

impl Drop for TcpBroker {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, broker: Broker, stop: Arc<AtomicBool>) {
    for stream in listener.incoming() {
        if stop.load(Ordering::Acquire) {
            break;
        }
        match stream {
            Ok(stream) => {
                let broker = broker.clone();
                let spawned = thread::Builder::new()
                    .name("broker-conn".into())
                    .spawn(move || serve_connection(stream, broker));
                if let Err(e) = spawned {
                    warn!("cannot spawn connection thread: {e}");
                }
            }
            Err(e) => warn!("accept failed: {e}"),
        }
    }
}

fn serve_connection(stream: TcpStream, broker: Broker) {
    let peer = stream.peer_addr().ok();
    let link: Arc<dyn Link> = match broker.connect() {
        Ok(l) => Arc::from(l),
        Err(e) => {
            debug!("refusing {peer:?}: {e}");
            return;
        }
    };
    let Ok(out) = stream.try_clone() else { return };
    let writer_link = link.clone();
    let writer = thread::spawn(move || {
        let mut out = BufWriter::new(out);
        while let Ok(msg) = writer_link.incoming().recv() {
            if write_frame(&mut out, &msg).is_err() {
                break;
            }
        }
        let _ = out.get_ref().shutdown(Shutdown::Both);
    });
    let mut input = BufReader::new(&stream);
    loop {
        let msg = match read_frame(&mut input) {
            Ok(Some(m)) => m,
            Ok(None) => break,
            Err(e) => {
                debug!("dropping {peer:?}: {e}");
                break;
            }
        };
        let result = match msg.topic.as_str() {
            SUBSCRIBE_TOPIC => link.subscribe(&msg.payload),
            UNSUBSCRIBE_TOPIC => link.unsubscribe(&msg.payload),
            _ => link.publish(msg),
        };
        if let Err(e) = result {
            debug!("{peer:?}: {e}");
        }
    }
    link.close();
    let _ = stream.shutdown(Shutdown::Both);
    let _ = writer.join();
}

/// Opens [`TcpLink`]s to a [`TcpBroker`].
#[derive(Debug, Clone)]
pub struct TcpConnector {
    addr: String,
}

impl TcpConnector {
    pub fn new(addr: impl ToString) -> Self {
        Self {
            addr: addr.to_string(),
        }
    }

    /// Uses `KNOBTUNE_BROKER` when set, else `127.0.0.1:1887`.
    pub fn from_env() -> Self {
        match std::env::var(BROKER_ENV) {
            Ok(addr) if !addr.is_empty() => Self::new(addr),
            _ => Self::new(format!("127.0.0.1:{DEFAULT_PORT}")),
        }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }
}

impl Connector for TcpConnector {
    fn connect(&self) -> Result<Box<dyn Link>, ProtocolError> {
        let stream = TcpStream::connect(&self.addr).map_err(|_| ProtocolError::Unavailable)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let (tx, rx) = unbounded();
        thread::Builder::new()
            .name("tcp-link".into())
            .spawn(move || read_loop(reader, tx))?;
        Ok(Box::new(TcpLink {
            stream: Mutex::new(stream),
            rx,
            closed: AtomicBool::new(false),
        }))
    }
}

fn read_loop(stream: TcpStream, tx: Sender<Message>) {
    let mut input = BufReader::new(stream);
    while let Ok(Some(msg)) = read_frame(&mut input) {
        if tx.send(msg).is_err() {
            break;
        }
    }
}

/// A client connection. Its incoming channel disconnects when the broker
/// goes away.
pub struct TcpLink {
    stream: Mutex<TcpStream>,
    rx: Receiver<Message>,
    closed: AtomicBool,
}

impl TcpLink {
    fn send(&self, msg: &Message) -> Result<(), ProtocolError> {
        if self.closed.load(Ordering::Acquire) {
            return Err(ProtocolError::Closed);
        }
        write_frame(&mut *self.stream.lock(), msg).map_err(|e| match e {
            ProtocolError::Io(_) => ProtocolError::Unavailable,
            other => other,
        })
    }
}

impl Link for TcpLink {
    fn subscribe(&self, pattern: &str) -> Result<(), ProtocolError> {
        self.send(&Message::new(SUBSCRIBE_TOPIC, pattern))
    }

    fn unsubscribe(&self, pattern: &str) -> Result<(), ProtocolError> {
        self.send(&Message::new(UNSUBSCRIBE_TOPIC, pattern))
    }

    fn publish(&self, msg: Message) -> Result<(), ProtocolError> {
        self.send(&msg)
    }

    fn incoming(&self) -> &Receiver<Message> {
        &self.rx
    }

    fn close(&self) {
        if !self.closed.swap(true, Ordering::AcqRel) {
            let _ = self.stream.lock().shutdown(Shutdown::Both);
        }
    }
}

impl Drop for TcpLink {
    fn drop(&mut self) {
        self.close();
    }
}
