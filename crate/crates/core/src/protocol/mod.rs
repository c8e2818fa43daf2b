//! Topic-based publish/subscribe between the server and the application
//! instances.
//!
//! Topics have the form `margot/<app>/<channel>[/<client_id>]`. Every
//! payload starts with a line naming its schema and version, e.g.
//! `knobtune/welcome/1`, followed by the channel body.
//!
//! Two transports implement [`Connector`]: an in-process [`Broker`] for
//! tests and simulations, and a TCP broker ([`TcpBroker`]) speaking
//! length-prefixed frames.

mod broker;
mod tcp;

use std::fmt;
use std::time::Duration;

use crossbeam_channel::Receiver;
use thiserror::Error;

pub use broker::Broker;
pub use tcp::{TcpBroker, TcpConnector, TcpLink, BROKER_ENV, DEFAULT_PORT};

/// Largest payload accepted in a frame.
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;
/// Largest topic accepted in a frame.
pub const MAX_TOPIC: usize = 64 * 1024;
pub const TOPIC_ROOT: &str = "margot";
/// Control topics understood by the TCP broker.
pub const SUBSCRIBE_TOPIC: &str = "$sub";
pub const UNSUBSCRIBE_TOPIC: &str = "$unsub";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("payload of {0} bytes exceeds the 16 MiB limit")]
    Oversize(usize),
    #[error("frame truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} is not valid UTF-8")]
    Utf8(&'static str),
    #[error("malformed topic {0:?}")]
    Topic(String),
    #[error("malformed {channel} payload: {reason}")]
    Payload { channel: &'static str, reason: String },
    #[error("broker unavailable")]
    Unavailable,
    #[error("link closed")]
    Closed,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        ProtocolError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub topic: String,
    pub payload: String,
}

impl Message {
    pub fn new(topic: impl Into<String>, payload: impl Into<String>) -> Self {
        Self {
            topic: topic.into(),
            payload: payload.into(),
        }
    }
}

/// 4-byte big-endian topic length, topic, 4-byte big-endian payload
/// length, payload.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    if msg.payload.len() > MAX_PAYLOAD {
        return Err(ProtocolError::Oversize(msg.payload.len()));
    }
    if msg.topic.len() > MAX_TOPIC {
        return Err(ProtocolError::Topic(msg.topic.chars().take(64).collect()));
    }
    let mut out = Vec::with_capacity(8 + msg.topic.len() + msg.payload.len());
    out.extend_from_slice(&(msg.topic.len() as u32).to_be_bytes());
    out.extend_from_slice(msg.topic.as_bytes());
    out.extend_from_slice(&(msg.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(msg.payload.as_bytes());
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: usize, len: usize) -> Result<&'a [u8], ProtocolError> {
    bytes.get(at..at + len).ok_or(ProtocolError::Truncated {
        needed: at + len,
        available: bytes.len(),
    })
}

fn length(bytes: &[u8], at: usize) -> Result<usize, ProtocolError> {
    let raw = take(bytes, at, 4)?;
    Ok(u32::from_be_bytes([raw[0], raw[1], raw[2], raw[3]]) as usize)
}

/// Decodes one frame from the front of `bytes`, returning the message and
/// the number of bytes consumed.
pub fn decode_message(bytes: &[u8]) -> Result<(Message, usize), ProtocolError> {
    let topic_len = length(bytes, 0)?;
    if topic_len > MAX_TOPIC {
        return Err(ProtocolError::Topic(format!("<{topic_len} bytes>")));
    }
    let topic = take(bytes, 4, topic_len)?;
    let payload_len = length(bytes, 4 + topic_len)?;
    if payload_len > MAX_PAYLOAD {
        return Err(ProtocolError::Oversize(payload_len));
    }
    let payload = take(bytes, 8 + topic_len, payload_len)?;
    let topic = std::str::from_utf8(topic).map_err(|_| ProtocolError::Utf8("topic"))?;
    let payload = std::str::from_utf8(payload).map_err(|_| ProtocolError::Utf8("payload"))?;
    Ok((Message::new(topic, payload), 8 + topic_len + payload_len))
}

/// `+` matches exactly one segment; all other segments match literally.
pub fn topic_matches(pattern: &str, topic: &str) -> bool {
    let mut p = pattern.split('/');
    let mut t = topic.split('/');
    loop {
        match (p.next(), t.next()) {
            (None, None) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            _ => return false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Welcome,
    InfoRequest,
    InfoReply,
    Explore,
    Observation,
    Knowledge,
    Bye,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::Welcome,
        Channel::InfoRequest,
        Channel::InfoReply,
        Channel::Explore,
        Channel::Observation,
        Channel::Knowledge,
        Channel::Bye,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Welcome => "welcome",
            Channel::InfoRequest => "info_request",
            Channel::InfoReply => "info_reply",
            Channel::Explore => "explore",
            Channel::Observation => "observation",
            Channel::Knowledge => "knowledge",
            Channel::Bye => "bye",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// First payload line of this channel.
    pub fn schema(self) -> String {
        format!("knobtune/{}/1", self.name())
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A parsed topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topic {
    pub app: String,
    pub channel: Channel,
    pub client_id: Option<String>,
}

impl Topic {
    pub fn new(app: &str, channel: Channel, client_id: Option<&str>) -> Self {
        Self {
            app: app.into(),
            channel,
            client_id: client_id.map(Into::into),
        }
    }

    pub fn parse(topic: &str) -> Result<Self, ProtocolError> {
        let bad = || ProtocolError::Topic(topic.into());
        let parts: Vec<&str> = topic.split('/').collect();
        if !(3..=4).contains(&parts.len()) || parts[0] != TOPIC_ROOT {
            return Err(bad());
        }
        if parts.iter().any(|p| p.is_empty() || *p == "+") {
            return Err(bad());
        }
        Ok(Self {
            app: parts[1].into(),
            channel: Channel::parse(parts[2]).ok_or_else(bad)?,
            client_id: parts.get(3).map(|s| s.to_string()),
        })
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{TOPIC_ROOT}/{}/{}", self.app, self.channel)?;
        if let Some(c) = &self.client_id {
            write!(f, "/{c}")?;
        }
        Ok(())
    }
}

/// `margot/<app>/<channel>[/<client_id>]`.
pub fn topic(app: &str, channel: Channel, client_id: Option<&str>) -> String {
    Topic::new(app, channel, client_id).to_string()
}

/// Prefixes `body` with the channel's schema line.
pub fn payload(channel: Channel, body: &str) -> String {
    let mut out = channel.schema();
    out.push('\n');
    out.push_str(body);
    out
}

/// Strips and checks the schema line, returning the body.
pub fn payload_body(channel: Channel, payload: &str) -> Result<&str, ProtocolError> {
    let (head, body) = payload.split_once('\n').unwrap_or((payload, ""));
    if head != channel.schema() {
        return Err(ProtocolError::Payload {
            channel: channel.name(),
            reason: format!("unexpected schema line {head:?}"),
        });
    }
    Ok(body)
}

/// What a client says on the welcome channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Greeting {
    Hello,
    Heartbeat,
}

/// Body of a welcome payload: `<incarnation>,hello|heartbeat`. The
/// incarnation changes whenever a client restarts, so the server can tell a
/// rejoin from a repeated greeting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Welcome {
    pub incarnation: u64,
    pub greeting: Greeting,
}

impl Welcome {
    pub fn encode(&self) -> String {
        let kind = match self.greeting {
            Greeting::Hello => "hello",
            Greeting::Heartbeat => "heartbeat",
        };
        payload(Channel::Welcome, &format!("{},{kind}", self.incarnation))
    }

    pub fn decode(text: &str) -> Result<Self, ProtocolError> {
        let body = payload_body(Channel::Welcome, text)?;
        let bad = || ProtocolError::Payload {
            channel: "welcome",
            reason: format!("{body:?}"),
        };
        let (inc, kind) = body.trim().split_once(',').ok_or_else(bad)?;
        Ok(Self {
            incarnation: inc.parse().map_err(|_| bad())?,
            greeting: match kind {
                "hello" => Greeting::Hello,
                "heartbeat" => Greeting::Heartbeat,
                _ => return Err(bad()),
            },
        })
    }
}

/// A connection to a broker.
pub trait Link: Send + Sync {
    fn subscribe(&self, pattern: &str) -> Result<(), ProtocolError>;
    fn unsubscribe(&self, pattern: &str) -> Result<(), ProtocolError>;
    fn publish(&self, msg: Message) -> Result<(), ProtocolError>;
    /// Deliveries for this link, in arrival order.
    fn incoming(&self) -> &Receiver<Message>;
    /// Drops every subscription and disconnects.
    fn close(&self);

    fn recv_timeout(&self, timeout: Duration) -> Option<Message> {
        self.incoming().recv_timeout(timeout).ok()
    }
}

/// Opens links to a broker.
pub trait Connector: Send + Sync {
    fn connect(&self) -> Result<Box<dyn Link>, ProtocolError>;
}
