use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::{Ack, Frame, FrameDecoder, Hello, Message, PeerRole, Register};
use crate::engine::{CommandId, EngineInput};

/// Blocking client for the length-prefixed stream socket.
#[derive(Debug)]
pub struct BusClient {
    stream: TcpStream,
    decoder: FrameDecoder,
}

impl BusClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(BusClient {
            stream,
            decoder: FrameDecoder::new(),
        })
    }

    pub fn send(&mut self, message: Message) -> io::Result<()> {
        self.send_frame(&Frame::new(message))
    }

    pub fn send_frame(&mut self, frame: &Frame) -> io::Result<()> {
        let bytes = super::encode_frame(frame).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        self.send_raw(&bytes)
    }

    /// Writes bytes as-is, for exercising the server's decoder.
    pub fn send_raw(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.stream.write_all(bytes)?;
        self.stream.flush()
    }

    /// Sends `hello` then `register`.
    pub fn register(&mut self, id: &str, role: PeerRole) -> io::Result<()> {
        self.send(Message::Hello(Hello {
            client: format!("storysync-client/{id}"),
        }))?;
        self.send(Message::Register(Register {
            id: id.to_string(),
            role,
            capabilities: Vec::new(),
        }))
    }

    pub fn ack(&mut self, command_id: CommandId) -> io::Result<()> {
        self.send(Message::Ack(Ack { command_id }))
    }

    pub fn input(&mut self, input: EngineInput) -> io::Result<()> {
        self.send(Message::OperatorInput(input))
    }

    /// Next frame, or `Ok(None)` if nothing arrived within `timeout`.
    /// A closed connection is `UnexpectedEof`.
    pub fn recv(&mut self, timeout: Duration) -> io::Result<Option<Frame>> {
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; 8192];
        loop {
            match self.decoder.next_frame() {
                Ok(Some(f)) => return Ok(Some(f)),
                Ok(None) => {}
                Err(e) => return Err(io::Error::new(io::ErrorKind::InvalidData, e)),
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.stream.set_read_timeout(Some(left))?;
            match self.stream.read(&mut buf) {
                Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
                Ok(n) => self.decoder.push(&buf[..n]),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Ok(None)
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Receives until a frame matches, discarding the rest.
    pub fn recv_until(&mut self, timeout: Duration, mut pred: impl FnMut(&Frame) -> bool) -> io::Result<Option<Frame>> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            match self.recv(left)? {
                Some(f) if pred(&f) => return Ok(Some(f)),
                Some(_) => {}
                None => return Ok(None),
            }
        }
    }

    pub fn shutdown(&self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}
