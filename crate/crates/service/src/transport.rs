//! Length-prefixed JSON over TCP, and the same payloads over WebSocket.
//!
//! A TCP frame is a 4-byte big-endian payload length followed by that many
//! bytes of UTF-8 JSON.

use crate::protocol::{EventEnvelope, Reply, Request, ServerMessage};
use crate::service::Service;
use crate::ServiceError;
use crossbeam_channel::{select, unbounded, RecvTimeoutError};
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

pub const MAX_FRAME: usize = 16 << 20;
const WS_POLL: Duration = Duration::from_millis(10);

pub fn write_frame(w: &mut impl Write, payload: &str) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload.as_bytes())?;
    w.flush()
}

/// `Ok(None)` on a clean end of stream before a frame starts.
pub fn read_frame(r: &mut impl Read) -> Result<Option<String>, ServiceError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(ServiceError::Protocol(format!("frame of {n} bytes exceeds {MAX_FRAME}")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map(Some).map_err(|_| ServiceError::Protocol("frame is not UTF-8".into()))
}

/// Serves one TCP client until it disconnects or falls too far behind on
/// events.
pub fn serve_tcp_connection(service: Arc<Service>, stream: TcpStream) -> Result<(), ServiceError> {
    let sub = service.subscribe();
    let sub_id = sub.id;
    let (reply_tx, reply_rx) = unbounded::<String>();
    let mut writer = stream.try_clone()?;
    let writer_thread = thread::spawn(move || {
        loop {
            let msg = select! {
                recv(reply_rx) -> m => match m { Ok(m) => m, Err(_) => break },
                recv(sub.events) -> e => match e { Ok(e) => e.to_json(), Err(_) => break },
            };
            if write_frame(&mut writer, &msg).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
    });
    let mut reader = stream;
    let result = loop {
        match read_frame(&mut reader) {
            Ok(Some(text)) => {
                if reply_tx.send(service.handle_text(&text).to_json()).is_err() {
                    break Ok(());
                }
            }
            Ok(None) => break Ok(()),
            Err(ServiceError::Protocol(m)) => {
                let _ = reply_tx.send(Reply::err(None, "protocol", m.clone()).to_json());
                break Err(ServiceError::Protocol(m));
            }
            Err(e) => break Err(e),
        }
    };
    drop(reply_tx);
    service.bus().unsubscribe(sub_id);
    let _ = writer_thread.join();
    result
}

/// Accepts TCP clients until `stop` is set, one thread per client.
pub fn serve_tcp(service: Arc<Service>, listener: TcpListener, stop: Arc<AtomicBool>) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                let svc = service.clone();
                thread::spawn(move || serve_tcp_connection(svc, stream));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(WS_POLL),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn ws_would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

/// Serves one WebSocket client: each text message is a request, replies
/// and events go back as text messages.
pub fn serve_ws_connection(service: Arc<Service>, stream: TcpStream) -> Result<(), ServiceError> {
    let mut ws = tungstenite::accept(stream).map_err(|e| ServiceError::Protocol(format!("websocket handshake: {e}")))?;
    ws.get_ref().set_read_timeout(Some(WS_POLL))?;
    let sub = service.subscribe();
    let result = loop {
        match ws.read() {
            Ok(tungstenite::Message::Text(t)) => {
                let reply = service.handle_text(&t).to_json();
                if let Err(e) = ws.send(tungstenite::Message::Text(reply)) {
                    break Err(ServiceError::WebSocket(e.to_string()));
                }
            }
            Ok(tungstenite::Message::Close(_)) => break Ok(()),
            Ok(_) => {}
            Err(e) if ws_would_block(&e) => {}
            Err(tungstenite::Error::ConnectionClosed) | Err(tungstenite::Error::AlreadyClosed) => break Ok(()),
            Err(e) => break Err(ServiceError::WebSocket(e.to_string())),
        }
        let mut gone = false;
        loop {
            match sub.events.try_recv() {
                Ok(ev) => {
                    if let Err(e) = ws.send(tungstenite::Message::Text(ev.to_json())) {
                        if !ws_would_block(&e) {
                            gone = true;
                            break;
                        }
                    }
                }
                Err(crossbeam_channel::TryRecvError::Empty) => break,
                Err(crossbeam_channel::TryRecvError::Disconnected) => {
                    gone = true;
                    break;
                }
            }
        }
        if gone {
            let _ = ws.close(None);
            break Ok(());
        }
    };
    service.bus().unsubscribe(sub.id);
    result
}

pub fn serve_ws(service: Arc<Service>, listener: TcpListener, stop: Arc<AtomicBool>) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                let svc = service.clone();
                thread::spawn(move || serve_ws_connection(svc, stream));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(WS_POLL),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Blocking TCP client that buffers events while waiting for replies.
pub struct TcpClient {
    writer: TcpStream,
    incoming: crossbeam_channel::Receiver<ServerMessage>,
    events: Vec<EventEnvelope>,
    next_id: u64,
}

impl TcpClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ServiceError> {
        let stream = TcpStream::connect(addr)?;
        let mut reader = stream.try_clone()?;
        let (tx, rx) = unbounded();
        thread::spawn(move || {
            while let Ok(Some(text)) = read_frame(&mut reader) {
                match ServerMessage::parse(&text) {
                    Ok(m) => {
                        if tx.send(m).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(TcpClient { writer: stream, incoming: rx, events: Vec::new(), next_id: 1 })
    }

    pub fn send_raw(&mut self, text: &str) -> Result<(), ServiceError> {
        Ok(write_frame(&mut self.writer, text)?)
    }

    /// Sends `req` and waits for the reply with its id.
    pub fn request(&mut self, req: &Request, timeout: Duration) -> Result<Reply, ServiceError> {
        self.send_raw(&req.to_json())?;
        self.wait_reply(Some(&req.id), timeout)
    }

    pub fn call(&mut self, cmd: crate::protocol::Command, timeout: Duration) -> Result<Reply, ServiceError> {
        let id = format!("c{}", self.next_id);
        self.next_id += 1;
        self.request(&Request::new(id, cmd), timeout)
    }

    pub fn wait_reply(&mut self, id: Option<&str>, timeout: Duration) -> Result<Reply, ServiceError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.incoming.recv_timeout(left) {
                Ok(ServerMessage::Reply(r)) if id.is_none() || r.id.as_deref() == id => return Ok(r),
                Ok(ServerMessage::Reply(_)) => {}
                Ok(ServerMessage::Event(e)) => self.events.push(e),
                Err(RecvTimeoutError::Timeout) => return Err(ServiceError::Timeout),
                Err(RecvTimeoutError::Disconnected) => return Err(ServiceError::Disconnected),
            }
        }
    }

    /// Next event, buffered or fresh.
    pub fn next_event(&mut self, timeout: Duration) -> Result<EventEnvelope, ServiceError> {
        if !self.events.is_empty() {
            return Ok(self.events.remove(0));
        }
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.incoming.recv_timeout(left) {
                Ok(ServerMessage::Event(e)) => return Ok(e),
                Ok(ServerMessage::Reply(_)) => {}
                Err(RecvTimeoutError::Timeout) => return Err(ServiceError::Timeout),
                Err(RecvTimeoutError::Disconnected) => return Err(ServiceError::Disconnected),
            }
        }
    }
}
