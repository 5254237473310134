use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info};

use super::wire::{read_frame, write_frame};
use super::{tags, Institution, Message, MessageKind, Transport};
use crate::error::{Error, Result};

type Inbound = (usize, Result<Message>);

/// Center-side socket transport: one TCP stream per worker, with a reader
/// thread per stream feeding a shared channel so replies can arrive
/// concurrently.
pub struct SocketTransport {
    writers: Vec<BufWriter<TcpStream>>,
    rx: Receiver<Inbound>,
    readers: Vec<JoinHandle<()>>,
}

impl SocketTransport {
    /// Connects to every worker endpoint; the worker id is the position in
    /// `endpoints`.
    pub fn connect<A: ToSocketAddrs>(endpoints: &[A]) -> Result<Self> {
        let (tx, rx) = mpsc::channel();
        let mut writers = Vec::with_capacity(endpoints.len());
        let mut readers = Vec::with_capacity(endpoints.len());
        for (w, ep) in endpoints.iter().enumerate() {
            let stream = TcpStream::connect(ep)
                .map_err(|e| Error::Protocol(format!("cannot reach worker {w}: {e}")))?;
            stream.set_nodelay(true)?;
            let read_half = stream.try_clone()?;
            let tx = tx.clone();
            readers.push(thread::spawn(move || {
                let mut r = BufReader::new(read_half);
                loop {
                    match read_frame(&mut r) {
                        Ok(Some(m)) => {
                            if tx.send((w, Ok(m))).is_err() {
                                break;
                            }
                        }
                        Ok(None) => break,
                        Err(e) => {
                            let _ = tx.send((w, Err(e)));
                            break;
                        }
                    }
                }
            }));
            writers.push(BufWriter::new(stream));
        }
        Ok(Self {
            writers,
            rx,
            readers,
        })
    }
}

impl Transport for SocketTransport {
    fn worker_count(&self) -> usize {
        self.writers.len()
    }

    fn send(&mut self, worker: usize, msg: &Message) -> Result<()> {
        let w = self
            .writers
            .get_mut(worker)
            .ok_or_else(|| Error::Protocol(format!("no worker {worker}")))?;
        write_frame(w, msg).map_err(|e| Error::Protocol(format!("send to worker {worker}: {e}")))
    }

    fn receive(&mut self, timeout: Option<Duration>) -> Result<Option<(usize, Message)>> {
        let next = match timeout {
            Some(t) => self.rx.recv_timeout(t),
            None => self.rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
        };
        match next {
            Ok((w, Ok(m))) => Ok(Some((w, m))),
            Ok((w, Err(e))) => Err(Error::Protocol(format!("worker {w}: {e}"))),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::Protocol("all worker connections closed".into()))
            }
        }
    }
}

impl Drop for SocketTransport {
    fn drop(&mut self) {
        for w in &self.writers {
            let _ = w.get_ref().shutdown(Shutdown::Both);
        }
        for h in self.readers.drain(..) {
            let _ = h.join();
        }
    }
}

/// Serves one institution over TCP until a shutdown broadcast arrives.
///
/// Connections are handled one at a time; every new connection starts a
/// fresh session (the institution is reset).
pub fn serve_worker(listener: TcpListener, mut institution: Institution) -> Result<()> {
    info!(
        "worker for shard {} listening on {}",
        institution.shard_id(),
        listener.local_addr()?
    );
    for conn in listener.incoming() {
        let stream = conn?;
        stream.set_nodelay(true)?;
        debug!("session from {:?}", stream.peer_addr());
        institution.handle(&Message::new(0, MessageKind::Broadcast, tags::RESET, Vec::new()));
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = BufWriter::new(stream);
        loop {
            let msg = match read_frame(&mut reader) {
                Ok(Some(m)) => m,
                Ok(None) => break,
                Err(e) => {
                    debug!("session ended: {e}");
                    break;
                }
            };
            if let Some(reply) = institution.handle(&msg) {
                write_frame(&mut writer, &reply)?;
            }
            if institution.shutdown_requested() {
                return Ok(());
            }
        }
    }
    Ok(())
}

/// A worker served from a background thread on a loopback port.
pub struct WorkerServer {
    addr: SocketAddr,
    handle: Option<JoinHandle<Result<()>>>,
}

impl WorkerServer {
    pub fn spawn(institution: Institution) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let handle = thread::spawn(move || serve_worker(listener, institution));
        Ok(Self {
            addr,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Waits for the server thread after a shutdown broadcast.
    pub fn join(mut self) -> Result<()> {
        match self.handle.take().map(JoinHandle::join) {
            Some(Ok(r)) => r,
            Some(Err(_)) => Err(Error::Protocol("worker thread panicked".into())),
            None => Ok(()),
        }
    }
}
