//! Denoiser running in another process, reached over TCP.
//!
//! Every request frame gets exactly one reply frame with the same opcode,
//! except `shutdown`, which gets none. A reply with opcode `error` aborts the
//! run. `init` and `advance` are acknowledged with an empty tensor;
//! `predict` and `finalize` are answered with a stack of the initial shape.
//! Stacks travel as `[planes, channels, res, res]` tensors.

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread::JoinHandle;
use std::time::Duration;

use super::wire::{Frame, Opcode, ProtocolError, StepMeta, TensorPayload, PROTOCOL_VERSION};
use super::{check_step, Denoiser};
use crate::error::{Error, Result};
use crate::geometry::TangentLayout;
use crate::io::DType;
use crate::raster::{Raster, TangentStack};

pub const CLIENT_NAME: &str = concat!("omnissr/", env!("CARGO_PKG_VERSION"));

fn stack_dims(stack: &TangentStack) -> Vec<u32> {
    let r = stack.resolution() as u32;
    vec![stack.len() as u32, stack.channels() as u32, r, r]
}

pub fn stack_to_payload(stack: &TangentStack, dtype: DType, meta: StepMeta) -> TensorPayload {
    let mut data = Vec::with_capacity(stack.len() * stack.channels() * stack.resolution().pow(2));
    for img in stack.images() {
        data.extend_from_slice(img.data());
    }
    TensorPayload {
        dims: stack_dims(stack),
        dtype,
        data,
        meta,
    }
}

pub fn payload_to_stack(p: TensorPayload, layout: &TangentLayout) -> Result<TangentStack> {
    let [m, c, h, w] = p.dims[..] else {
        return Err(ProtocolError::Malformed(format!("expected a rank-4 stack, got dims {:?}", p.dims)).into());
    };
    let (m, c, h, w) = (m as usize, c as usize, h as usize, w as usize);
    if m != layout.len() || h != w || w != layout.resolution() || c == 0 {
        return Err(ProtocolError::Malformed(format!(
            "stack dims {:?} do not fit a {}-plane layout at {}",
            p.dims,
            layout.len(),
            layout.resolution()
        ))
        .into());
    }
    let per = c * h * w;
    let images = p
        .data
        .chunks_exact(per)
        .map(|chunk| Raster::from_vec(w, h, c, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    TangentStack::new(layout.clone(), images)
}

#[derive(Debug)]
struct Session {
    layout: TangentLayout,
    dims: Vec<u32>,
    total_steps: u32,
}

/// Client side of the protocol.
#[derive(Debug)]
pub struct ExternalDenoiser {
    endpoint: String,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    dtype: DType,
    peer: String,
    session: Option<Session>,
}

impl ExternalDenoiser {
    /// Connects and performs the hello handshake. `timeout` bounds the
    /// connect and every later read or write.
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self> {
        let addrs: Vec<SocketAddr> = endpoint
            .to_socket_addrs()
            .map_err(|e| Error::Config(format!("bad endpoint {endpoint:?}: {e}")))?
            .collect();
        let mut last = None;
        let mut stream = None;
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last = Some(e),
            }
        }
        let stream = stream.ok_or_else(|| {
            ProtocolError::Connection(last.unwrap_or_else(|| std::io::Error::other("endpoint resolved to nothing")))
        })?;
        let io = |e| Error::from(ProtocolError::Connection(e));
        stream.set_read_timeout(Some(timeout)).map_err(io)?;
        stream.set_write_timeout(Some(timeout)).map_err(io)?;
        stream.set_nodelay(true).map_err(io)?;
        let reader = BufReader::new(stream.try_clone().map_err(io)?);
        let writer = BufWriter::new(stream);
        let mut client = Self {
            endpoint: endpoint.to_string(),
            reader,
            writer,
            dtype: DType::F64,
            peer: String::new(),
            session: None,
        };
        let reply = client.exchange(Frame::new(Opcode::Hello, CLIENT_NAME.as_bytes().to_vec()), Opcode::Hello)?;
        client.peer = reply.text();
        Ok(client)
    }

    /// Sample type used on the wire. F64 keeps the exchange lossless.
    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Name the server sent in its hello.
    pub fn peer(&self) -> &str {
        &self.peer
    }

    fn exchange(&mut self, request: Frame, expected: Opcode) -> Result<Frame> {
        request.write_to(&mut self.writer)?;
        let reply = Frame::read_from(&mut self.reader)?;
        if reply.version != PROTOCOL_VERSION {
            return Err(ProtocolError::VersionMismatch {
                local: PROTOCOL_VERSION,
                remote: reply.version,
            }
            .into());
        }
        match reply.opcode {
            Opcode::Error => Err(ProtocolError::Remote(reply.text()).into()),
            op if op != expected => Err(ProtocolError::Unexpected { expected, got: op }.into()),
            _ => Ok(reply),
        }
    }

    fn session(&self) -> Result<&Session> {
        self.session
            .as_ref()
            .ok_or_else(|| Error::Config("external denoiser used before init".into()))
    }

    fn meta(&self, t: u32) -> Result<StepMeta> {
        let s = self.session()?;
        Ok(StepMeta {
            t,
            total_steps: s.total_steps,
            planes: s.layout.len() as u32,
        })
    }

    fn request_stack(&mut self, op: Opcode, t: u32) -> Result<TangentStack> {
        let meta = self.meta(t)?;
        let reply = self.exchange(Frame::new(op, TensorPayload::empty(meta).encode()), op)?;
        let payload = TensorPayload::decode(&reply.payload)?;
        let s = self.session()?;
        if payload.dims != s.dims {
            return Err(ProtocolError::ShapeMismatch {
                sent: s.dims.clone(),
                received: payload.dims,
            }
            .into());
        }
        payload_to_stack(payload, &s.layout)
    }

    fn send_stack(&mut self, op: Opcode, stack: &TangentStack, meta: StepMeta) -> Result<()> {
        let frame = Frame::new(op, stack_to_payload(stack, self.dtype, meta).encode());
        self.exchange(frame, op).map(drop)
    }
}

impl Denoiser for ExternalDenoiser {
    fn name(&self) -> &str {
        "external"
    }

    fn init(&mut self, stack: &TangentStack, total_steps: u32) -> Result<()> {
        self.session = Some(Session {
            layout: stack.layout().clone(),
            dims: stack_dims(stack),
            total_steps,
        });
        let meta = self.meta(total_steps)?;
        self.send_stack(Opcode::Init, stack, meta)
    }

    fn predict_clean(&mut self, t: u32) -> Result<TangentStack> {
        check_step(t, self.session()?.total_steps)?;
        self.request_stack(Opcode::Predict, t)
    }

    fn advance(&mut self, blended: &TangentStack, t: u32) -> Result<()> {
        check_step(t, self.session()?.total_steps)?;
        if stack_dims(blended) != self.session()?.dims {
            return Err(Error::Config("advance with a stack of a different shape".into()));
        }
        let meta = self.meta(t)?;
        self.send_stack(Opcode::Advance, blended, meta)
    }

    fn finalize(&mut self) -> Result<TangentStack> {
        let out = self.request_stack(Opcode::Finalize, 0)?;
        self.session = None;
        Ok(out)
    }
}

impl Drop for ExternalDenoiser {
    fn drop(&mut self) {
        let _ = Frame::new(Opcode::Shutdown, Vec::new()).write_to(&mut self.writer);
    }
}

/// Reference server that keeps the last stack it was given and hands it
/// back on `predict` and `finalize`. Behaves like the identity denoiser.
pub struct EchoServer {
    addr: SocketAddr,
    handle: JoinHandle<std::result::Result<(), ProtocolError>>,
}

impl EchoServer {
    /// Binds `addr` (port 0 picks a free one) and serves connections one at
    /// a time on a background thread until a client sends `shutdown`.
    pub fn spawn(addr: &str) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(ProtocolError::Connection)?;
        let addr = listener.local_addr().map_err(ProtocolError::Connection)?;
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().map_err(ProtocolError::Connection)?;
            serve_echo(stream)
        });
        Ok(Self { addr, handle })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn join(self) -> std::result::Result<(), ProtocolError> {
        self.handle.join().unwrap_or_else(|_| Err(ProtocolError::Remote("echo server panicked".into())))
    }
}

/// Serves one echo session on `stream` until shutdown or disconnect.
pub fn serve_echo(stream: TcpStream) -> std::result::Result<(), ProtocolError> {
    let mut reader = BufReader::new(stream.try_clone().map_err(ProtocolError::Connection)?);
    let mut writer = BufWriter::new(stream);
    let mut state: Option<TensorPayload> = None;
    loop {
        let frame = match Frame::read_from(&mut reader) {
            Ok(f) => f,
            Err(ProtocolError::Connection(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => {
                let _ = Frame::new(Opcode::Error, e.to_string().into_bytes()).write_to(&mut writer);
                return Err(e);
            }
        };
        if frame.version != PROTOCOL_VERSION {
            let e = ProtocolError::VersionMismatch {
                local: PROTOCOL_VERSION,
                remote: frame.version,
            };
            Frame::new(Opcode::Error, e.to_string().into_bytes()).write_to(&mut writer)?;
            return Err(e);
        }
        let reply = match frame.opcode {
            Opcode::Hello => Frame::new(Opcode::Hello, b"omnissr-echo".to_vec()),
            Opcode::Shutdown => return Ok(()),
            Opcode::Init | Opcode::Advance => {
                let p = TensorPayload::decode(&frame.payload)?;
                let ack = TensorPayload::empty(p.meta).encode();
                state = Some(p);
                Frame::new(frame.opcode, ack)
            }
            Opcode::Predict | Opcode::Finalize => match &state {
                Some(s) => {
                    let req = TensorPayload::decode(&frame.payload)?;
                    let mut out = s.clone();
                    out.meta = req.meta;
                    Frame::new(frame.opcode, out.encode())
                }
                None => Frame::new(Opcode::Error, b"no stack received yet".to_vec()),
            },
            Opcode::Error => return Err(ProtocolError::Remote(frame.text())),
        };
        reply.write_to(&mut writer)?;
    }
}
