//! Out-of-process denoiser over a framed pipe protocol.
//!
//! Each request and reply is `b"IHPB"`, a `u32` little-endian payload
//! length, an IHIC-encoded array of that many bytes and a `u16`
//! little-endian stage index. The server replies to every request with one
//! frame carrying the same stage index.

use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::Duration;

use ndarray::Ix3;
use serde::{Deserialize, Serialize};

use super::prior::PriorOp;
use crate::cube::{decode_array, encode_array, Cube, Dtype};
use crate::error::PriorError;

pub const FRAME_MAGIC: [u8; 4] = *b"IHPB";
/// Largest payload accepted from a server, 1 GiB.
pub const MAX_PAYLOAD: u32 = 1 << 30;

/// Writes one frame and flushes.
pub fn write_frame(w: &mut impl Write, payload: &[u8], stage: u16) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "payload exceeds u32"))?;
    w.write_all(&FRAME_MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)?;
    w.write_all(&stage.to_le_bytes())?;
    w.flush()
}

/// Reads one frame. Returns `None` on a clean end of stream before the magic.
pub fn read_frame(r: &mut impl Read) -> Result<Option<(Vec<u8>, u16)>, PriorError> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut magic[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(PriorError::Protocol("stream ended inside the magic".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if magic != FRAME_MAGIC {
        return Err(PriorError::Protocol(format!("bad frame magic {magic:?}")));
    }
    let truncated = |e: io::Error| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            PriorError::Protocol("truncated frame".into())
        } else {
            PriorError::Transport(e)
        }
    };
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(truncated)?;
    let len = u32::from_le_bytes(len);
    if len > MAX_PAYLOAD {
        return Err(PriorError::Protocol(format!("payload length {len} exceeds limit")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(truncated)?;
    let mut stage = [0u8; 2];
    r.read_exact(&mut stage).map_err(truncated)?;
    Ok(Some((payload, u16::from_le_bytes(stage))))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeConfig {
    pub command: PathBuf,
    pub args: Vec<String>,
    /// Per-request reply deadline.
    pub timeout_ms: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            command: PathBuf::new(),
            args: Vec::new(),
            timeout_ms: 60_000,
        }
    }
}

type Reply = Result<Option<(Vec<u8>, u16)>, PriorError>;

/// A denoiser served by a child process over stdin/stdout.
///
/// One request is in flight at a time. After a timeout or protocol error the
/// child is killed and every later call fails.
pub struct BridgePrior {
    child: Child,
    stdin: Option<ChildStdin>,
    replies: Receiver<Reply>,
    reader: Option<JoinHandle<()>>,
    timeout: Duration,
    broken: bool,
}

impl BridgePrior {
    pub fn spawn(cfg: &BridgeConfig) -> Result<Self, PriorError> {
        let mut child = Command::new(&cfg.command)
            .args(&cfg.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| {
                PriorError::Transport(io::Error::new(
                    e.kind(),
                    format!("{}: {e}", cfg.command.display()),
                ))
            })?;
        let stdin = child.stdin.take();
        let mut stdout = child.stdout.take().expect("stdout piped");
        let (tx, replies) = mpsc::channel();
        let reader = std::thread::spawn(move || loop {
            let frame = read_frame(&mut stdout);
            let stop = !matches!(frame, Ok(Some(_)));
            if tx.send(frame).is_err() || stop {
                break;
            }
        });
        Ok(Self {
            child,
            stdin,
            replies,
            reader: Some(reader),
            timeout: Duration::from_millis(cfg.timeout_ms),
            broken: false,
        })
    }

    fn fail(&mut self, err: PriorError) -> PriorError {
        self.broken = true;
        let _ = self.child.kill();
        err
    }

    fn exchange(&mut self, x: &Cube, stage: u16) -> Result<Cube, PriorError> {
        let payload = encode_array(&x.data().clone().into_dyn(), Dtype::F64)
            .map_err(|e| PriorError::Protocol(format!("encoding request: {e}")))?;
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| PriorError::Protocol("bridge input closed".into()))?;
        write_frame(stdin, &payload, stage)?;
        let (reply, echoed) = match self.replies.recv_timeout(self.timeout) {
            Ok(Ok(Some(frame))) => frame,
            Ok(Ok(None)) => return Err(PriorError::Protocol("server closed the stream".into())),
            Ok(Err(e)) => return Err(e),
            Err(RecvTimeoutError::Timeout) => return Err(PriorError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(PriorError::Protocol("server closed the stream".into()))
            }
        };
        if echoed != stage {
            return Err(PriorError::Protocol(format!(
                "reply for stage {echoed}, expected {stage}"
            )));
        }
        let (array, _) = decode_array(&reply)
            .map_err(|e| PriorError::Protocol(format!("decoding reply: {e}")))?;
        if array.shape() != x.data().shape() {
            return Err(PriorError::ShapeMismatch {
                sent: x.data().shape().to_vec(),
                received: array.shape().to_vec(),
            });
        }
        let data = array.into_dimensionality::<Ix3>().expect("shape checked");
        if data.iter().any(|v| !v.is_finite()) {
            return Err(PriorError::NonFinite);
        }
        Ok(x.with_data(data).expect("same shape"))
    }
}

impl PriorOp for BridgePrior {
    fn denoise(&mut self, x: &Cube, stage: usize) -> Result<Cube, PriorError> {
        if self.broken {
            return Err(PriorError::Protocol("bridge is closed after an earlier failure".into()));
        }
        let stage = u16::try_from(stage)
            .map_err(|_| PriorError::Protocol(format!("stage {stage} exceeds u16")))?;
        self.exchange(x, stage).map_err(|e| match e {
            PriorError::ShapeMismatch { .. } | PriorError::NonFinite => e,
            other => self.fail(other),
        })
    }
}

impl Drop for BridgePrior {
    fn drop(&mut self) {
        // closing stdin asks a well-behaved server to exit
        self.stdin.take();
        if self.broken {
            let _ = self.child.kill();
        }
        let deadline = std::time::Instant::now() + Duration::from_secs(2);
        loop {
            match self.child.try_wait() {
                Ok(Some(_)) | Err(_) => break,
                Ok(None) if std::time::Instant::now() >= deadline => {
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    break;
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            }
        }
        if let Some(handle) = self.reader.take() {
            let _ = handle.join();
        }
    }
}

impl std::fmt::Debug for BridgePrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgePrior")
            .field("pid", &self.child.id())
            .field("timeout", &self.timeout)
            .field("broken", &self.broken)
            .finish()
    }
}
