//! External cleaning models behind a length-prefixed stdin/stdout protocol.
//!
//! Every message starts with a 12-byte header: the magic `TTOG`, the tile size
//! `T` and a patch id, both little-endian `u32`. A request carries `T * T`
//! little-endian `f32` values after the header and the response mirrors it.
//! The handshake is a bare header with id [`HANDSHAKE_ID`]; its response is the
//! header followed by a `u32` flag word ([`PIPELINING`] lets the caller send
//! several patches before reading the answers).

use std::ffi::OsString;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::{PatchCleaner, TilePatch};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"TTOG";
pub const HANDSHAKE_ID: u32 = u32::MAX;
/// Handshake flag: the model accepts queued requests.
pub const PIPELINING: u32 = 1;

/// Tiles larger than this are rejected as corrupt headers.
const MAX_TILE: u32 = 8192;

/// Adapter run by `python3 -c` for `.onnx` models: it loads the model with
/// onnxruntime (input `map_in`, output `map_out`, both [1, 1, T, T]) and
/// serves it over the patch protocol.
pub const ONNX_ADAPTER: &str = r#"
import struct, sys
try:
    import numpy as np
    import onnxruntime as ort
except ImportError as e:
    sys.stderr.write("onnx adapter: %s\n" % e)
    sys.exit(3)
sess = ort.InferenceSession(sys.argv[1], providers=["CPUExecutionProvider"])
inp = sess.get_inputs()[0]
fixed = [d for d in inp.shape[2:] if isinstance(d, int)]
rd, wr = sys.stdin.buffer, sys.stdout.buffer
def read_exact(n):
    buf = b""
    while len(buf) < n:
        chunk = rd.read(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf
while True:
    hdr = read_exact(12)
    if hdr is None:
        break
    t, pid = struct.unpack("<II", hdr[4:])
    if pid == 0xFFFFFFFF:
        side = fixed[0] if fixed else t
        wr.write(b"TTOG" + struct.pack("<III", side, pid, 0))
        wr.flush()
        continue
    data = np.frombuffer(read_exact(4 * t * t), dtype="<f4").reshape(1, 1, t, t)
    out = np.ascontiguousarray(sess.run(["map_out"], {inp.name: data})[0], dtype="<f4")
    side = out.shape[-1]
    wr.write(b"TTOG" + struct.pack("<II", side, pid) + out.tobytes())
    wr.flush()
"#;

/// Program and arguments used to start a model process.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCommand {
    pub program: OsString,
    pub args: Vec<OsString>,
}

impl ModelCommand {
    /// `.onnx` files run through [`ONNX_ADAPTER`] with `$TTOGM_PYTHON` (default
    /// `python3`); anything else is executed directly.
    pub fn for_path(path: &Path) -> Self {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("onnx")) {
            let python = std::env::var_os("TTOGM_PYTHON").unwrap_or_else(|| "python3".into());
            Self {
                program: python,
                args: vec!["-c".into(), ONNX_ADAPTER.into(), path.as_os_str().to_owned()],
            }
        } else {
            Self {
                program: path.as_os_str().to_owned(),
                args: Vec::new(),
            }
        }
    }

    pub fn new(program: impl Into<OsString>, args: impl IntoIterator<Item = impl Into<OsString>>) -> Self {
        Self {
            program: program.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug)]
struct Message {
    tile_size: u32,
    patch_id: u32,
    flags: u32,
    values: Vec<f32>,
}

/// A running model process.
pub struct ExternalModel {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    responses: Receiver<Result<Message>>,
    stderr: Arc<Mutex<Vec<u8>>>,
    tile_size: usize,
    timeout: Duration,
    pipelining: bool,
    clamped: usize,
    next_id: u32,
}

fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>> {
    let mut header = [0u8; 12];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(Error::Model(format!("reading model output: {e}"))),
    }
    if header[..4] != MAGIC {
        return Err(Error::MalformedResponse(format!(
            "bad magic {:02x?}",
            &header[..4]
        )));
    }
    let tile_size = u32::from_le_bytes(header[4..8].try_into().unwrap_or_default());
    let patch_id = u32::from_le_bytes(header[8..12].try_into().unwrap_or_default());
    let mut word = [0u8; 4];
    if patch_id == HANDSHAKE_ID {
        r.read_exact(&mut word)
            .map_err(|e| Error::MalformedResponse(format!("truncated handshake: {e}")))?;
        return Ok(Some(Message {
            tile_size,
            patch_id,
            flags: u32::from_le_bytes(word),
            values: Vec::new(),
        }));
    }
    if tile_size == 0 || tile_size > MAX_TILE {
        return Err(Error::MalformedResponse(format!("implausible tile size {tile_size}")));
    }
    let n = (tile_size * tile_size) as usize;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)
        .map_err(|e| Error::MalformedResponse(format!("truncated patch {patch_id}: {e}")))?;
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Some(Message {
        tile_size,
        patch_id,
        flags: 0,
        values,
    }))
}

impl ExternalModel {
    /// Starts the process and completes the handshake.
    pub fn launch(cmd: &ModelCommand, tile_size: usize, timeout: Duration) -> Result<Self> {
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Model(format!("cannot start {:?}: {e}", cmd.program)))?;
        let stdin = child.stdin.take().map(BufWriter::new);
        let mut stdout = BufReader::new(child.stdout.take().ok_or_else(|| Error::Model("no model stdout".into()))?);
        let mut stderr_pipe = child.stderr.take().ok_or_else(|| Error::Model("no model stderr".into()))?;

        let stderr = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = stderr_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                if let Ok(mut s) = sink.lock() {
                    s.extend_from_slice(&buf[..n]);
                }
            }
        });

        let (tx, responses) = mpsc::channel();
        thread::spawn(move || loop {
            match read_message(&mut stdout) {
                Ok(Some(msg)) => {
                    if tx.send(Ok(msg)).is_err() {
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        });

        let mut model = Self {
            child,
            stdin,
            responses,
            stderr,
            tile_size,
            timeout,
            pipelining: false,
            clamped: 0,
            next_id: 0,
        };
        model.handshake()?;
        Ok(model)
    }

    pub fn tile_size(&self) -> usize {
        self.tile_size
    }

    pub fn pipelining(&self) -> bool {
        self.pipelining
    }

    /// Output values clamped into [0, 1] so far.
    pub fn clamped_values(&self) -> usize {
        self.clamped
    }

    fn diagnostics(&mut self) -> String {
        // give the stderr reader a moment to drain after the process exits
        let status = match self.child.try_wait() {
            Ok(Some(s)) => Some(s),
            _ => {
                thread::sleep(Duration::from_millis(50));
                self.child.try_wait().ok().flatten()
            }
        };
        thread::sleep(Duration::from_millis(20));
        let text = self
            .stderr
            .lock()
            .map(|s| String::from_utf8_lossy(&s).trim().to_string())
            .unwrap_or_default();
        let status = status.map_or("still running".to_string(), |s| s.to_string());
        if text.is_empty() {
            format!("model process {status}")
        } else {
            format!("model process {status}: {text}")
        }
    }

    fn send(&mut self, patch_id: u32, values: &[f32]) -> Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Model("model input closed".into()))?;
        let mut buf = Vec::with_capacity(12 + values.len() * 4);
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&(self.tile_size as u32).to_le_bytes());
        buf.extend_from_slice(&patch_id.to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let res = stdin.write_all(&buf).and_then(|_| stdin.flush());
        if let Err(e) = res {
            let diag = self.diagnostics();
            return Err(Error::Model(format!("writing to model: {e}; {diag}")));
        }
        Ok(())
    }

    fn receive(&mut self, patch_id: u32) -> Result<Message> {
        match self.responses.recv_timeout(self.timeout) {
            Ok(Ok(msg)) => Ok(msg),
            Ok(Err(e)) => Err(e),
            Err(RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                self.stdin = None;
                Err(Error::ModelTimeout {
                    patch_id,
                    seconds: self.timeout.as_secs_f64(),
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                let diag = self.diagnostics();
                Err(Error::Model(format!("model exited without answering patch {patch_id}; {diag}")))
            }
        }
    }

    fn handshake(&mut self) -> Result<()> {
        self.send(HANDSHAKE_ID, &[])?;
        let msg = self.receive(HANDSHAKE_ID)?;
        if msg.patch_id != HANDSHAKE_ID {
            return Err(Error::MalformedResponse(format!(
                "expected handshake, got patch id {}",
                msg.patch_id
            )));
        }
        if msg.tile_size as usize != self.tile_size {
            return Err(Error::ShapeMismatch {
                expected: format!("{0}x{0}", self.tile_size),
                got: format!("{0}x{0}", msg.tile_size),
            });
        }
        self.pipelining = msg.flags & PIPELINING != 0;
        log::debug!("model handshake ok, pipelining {}", self.pipelining);
        Ok(())
    }

    fn check(&mut self, msg: Message, expected_id: u32) -> Result<Vec<f32>> {
        if msg.patch_id != expected_id {
            return Err(Error::MalformedResponse(format!(
                "expected patch {expected_id}, got {}",
                msg.patch_id
            )));
        }
        if msg.tile_size as usize != self.tile_size {
            return Err(Error::ShapeMismatch {
                expected: format!("{0}x{0}", self.tile_size),
                got: format!("{0}x{0}", msg.tile_size),
            });
        }
        let mut values = msg.values;
        for v in &mut values {
            if v.is_nan() {
                return Err(Error::MalformedResponse(format!("NaN in patch {expected_id}")));
            }
            if !(0.0..=1.0).contains(v) {
                *v = v.clamp(0.0, 1.0);
                self.clamped += 1;
            }
        }
        Ok(values)
    }

    /// Sends one patch and waits for its answer.
    pub fn run_patch(&mut self, patch: &TilePatch) -> Result<TilePatch> {
        let out = self.clean_patches(vec![patch.clone()])?;
        Ok(out.into_iter().next().unwrap_or_else(|| patch.clone()))
    }
}

impl PatchCleaner for ExternalModel {
    fn clean_patches(&mut self, patches: Vec<TilePatch>) -> Result<Vec<TilePatch>> {
        if let Some(p) = patches.iter().find(|p| p.tile_size != self.tile_size) {
            return Err(Error::ShapeMismatch {
                expected: format!("{0}x{0}", self.tile_size),
                got: format!("{0}x{0}", p.tile_size),
            });
        }
        let before = self.clamped;
        let first_id = self.next_id;
        self.next_id = self.next_id.wrapping_add(patches.len() as u32);
        let id = |i: usize| first_id.wrapping_add(i as u32) % HANDSHAKE_ID;
        let mut out = Vec::with_capacity(patches.len());
        if self.pipelining {
            for (i, p) in patches.iter().enumerate() {
                self.send(id(i), &p.pixels)?;
            }
            for (i, p) in patches.iter().enumerate() {
                let msg = self.receive(id(i))?;
                out.push(p.with_pixels(self.check(msg, id(i))?));
            }
        } else {
            for (i, p) in patches.iter().enumerate() {
                self.send(id(i), &p.pixels)?;
                let msg = self.receive(id(i))?;
                out.push(p.with_pixels(self.check(msg, id(i))?));
            }
        }
        if self.clamped > before {
            log::warn!("model produced {} values outside [0, 1], clamped", self.clamped - before);
        }
        Ok(out)
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        self.stdin = None;
        for _ in 0..20 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
