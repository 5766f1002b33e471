//! Test double for the external cleaner protocol.
//!
//! Usage: `ttogm-model-stub [MODE] [--tile N] [--pipelined]`, where MODE is
//! one of `echo` (default), `scale:<factor>`, `wall:<value>`, `wrong-size`,
//! `sleep:<seconds>`, `garbage`, `crash`, `refuse`.

use std::io::{self, Read, Write};
use std::process::ExitCode;
use std::time::Duration;

const MAGIC: &[u8; 4] = b"TTOG";
const HANDSHAKE_ID: u32 = u32::MAX;

enum Mode {
    Echo,
    Scale(f32),
    /// Replace occupied-looking values (around 100/255) by a fixed value.
    Wall(f32),
    WrongSize,
    Sleep(f64),
    Garbage,
    Crash,
    Refuse,
}

fn parse_mode(s: &str) -> Option<Mode> {
    let (name, arg) = s.split_once(':').unwrap_or((s, ""));
    Some(match name {
        "echo" => Mode::Echo,
        "scale" => Mode::Scale(arg.parse().ok()?),
        "wall" => Mode::Wall(arg.parse().ok()?),
        "wrong-size" => Mode::WrongSize,
        "sleep" => Mode::Sleep(arg.parse().ok()?),
        "garbage" => Mode::Garbage,
        "crash" => Mode::Crash,
        "refuse" => Mode::Refuse,
        _ => return None,
    })
}

fn read_exact(r: &mut impl Read, n: usize) -> io::Result<Option<Vec<u8>>> {
    let mut buf = vec![0u8; n];
    match r.read_exact(&mut buf) {
        Ok(()) => Ok(Some(buf)),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(None),
        Err(e) => Err(e),
    }
}

fn header(tile: u32, id: u32) -> Vec<u8> {
    let mut h = MAGIC.to_vec();
    h.extend_from_slice(&tile.to_le_bytes());
    h.extend_from_slice(&id.to_le_bytes());
    h
}

fn serve(mode: &Mode, tile_override: Option<u32>, pipelined: bool) -> io::Result<()> {
    let mut input = io::stdin().lock();
    let mut output = io::stdout().lock();
    loop {
        let Some(h) = read_exact(&mut input, 12)? else {
            return Ok(());
        };
        if &h[..4] != MAGIC {
            eprintln!("stub: bad request magic");
            std::process::exit(2);
        }
        let tile = u32::from_le_bytes([h[4], h[5], h[6], h[7]]);
        let id = u32::from_le_bytes([h[8], h[9], h[10], h[11]]);
        if id == HANDSHAKE_ID {
            if let Mode::Refuse = mode {
                eprintln!("stub: refusing to serve");
                std::process::exit(3);
            }
            let mut resp = header(tile_override.unwrap_or(tile), id);
            resp.extend_from_slice(&u32::from(pipelined).to_le_bytes());
            output.write_all(&resp)?;
            output.flush()?;
            continue;
        }
        let n = (tile * tile) as usize;
        let Some(raw) = read_exact(&mut input, n * 4)? else {
            return Ok(());
        };
        let mut values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut side = tile;
        match mode {
            Mode::Echo | Mode::Refuse => {}
            Mode::Scale(f) => values.iter_mut().for_each(|v| *v *= f),
            Mode::Wall(w) => values
                .iter_mut()
                .filter(|v| (**v - 100.0 / 255.0).abs() < 0.01)
                .for_each(|v| *v = *w),
            Mode::WrongSize => {
                side = tile / 2;
                values.truncate((side * side) as usize);
            }
            Mode::Sleep(s) => std::thread::sleep(Duration::from_secs_f64(*s)),
            Mode::Garbage => {
                output.write_all(b"JUNKJUNKJUNK")?;
                output.flush()?;
                continue;
            }
            Mode::Crash => {
                eprintln!("stub: crashing on patch {id}");
                std::process::exit(4);
            }
        }
        let mut resp = header(side, id);
        for v in values {
            resp.extend_from_slice(&v.to_le_bytes());
        }
        output.write_all(&resp)?;
        output.flush()?;
    }
}

fn main() -> ExitCode {
    let mut mode = Mode::Echo;
    let mut tile = None;
    let mut pipelined = false;
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--pipelined" => pipelined = true,
            "--tile" => tile = args.next().and_then(|t| t.parse().ok()),
            other => match parse_mode(other) {
                Some(m) => mode = m,
                None => {
                    eprintln!("stub: unknown mode {other:?}");
                    return ExitCode::from(1);
                }
            },
        }
    }
    match serve(&mode, tile, pipelined) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stub: {e}");
            ExitCode::from(2)
        }
    }
}
