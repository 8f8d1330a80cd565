//! Minimal prior server for exercising the bridge.
//!
//! Usage: `ihi-prior-echo [echo|wrong-shape|garbage|sleep|wrong-stage]`

use std::io::{self, BufReader, BufWriter, Write};
use std::process::ExitCode;
use std::time::Duration;

use ihi_core::cube::{decode_array, encode_array, Dtype};
use ihi_core::reconstruct::{read_frame, write_frame};
use ndarray::{Axis, Slice};

fn main() -> ExitCode {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "echo".into());
    if !matches!(mode.as_str(), "echo" | "wrong-shape" | "garbage" | "sleep" | "wrong-stage") {
        eprintln!("ihi-prior-echo: unknown mode {mode:?}");
        return ExitCode::from(2);
    }
    let mut input = BufReader::new(io::stdin().lock());
    let mut output = BufWriter::new(io::stdout().lock());
    loop {
        let (payload, stage) = match read_frame(&mut input) {
            Ok(Some(frame)) => frame,
            Ok(None) => return ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("ihi-prior-echo: {e}");
                return ExitCode::FAILURE;
            }
        };
        let result = match mode.as_str() {
            "echo" => write_frame(&mut output, &payload, stage),
            "wrong-stage" => write_frame(&mut output, &payload, stage.wrapping_add(1)),
            "garbage" => output.write_all(b"nope").and_then(|_| output.flush()),
            "sleep" => {
                std::thread::sleep(Duration::from_secs(30));
                write_frame(&mut output, &payload, stage)
            }
            _ => {
                let (array, _) = match decode_array(&payload) {
                    Ok(a) => a,
                    Err(e) => {
                        eprintln!("ihi-prior-echo: {e}");
                        return ExitCode::FAILURE;
                    }
                };
                let last = array.ndim() - 1;
                let keep = array.shape()[last].saturating_sub(1);
                let cut = array.slice_axis(Axis(last), Slice::from(..keep)).to_owned();
                let bytes = encode_array(&cut, Dtype::F64).expect("finite input");
                write_frame(&mut output, &bytes, stage)
            }
        };
        if let Err(e) = result {
            eprintln!("ihi-prior-echo: {e}");
            return ExitCode::FAILURE;
        }
    }
}
