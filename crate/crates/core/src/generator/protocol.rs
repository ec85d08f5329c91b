//! Line-delimited JSON wire protocol shared with out-of-process generators.
//!
//! Each request is one line, answered by exactly one response line, in order:
//!
//! ```text
//! {"op":"hello","version":1}                        {"ok":true,"version":1}
//! {"op":"generate","texts":["u ok"],"beam":5}       {"ok":true,"outputs":["you ok"]}
//! {"op":"train","src":["u"],"tgt":["you"]}          {"ok":true,"loss":0.69}
//! {"op":"save","tag":"best"}                        {"ok":true}
//! {"op":"load","tag":"best"}                        {"ok":true}
//!                                                   {"ok":false,"error":"..."}
//! ```
//!
//! `generate` may carry `"sample":true,"seed":N` and `train` may carry a
//! `"weight"` other than 1.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Decoding, Generator, GeneratorError};

pub const PROTOCOL_VERSION: u32 = 1;

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_unit_weight(w: &Option<f64>) -> bool {
    w.map_or(true, |w| w == 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello {
        version: u32,
    },
    Generate {
        texts: Vec<String>,
        beam: usize,
        #[serde(default, skip_serializing_if = "is_false")]
        sample: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Train {
        src: Vec<String>,
        tgt: Vec<String>,
        #[serde(default, skip_serializing_if = "is_unit_weight")]
        weight: Option<f64>,
    },
    Save {
        tag: String,
    },
    Load {
        tag: String,
    },
}

impl Request {
    pub fn generate(texts: &[String], decoding: Decoding) -> Self {
        match decoding {
            Decoding::Beam(beam) => Request::Generate {
                texts: texts.to_vec(),
                beam,
                sample: false,
                seed: None,
            },
            Decoding::Sample { seed } => Request::Generate {
                texts: texts.to_vec(),
                beam: 1,
                sample: true,
                seed: Some(seed),
            },
        }
    }

    pub fn train(src: &[String], tgt: &[String], weight: f64) -> Self {
        Request::Train {
            src: src.to_vec(),
            tgt: tgt.to_vec(),
            weight: Some(weight),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn ok() -> Self {
        Self {
            ok: true,
            ..Self::default()
        }
    }

    pub fn error(msg: impl Into<String>) -> Self {
        Self {
            ok: false,
            error: Some(msg.into()),
            ..Self::default()
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }

    /// Turns `{"ok":false}` into [`GeneratorError::Remote`].
    pub fn into_result(self) -> Result<Self, GeneratorError> {
        if self.ok {
            Ok(self)
        } else {
            Err(GeneratorError::Remote(
                self.error.unwrap_or_else(|| "unspecified error".to_string()),
            ))
        }
    }
}

/// Answers one request against a local generator.
pub fn handle<G: Generator + ?Sized>(gen: &mut G, req: Request) -> Response {
    let result = match req {
        Request::Hello { version } if version == PROTOCOL_VERSION => Ok(Response {
            version: Some(PROTOCOL_VERSION),
            ..Response::ok()
        }),
        Request::Hello { version } => Err(GeneratorError::Protocol(format!(
            "unsupported protocol version {version}"
        ))),
        Request::Generate {
            texts,
            beam,
            sample,
            seed,
        } => {
            let out = if sample {
                gen.decode(&texts, Decoding::Sample { seed: seed.unwrap_or(0) })
            } else {
                gen.generate(&texts, beam)
            };
            out.map(|o| Response {
                outputs: Some(o),
                ..Response::ok()
            })
        }
        Request::Train { src, tgt, weight } => gen
            .train_weighted(&src, &tgt, weight.unwrap_or(1.0))
            .map(|l| Response {
                loss: Some(l),
                ..Response::ok()
            }),
        Request::Save { tag } => gen.save(&tag).map(|_| Response::ok()),
        Request::Load { tag } => gen.load(&tag).map(|_| Response::ok()),
    };
    result.unwrap_or_else(|e| Response::error(e.to_string()))
}

/// Serves requests line by line until EOF. Malformed lines get an error
/// response; blank lines are ignored.
pub fn serve<G, R, W>(gen: &mut G, reader: R, mut writer: W) -> std::io::Result<()>
where
    G: Generator + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => handle(gen, req),
            Err(e) => Response::error(format!("bad request: {e}")),
        };
        writeln!(writer, "{}", resp.to_line())?;
        writer.flush()?;
    }
    Ok(())
}
