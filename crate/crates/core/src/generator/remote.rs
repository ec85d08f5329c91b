use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use log::warn;

use super::protocol::{Request, Response, PROTOCOL_VERSION};
use super::{check_batch, Decoding, Generator, GeneratorError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

/// How to reach a model server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    /// Spawn a child and speak over its stdin/stdout.
    Child { program: String, args: Vec<String> },
    /// Connect to `host:port`.
    Tcp(String),
}

impl Transport {
    /// Splits a command line on whitespace.
    pub fn command(cmd: &str) -> Result<Self, GeneratorError> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| GeneratorError::Protocol("empty generator command".into()))?;
        Ok(Transport::Child {
            program,
            args: parts.collect(),
        })
    }
}

struct Connection {
    child: Option<Child>,
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
}

impl Connection {
    fn open(transport: &Transport, timeout: Duration) -> Result<Self, GeneratorError> {
        let (child, writer, reader): (_, Box<dyn Write + Send>, Box<dyn Read + Send>) = match transport {
            Transport::Child { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Some(child), Box::new(stdin), Box::new(stdout))
            }
            Transport::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()?
                    .next()
                    .ok_or_else(|| GeneratorError::Protocol(format!("cannot resolve {addr}")))?;
                let stream = TcpStream::connect_timeout(&sock, timeout)?;
                let read_half = stream.try_clone()?;
                (None, Box::new(stream), Box::new(read_half))
            }
        };
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            writer,
            lines: rx,
        })
    }

    fn roundtrip(&mut self, req: &Request, timeout: Duration) -> Result<Response, GeneratorError> {
        let sent = writeln!(self.writer, "{}", req.to_line()).and_then(|_| self.writer.flush());
        match sent {
            Err(e) if matches!(e.kind(), io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset) => {
                return Err(GeneratorError::Protocol("server closed the connection".into()))
            }
            other => other?,
        }
        let line = match self.lines.recv_timeout(timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => return Err(GeneratorError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(GeneratorError::Protocol("server closed the connection".into()))
            }
        };
        serde_json::from_str(&line).map_err(|e| GeneratorError::Protocol(format!("bad response `{line}`: {e}")))
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Client for a generator running in another process.
///
/// Requests are strictly sequential. If the server dies or stops answering,
/// the client restarts it once, reloads the last saved checkpoint and retries
/// the request; a second failure is returned to the caller.
pub struct RemoteGenerator {
    transport: Transport,
    timeout: Duration,
    conn: Option<Connection>,
    last_checkpoint: Option<String>,
    restarted: bool,
    snapshot: bool,
}

impl RemoteGenerator {
    /// Connects and performs the version handshake.
    pub fn connect(transport: Transport, timeout: Duration) -> Result<Self, GeneratorError> {
        let mut g = Self {
            transport,
            timeout,
            conn: None,
            last_checkpoint: None,
            restarted: false,
            snapshot: false,
        };
        g.open()?;
        Ok(g)
    }

    pub fn restarted(&self) -> bool {
        self.restarted
    }

    fn open(&mut self) -> Result<(), GeneratorError> {
        self.conn = None;
        let mut conn = Connection::open(&self.transport, self.timeout)?;
        let resp = conn
            .roundtrip(&Request::Hello { version: PROTOCOL_VERSION }, self.timeout)?
            .into_result()?;
        if resp.version != Some(PROTOCOL_VERSION) {
            return Err(GeneratorError::Protocol(format!(
                "server speaks version {:?}, expected {PROTOCOL_VERSION}",
                resp.version
            )));
        }
        self.conn = Some(conn);
        Ok(())
    }

    fn restart(&mut self) -> Result<(), GeneratorError> {
        self.restarted = true;
        warn!("restarting remote generator");
        self.open()?;
        if let Some(tag) = self.last_checkpoint.clone() {
            self.send(&Request::Load { tag })?.into_result()?;
        }
        Ok(())
    }

    fn send(&mut self, req: &Request) -> Result<Response, GeneratorError> {
        let timeout = self.timeout;
        let conn = self
            .conn
            .as_mut()
            .ok_or_else(|| GeneratorError::Protocol("not connected".into()))?;
        let out = conn.roundtrip(req, timeout);
        if out.is_err() {
            // The stream is in an unknown state; drop (and kill) it.
            self.conn = None;
        }
        out
    }

    fn call(&mut self, req: Request) -> Result<Response, GeneratorError> {
        let first = match self.send(&req) {
            Ok(resp) => return resp.into_result(),
            Err(e) => e,
        };
        if self.restarted {
            return Err(first);
        }
        warn!("remote generator failed: {first}");
        self.restart()?;
        self.send(&req)?.into_result()
    }
}

impl Generator for RemoteGenerator {
    fn name(&self) -> &str {
        "remote"
    }

    fn decode(&mut self, sources: &[String], decoding: Decoding) -> Result<Vec<String>, GeneratorError> {
        let resp = self.call(Request::generate(sources, decoding))?;
        let outputs = resp
            .outputs
            .ok_or_else(|| GeneratorError::Protocol("generate response without outputs".into()))?;
        if outputs.len() != sources.len() {
            return Err(GeneratorError::Protocol(format!(
                "{} outputs for {} inputs",
                outputs.len(),
                sources.len()
            )));
        }
        Ok(outputs)
    }

    fn train_weighted(&mut self, sources: &[String], targets: &[String], weight: f64) -> Result<f64, GeneratorError> {
        check_batch(sources, targets)?;
        let resp = self.call(Request::train(sources, targets, weight))?;
        match resp.loss {
            Some(l) if l.is_finite() && l >= 0.0 => Ok(l),
            other => Err(GeneratorError::Protocol(format!("invalid loss {other:?}"))),
        }
    }

    /// Remote parameters are not copied: pseudo targets for a batch are
    /// generated before the joint train step, which gives the same isolation.
    fn snapshot(&mut self) -> Result<(), GeneratorError> {
        self.snapshot = true;
        Ok(())
    }

    fn restore(&mut self) -> Result<(), GeneratorError> {
        if !std::mem::take(&mut self.snapshot) {
            return Err(GeneratorError::NoSnapshot);
        }
        Ok(())
    }

    fn save(&mut self, tag: &str) -> Result<(), GeneratorError> {
        self.call(Request::Save { tag: tag.to_string() })?;
        self.last_checkpoint = Some(tag.to_string());
        Ok(())
    }

    fn load(&mut self, tag: &str) -> Result<(), GeneratorError> {
        self.call(Request::Load { tag: tag.to_string() })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    fn sh(script: &str) -> Transport {
        Transport::Child {
            program: "sh".into(),
            args: vec!["-c".into(), script.into()],
        }
    }

    #[test]
    fn command_parsing() {
        assert_eq!(
            Transport::command("python -m side --x 1").unwrap(),
            Transport::Child {
                program: "python".into(),
                args: vec!["-m".into(), "side".into(), "--x".into(), "1".into()],
            }
        );
        assert!(Transport::command("  ").is_err());
    }

    #[test]
    fn exiting_server_is_a_protocol_error() {
        let err = RemoteGenerator::connect(sh("exit 0"), Duration::from_secs(5)).err().unwrap();
        assert!(matches!(err, GeneratorError::Protocol(_)), "{err}");
    }

    #[test]
    fn silent_server_times_out() {
        let t = Instant::now();
        let err = RemoteGenerator::connect(sh("sleep 30"), Duration::from_millis(300))
            .err()
            .unwrap();
        assert!(matches!(err, GeneratorError::Timeout(_)), "{err}");
        assert!(t.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let err = RemoteGenerator::connect(sh(r#"read l; echo '{"ok":true,"version":7}'"#), Duration::from_secs(5))
            .err()
            .unwrap();
        assert!(matches!(err, GeneratorError::Protocol(_)), "{err}");
    }

    #[test]
    fn dies_after_handshake_restarts_once_then_fails() {
        let script = r#"read l; echo '{"ok":true,"version":1}'; read l; exit 0"#;
        let mut g = RemoteGenerator::connect(sh(script), Duration::from_secs(5)).unwrap();
        let err = g.generate(&["x".to_string()], 1).unwrap_err();
        assert!(g.restarted());
        assert!(matches!(err, GeneratorError::Protocol(_)), "{err}");
        // No second restart.
        assert!(g.generate(&["x".to_string()], 1).is_err());
    }

    #[test]
    fn scripted_round_trip() {
        let script = r#"read l; echo '{"ok":true,"version":1}'; read l; echo '{"ok":true,"outputs":["hi there"]}'; read l; echo '{"ok":true,"loss":0.5}'"#;
        let mut g = RemoteGenerator::connect(sh(script), Duration::from_secs(5)).unwrap();
        assert_eq!(g.generate(&["hi there".to_string()], 5).unwrap(), vec!["hi there"]);
        assert_eq!(g.train_step(&["a".to_string()], &["b".to_string()]).unwrap(), 0.5);
        assert!(!g.restarted());
    }
}
